"""CSV and manifest output.

All CSVs are comma separated with LF line ends and unquoted numeric or
identifier fields.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__

MANIFEST_NAME = "manifest.json"


def format_eval(x: float) -> str:
    """Scientific notation with 6 significant digits, e.g. ``-5.07812E-01``."""
    return f"{x:.5E}"


def _write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        w.writerows(rows)
    return path


def iteration_header(n_devices: int) -> list[str]:
    ge = ["ge"] if n_devices == 1 else [f"ge_D{d + 1}" for d in range(n_devices)]
    return ["Ind", "Eval", "n_POI", *ge]


def emit_iteration_csv(records, out_dir, n_devices: int | None = None) -> list[Path]:
    """One ``iteration_NNN.csv`` per record, rows best first."""
    out = []
    for rec in records:
        k = n_devices or len(rec.best.cached_ge)
        rows = [[i + 1, format_eval(ind.cached_eval), ind.n_poi, *ind.cached_ge]
                for i, ind in enumerate(rec.individuals)]
        out.append(_write_rows(Path(out_dir) / f"iteration_{rec.iteration:03d}.csv",
                               iteration_header(k), rows))
    return out


def emit_ge_curve_csv(result, path) -> Path:
    """Rank of the correct key after each attack trace."""
    rows = [[i + 1, int(r)] for i, r in enumerate(result.ge_curve)]
    return _write_rows(path, ["n_traces_used", "rank"], rows)


def emit_graphic_csv(g, path) -> Path:
    rows = [[i, repr(float(v))] for i, v in enumerate(g.values)]
    return _write_rows(path, ["sample_index", "value"], rows)


def emit_best_csv(records, path) -> Path:
    """Best individual per iteration with its POI list (space separated)."""
    rows = [[r.iteration, format_eval(r.best_eval), r.best.n_poi,
             " ".join(str(i) for i in r.best.poi)] for r in records]
    return _write_rows(path, ["iteration", "Eval", "n_POI", "poi"], rows)


def emit_doe_csv(runs, path) -> Path:
    n_dev = len(runs[0].ge) if runs else 1
    ge = ["ge"] if n_dev == 1 else [f"ge_D{d + 1}" for d in range(n_dev)]
    rows = [[r.config.index, *(repr(x) for x in r.config.levels), r.n_poi, *r.ge,
             format_eval(r.eval)] for r in runs]
    return _write_rows(path, ["exp", "A", "B", "C", "n_POI", *ge, "Eval"], rows)


def emit_effects_csv(table, path) -> Path:
    rows = [[name, format_eval(v)] for name, v in table.effects.items()]
    return _write_rows(path, ["effect", "value"], rows)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Everything needed to replay a CLI run."""

    subcommand: str
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    tool_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None

    def finish(self):
        self.finished = _now()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        data = json.loads(path.read_text())
        return cls(**data)


def input_digests(paths: Sequence) -> dict:
    return {str(p): file_digest(p) for p in paths}
