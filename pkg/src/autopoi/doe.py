"""Two-level full-factorial designs over three search settings.

Runs are listed with factor A changing slowest and C fastest, so run 1 is
all-low and run 8 is all-high.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .eda import EDAConfig, EvalConfig, run_eda

log = logging.getLogger(__name__)

EFFECT_NAMES = ("A", "B", "C", "AB", "AC", "BC", "ABC")


@dataclass(frozen=True)
class FactorSpec:
    """A factor and the config field it sets.

    ``binder`` is ``"eda.<field>"`` or ``"eval.<field>"``.
    """

    name: str
    low: float
    high: float
    binder: str

    def __post_init__(self):
        if self.low == self.high:
            raise ValueError(f"factor {self.name}: low and high must differ")
        target, _, attr = self.binder.partition(".")
        fields = {"eda": EDAConfig, "eval": EvalConfig}.get(target)
        if fields is None or attr not in fields.__dataclass_fields__:
            raise ValueError(f"factor {self.name}: unknown binder {self.binder!r}")


@dataclass(frozen=True)
class RunConfig:
    index: int
    signs: tuple[int, int, int]
    levels: tuple[float, float, float]
    eda: EDAConfig
    eval: EvalConfig


@dataclass(frozen=True)
class EffectTable:
    responses: np.ndarray
    effects: dict[str, float]

    def __getitem__(self, name: str) -> float:
        return self.effects[name]


def sign_matrix() -> np.ndarray:
    """(8, 3) matrix of -1/+1 with column A slowest."""
    return np.array(list(itertools.product((-1, 1), repeat=3)), dtype=int)


def _effect_columns() -> dict[str, np.ndarray]:
    s = sign_matrix()
    cols = {"A": s[:, 0], "B": s[:, 1], "C": s[:, 2]}
    for name in EFFECT_NAMES[3:]:
        cols[name] = np.prod([cols[c] for c in name], axis=0)
    return cols


def compute_effects(responses: Sequence[float]) -> EffectTable:
    """Mean response at +1 minus mean response at -1 for each column."""
    r = np.asarray(responses, dtype=np.float64)
    if r.shape != (8,):
        raise ValueError(f"need 8 responses, got shape {r.shape}")
    effects = {name: float(r[col > 0].mean() - r[col < 0].mean())
               for name, col in _effect_columns().items()}
    return EffectTable(r, effects)


def _coerce(cfg, attr, value):
    current = getattr(cfg, attr)
    if isinstance(current, int) and not isinstance(current, bool):
        if value != int(value):
            raise ValueError(f"{attr} needs an integer level, got {value}")
        value = int(value)
    changes = {attr: value}
    # keep the default half-population selection when R changes
    if attr == "population_size" and cfg.n_selected == cfg.population_size // 2:
        changes["n_selected"] = None
    return replace(cfg, **changes)


def full_factorial_plan(factors: Sequence[FactorSpec], eda: EDAConfig,
                        ecfg: EvalConfig) -> list[RunConfig]:
    if len(factors) != 3:
        raise ValueError("a 2^3 design needs exactly 3 factors")
    plan = []
    for i, signs in enumerate(sign_matrix()):
        e, v = eda, ecfg
        levels = []
        for f, s in zip(factors, signs):
            level = f.high if s > 0 else f.low
            levels.append(level)
            target, _, attr = f.binder.partition(".")
            if target == "eda":
                e = _coerce(e, attr, level)
            else:
                v = _coerce(v, attr, level)
        plan.append(RunConfig(i + 1, tuple(int(x) for x in signs), tuple(levels), e, v))
    return plan


@dataclass(frozen=True)
class DoeRun:
    config: RunConfig
    eval: float
    n_poi: int
    ge: tuple[int, ...]


def run_doe(plan: Sequence[RunConfig], profiling, attacks, model, graphic=None,
            response: str = "eval",
            on_run: Callable[[DoeRun], None] | None = None) -> tuple[EffectTable, list[DoeRun]]:
    """Run every configuration and compute effects on the chosen response.

    The response is taken from the best individual of the final iteration:
    ``"eval"`` uses its Eval, ``"ge"`` its mean rank over devices.
    """
    if response not in ("eval", "ge"):
        raise ValueError("response must be 'eval' or 'ge'")
    runs = []
    for rc in plan:
        try:
            records = run_eda(rc.eda, rc.eval, profiling, attacks, model, graphic=graphic)
        except Exception as exc:
            raise RuntimeError(f"DoE run {rc.index} failed: {exc}") from exc
        best = records[-1].best
        run = DoeRun(rc, best.cached_eval, best.n_poi, tuple(best.cached_ge))
        log.info("DoE run %d levels=%s eval=%.6g", rc.index, rc.levels, run.eval)
        runs.append(run)
        if on_run is not None:
            on_run(run)
    values = [r.eval if response == "eval" else float(np.mean(r.ge)) for r in runs]
    return compute_effects(values), runs
