"""Command-line entry point: ``autopoi <subcommand> [flags] [--config FILE]``.

Every option can be given as a flag or in a config file (``key = value``
lines under ``[section]`` headers, ``#`` comments). Flags win over the file,
the file wins over defaults. Seeds fall back to ``SCA_SEED``.

Exit status: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .aes import LeakageModel, ModelKind
from .doe import FactorSpec, full_factorial_plan, run_doe
from .eda import (
    Aggregation,
    AttackMode,
    EDAConfig,
    EvalConfig,
    Evaluator,
    InitKind,
    run_eda,
)
from .poi import GraphicMethod, compute_graphic, top_k_select
from .report import (
    MANIFEST_NAME,
    RunManifest,
    emit_best_csv,
    emit_doe_csv,
    emit_effects_csv,
    emit_ge_curve_csv,
    emit_graphic_csv,
    input_digests,
)
from .sim import DeviceProfile, Implementation, SimConfig, make_clone_family, simulate
from .template import MaskedProfile, TemplateError, build_templates, profiling_labels, rank_keys
from .traces import PreprocessSpec, SCTFError, preprocess, read_sctf, write_sctf

log = logging.getLogger("autopoi")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    parts = [p for p in str(text).replace(",", " ").split() if p]
    return tuple(int(p) for p in parts)


def _path_list(text) -> tuple[str, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(str(v) for v in text)
    return tuple(p for p in str(text).replace(",", " ").split() if p)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text in (None, "", "none", "None") else int(text)


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


@dataclass(frozen=True)
class Opt:
    name: str
    section: str
    parse: Callable[[Any], Any]
    default: Any = None
    help: str = ""
    choices: tuple | None = None
    required: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _choices(enum_cls):
    return tuple(m.value for m in enum_cls)


SEED = Opt("seed", "run", _opt_int, None, "random seed (default: $SCA_SEED or 0)")
MODEL = [
    Opt("model", "model", str, "hw-sbox", "leakage model", _choices(ModelKind)),
    Opt("byte", "model", int, 0, "target byte index"),
    Opt("ct_pair", "model", _int_list, (), "ciphertext byte pair b1,b2 for hd-last-round"),
]
DEVICE = [
    Opt("gain", "device", float, 1.0, "leak gain"),
    Opt("offset", "device", float, 0.0, "DC offset"),
    Opt("noise", "device", float, 1.0, "Gaussian noise sigma"),
    Opt("leak_value", "device", _int_list, (10,), "samples leaking the (masked) Sbox output"),
    Opt("leak_mask", "device", _int_list, (20,), "samples leaking the output mask (masked only)"),
    Opt("baseline_seed", "device", int, 0, "seed of the baseline waveform"),
    Opt("baseline_amplitude", "device", float, 1.0, "baseline waveform amplitude"),
    Opt("n_devices", "device", int, 1, "size of the clone family"),
    Opt("device_index", "device", int, 1, "which clone to acquire (1 = base device)"),
    Opt("gain_jitter", "device", float, 0.0, "relative gain spread across clones"),
    Opt("offset_jitter", "device", float, 0.0, "absolute offset spread across clones"),
    Opt("noise_jitter", "device", float, 0.0, "relative noise spread across clones"),
    Opt("variation_seed", "device", int, 0, "seed of the clone perturbations"),
]
EVAL = [
    Opt("cf", "eval", float, 10.0, "correction factor"),
    Opt("eval_n_samples", "eval", _opt_int, None, "n_samples in the fitness (default: trace length)"),
    Opt("aggregation", "eval", str, "product", "multi-device rank aggregation", _choices(Aggregation)),
    Opt("n_attack", "eval", _opt_int, None, "attack traces per device (default: all)"),
    Opt("attack_mode", "eval", str, "plain", "template attack variant", _choices(AttackMode)),
]
SEARCH = [
    Opt("population", "eda", int, 20, "population size R"),
    Opt("selected", "eda", _opt_int, None, "selected individuals N (default R/2)"),
    Opt("iterations", "eda", int, 10, "number of generations after the initial one"),
    Opt("init", "eda", str, "uniform", "initial population", _choices(InitKind)),
    Opt("init_p", "eda", float, 0.1, "initial Bernoulli probability"),
    Opt("graphic_method", "eda", str, "sost", "graphic for graphic init", _choices(GraphicMethod)),
    Opt("elitism", "eda", _bool, True, "keep the best individual across generations"),
    Opt("p_floor", "eda", _opt_float, None, "lower marginal clamp (default 1/T)"),
    Opt("p_ceil", "eda", _opt_float, None, "upper marginal clamp (default 1-1/T)"),
    Opt("entropy_stop", "eda", _opt_float, None, "stop when max marginal entropy drops below"),
]
PREPROCESS = [
    Opt("zero_mean", "preprocess", _bool, False, "subtract each trace's mean"),
    Opt("lowpass_window", "preprocess", int, 1, "centered moving-average width (1 = off)"),
    Opt("standardize", "preprocess", _bool, False, "z-score every sample index within each set"),
]
INPUTS = [
    Opt("profile", "inputs", str, None, "profiling SCTF file", required=True),
    Opt("attack", "inputs", _path_list, None, "attack SCTF file(s), comma separated", required=True),
]

COMMANDS: dict[str, list[Opt]] = {
    "simulate": [
        Opt("impl", "simulate", str, "unprotected", "implementation", _choices(Implementation)),
        Opt("n_traces", "simulate", int, 1000, "number of traces"),
        Opt("n_samples", "simulate", int, 100, "samples per trace"),
        Opt("byte", "simulate", int, 0, "leaking byte index"),
        Opt("key", "simulate", str, "random",
            "'random' (fresh key per trace), 'fixed' (one key from the seed) or 32 hex digits"),
        Opt("out", "simulate", str, None, "output SCTF file", required=True),
        SEED, *DEVICE,
    ],
    "poi-graph": [
        Opt("traces", "inputs", str, None, "SCTF file with known keys", required=True),
        Opt("method", "poi-graph", str, "sost", "graphic", _choices(GraphicMethod)),
        Opt("top_k", "poi-graph", int, 0, "also print the k highest samples"),
        Opt("out", "poi-graph", str, None, "output CSV", required=True),
        *MODEL, *PREPROCESS,
    ],
    "attack": [
        *INPUTS,
        Opt("poi", "attack", _int_list, None, "POI indices, comma separated", required=True),
        Opt("n_attack", "attack", _opt_int, None, "attack traces to use (default: all)"),
        Opt("attack_mode", "attack", str, "plain", "template attack variant", _choices(AttackMode)),
        Opt("correct_key", "attack", _opt_int, None, "correct key byte (default: from metadata)"),
        Opt("out", "attack", str, None, "GE-curve CSV", required=True),
        SEED, *MODEL, *PREPROCESS,
    ],
    "eda": [*INPUTS, *MODEL, *PREPROCESS, *SEARCH, *EVAL, SEED,
            Opt("out", "run", str, None, "output directory", required=True)],
    "doe": [
        *INPUTS, *MODEL, *PREPROCESS, *SEARCH, *EVAL, SEED,
        Opt("factor_a", "doe", str, "eval.correction_factor:1:10", "factor A as binder:low:high"),
        Opt("factor_b", "doe", str, "eda.n_iterations:5:10", "factor B as binder:low:high"),
        Opt("factor_c", "doe", str, "eda.population_size:10:20", "factor C as binder:low:high"),
        Opt("response", "doe", str, "eval", "response recorded per run", ("eval", "ge")),
        Opt("out", "run", str, None, "output directory", required=True),
    ],
}


COMMAND_HELP = {
    "simulate": "write simulated traces to an SCTF file",
    "poi-graph": "compute a POI selection graphic (CSV)",
    "attack": "template attack with a given POI set (GE-curve CSV)",
    "eda": "search POIs with the UMDA",
    "doe": "2^3 factorial design over search settings",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="autopoi", description="POI selection for template attacks with a UMDA search.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name, help=COMMAND_HELP[name])
        sp.add_argument("--config", help="config file with [section] key = value lines")
        for o in opts:
            text = o.help
            if not o.required and "default" not in text:
                text += f" (default {o.default if o.default not in ((), None) else 'none'})"
            sp.add_argument(o.flag, dest=o.name, default=None, type=str, help=text,
                            choices=None if o.parse is _bool else o.choices,
                            metavar="BOOL" if o.parse is _bool else None)
    rp = sub.add_parser("replay", help="rerun a command from its manifest")
    rp.add_argument("manifest", help="manifest file or output directory")
    rp.add_argument("--out", default=None, help="write outputs here instead")
    return p


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise UsageError(f"config parse error in {path}: {exc}")
    return cp


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge flags, config file and defaults into one plain dict."""
    opts = COMMANDS[command]
    cp = read_config(args.config) if getattr(args, "config", None) else None
    from_file: dict[str, tuple[str, str]] = {}
    if cp is not None:
        known_sections = {o.section for o in opts}
        for section in cp.sections():
            if section not in known_sections and section != command:
                raise UsageError(f"unknown config section [{section}] for '{command}'")
            for key, value in cp.items(section):
                name = key.replace("-", "_")
                match = [o for o in opts if o.name == name and section in (o.section, command)]
                if not match:
                    raise UsageError(f"unknown config key '{key}' in section [{section}]")
                from_file[name] = (f"[{section}] {key}", value)
    out = {}
    for o in opts:
        raw, where = getattr(args, o.name, None), o.flag
        if raw is None and o.name in from_file:
            where, raw = from_file[o.name]
        if raw is None:
            if o.required:
                raise UsageError(f"missing required option '{o.flag}'")
            out[o.name] = o.default
            continue
        if o.choices is not None and str(raw) not in o.choices:
            raise UsageError(f"{where}: invalid value {raw!r} (choose from {', '.join(o.choices)})")
        try:
            out[o.name] = o.parse(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{where}: invalid value {raw!r} ({exc})")
    if "seed" in out and out["seed"] is None:
        env = os.environ.get("SCA_SEED")
        try:
            out["seed"] = int(env) if env not in (None, "") else 0
        except ValueError:
            raise UsageError(f"SCA_SEED: invalid value {env!r}")
    return _jsonable(out)


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# --- helpers ------------------------------------------------------------------

def _load(path, o=None):
    if not Path(path).is_file():
        raise DataError(f"input file not found: {path}")
    ts = read_sctf(path)
    if o is None:
        return ts
    spec = _preprocess_spec(o)
    if spec == PreprocessSpec(False, False, 1):
        return ts
    return preprocess(ts, spec)


def _preprocess_spec(o: dict) -> PreprocessSpec:
    try:
        return PreprocessSpec(o["zero_mean"], o["standardize"], o["lowpass_window"])
    except ValueError as exc:
        raise UsageError(str(exc))


def _preprocess_flags(o: dict) -> dict:
    return {"preprocess": {k: o[k] for k in ("zero_mean", "lowpass_window", "standardize")}}


def _model(o: dict) -> LeakageModel:
    pair = tuple(o["ct_pair"]) or None
    try:
        return LeakageModel(ModelKind(o["model"]), o["byte"], ciphertext_byte_pair=pair)
    except ValueError as exc:
        raise UsageError(f"--model/--byte/--ct-pair: {exc}")


def _configs(o: dict, n_samples: int) -> tuple[EDAConfig, EvalConfig]:
    try:
        ecfg = EvalConfig(correction_factor=o["cf"], eval_n_samples=o["eval_n_samples"],
                          ge_aggregation=o["aggregation"], n_attack=o["n_attack"],
                          attack_mode=o["attack_mode"], seed=o["seed"])
        cfg = EDAConfig(population_size=o["population"], n_selected=o["selected"],
                        n_iterations=o["iterations"], seed=o["seed"], init=o["init"],
                        init_p=o["init_p"], elitism=o["elitism"], p_floor=o["p_floor"],
                        p_ceil=o["p_ceil"], entropy_stop=o["entropy_stop"])
        cfg.clamp_bounds(n_samples)
    except ValueError as exc:
        raise UsageError(str(exc))
    return cfg, ecfg


def _graphic(o, profiling, model, cfg):
    if cfg.init is not InitKind.FROM_GRAPHIC:
        return None
    labels = profiling_labels(profiling, model)
    return compute_graphic(o["graphic_method"], profiling, labels)


def _manifest(command: str, o: dict, inputs, seeds: dict, flags=None) -> RunManifest:
    return RunManifest(command, o, seeds, input_digests(inputs), flags or {})


def _sidecar(path) -> Path:
    return Path(str(path) + ".manifest.json")


# --- subcommands ----------------------------------------------------------------

def cmd_simulate(o: dict) -> tuple[RunManifest, Path]:
    try:
        base = DeviceProfile(gain=o["gain"], offset=o["offset"], noise_sigma=o["noise"],
                             leak_positions_value=tuple(o["leak_value"]),
                             leak_positions_mask=tuple(o["leak_mask"]),
                             baseline_seed=o["baseline_seed"],
                             baseline_amplitude=o["baseline_amplitude"])
        if not 1 <= o["device_index"] <= o["n_devices"]:
            raise ValueError("--device-index must be in 1..--n-devices")
        family = make_clone_family(base, o["n_devices"], o["variation_seed"], o["gain_jitter"],
                                   o["offset_jitter"], o["noise_jitter"])
        key = o["key"]
        if key == "random":
            fixed = None
        elif key == "fixed":
            fixed = np.random.default_rng([o["seed"], 0x4B]).integers(0, 256, 16, dtype=np.uint8).tobytes()
        else:
            fixed = bytes.fromhex(key)
        cfg = SimConfig(o["impl"], o["n_traces"], fixed, o["byte"], o["n_samples"], o["seed"])
    except ValueError as exc:
        raise UsageError(str(exc))
    ts = simulate(family[o["device_index"] - 1], cfg)
    write_sctf(ts, o["out"])
    print(f"wrote {ts.n_traces} traces x {ts.n_samples} samples to {o['out']}")
    m = _manifest("simulate", o, [], {"seed": o["seed"], "variation_seed": o["variation_seed"]})
    m.finish()
    return m, _sidecar(o["out"])


def cmd_poi_graph(o: dict) -> tuple[RunManifest, Path]:
    ts = _load(o["traces"], o)
    model = _model(o)
    g = compute_graphic(o["method"], ts, profiling_labels(ts, model))
    emit_graphic_csv(g, o["out"])
    if o["top_k"]:
        print("top samples:", ",".join(str(i) for i in top_k_select(g, o["top_k"]).poi))
    print(f"wrote {o['method']} graphic to {o['out']}")
    m = _manifest("poi-graph", o, [o["traces"]], {}, _preprocess_flags(o))
    m.finish()
    return m, _sidecar(o["out"])


def cmd_attack(o: dict) -> tuple[RunManifest, Path]:
    if len(o["attack"]) != 1:
        raise UsageError("--attack takes exactly one file for this command")
    profiling = _load(o["profile"], o)
    attack = _load(o["attack"][0], o)
    model = _model(o)
    poi = np.asarray(o["poi"], dtype=np.intp)
    if o["n_attack"] is not None:
        if not 1 <= o["n_attack"] <= attack.n_traces:
            raise UsageError(f"--n-attack must be in 1..{attack.n_traces}")
        rng = np.random.default_rng(o["seed"])
        attack = attack.subset(np.sort(rng.choice(attack.n_traces, o["n_attack"], replace=False)))
    if AttackMode(o["attack_mode"]) is AttackMode.MASK_MARGINAL:
        result = MaskedProfile(profiling, o["byte"]).rank(attack, poi, o["correct_key"])
    else:
        result = rank_keys(attack, build_templates(profiling, model, poi), o["correct_key"])
    emit_ge_curve_csv(result, o["out"])
    print(f"correct key {result.correct_key:#04x} rank {result.correct_rank} "
          f"after {attack.n_traces} traces")
    m = _manifest("attack", o, [o["profile"], *o["attack"]], {"seed": o["seed"]},
                  {"rank_base": 1, **_preprocess_flags(o)})
    m.finish()
    return m, _sidecar(o["out"])


def _eda_inputs(o):
    profiling = _load(o["profile"], o)
    attacks = [_load(p, o) for p in o["attack"]]
    model = _model(o)
    cfg, ecfg = _configs(o, profiling.n_samples)
    return profiling, attacks, model, cfg, ecfg


def _flags(o: dict, ecfg: EvalConfig, n_samples: int) -> dict:
    return {"rank_base": 1, "ge_aggregation": ecfg.ge_aggregation.value,
            "eval_n_samples": ecfg.eval_n_samples or n_samples,
            "attack_mode": ecfg.attack_mode.value, **_preprocess_flags(o)}


def cmd_eda(o: dict) -> tuple[RunManifest, Path]:
    profiling, attacks, model, cfg, ecfg = _eda_inputs(o)
    out = Path(o["out"])
    graphic = _graphic(o, profiling, model, cfg)
    evaluator = Evaluator(profiling, attacks, model, ecfg)
    records = run_eda(cfg, ecfg, profiling, attacks, model, graphic=graphic, evaluator=evaluator,
                      out_dir=out)
    emit_best_csv(records, out / "best.csv")
    best = records[-1].best
    print(f"best: Eval {best.cached_eval:.5E}  n_POI {best.n_poi}  ge {list(best.cached_ge)}")
    print(f"poi: {','.join(str(i) for i in best.poi)}")
    m = _manifest("eda", o, [o["profile"], *o["attack"]], {"seed": o["seed"]},
                  _flags(o, ecfg, profiling.n_samples))
    m.finish()
    return m, out / MANIFEST_NAME


def _factor(name: str, text: str) -> FactorSpec:
    try:
        binder, low, high = text.rsplit(":", 2)
        return FactorSpec(name, float(low), float(high), binder.strip())
    except ValueError as exc:
        raise UsageError(f"--factor-{name.lower()}: {exc}")


def cmd_doe(o: dict) -> tuple[RunManifest, Path]:
    profiling, attacks, model, cfg, ecfg = _eda_inputs(o)
    out = Path(o["out"])
    factors = [_factor(n, o[f"factor_{n.lower()}"]) for n in "ABC"]
    try:
        plan = full_factorial_plan(factors, cfg, ecfg)
    except ValueError as exc:
        raise UsageError(str(exc))
    graphic = _graphic(o, profiling, model, cfg)
    table, runs = run_doe(plan, profiling, attacks, model, graphic=graphic, response=o["response"])
    emit_doe_csv(runs, out / "doe_runs.csv")
    emit_effects_csv(table, out / "doe_effects.csv")
    for name, v in table.effects.items():
        print(f"{name:>3} {v:+.5E}")
    m = _manifest("doe", o, [o["profile"], *o["attack"]], {"seed": o["seed"]},
                  _flags(o, ecfg, profiling.n_samples))
    m.finish()
    return m, out / MANIFEST_NAME


HANDLERS = {"simulate": cmd_simulate, "poi-graph": cmd_poi_graph, "attack": cmd_attack,
            "eda": cmd_eda, "doe": cmd_doe}


def _replay(args) -> tuple[RunManifest, Path]:
    path = Path(args.manifest)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    m = RunManifest.read(path)
    if m.subcommand not in HANDLERS:
        raise DataError(f"manifest has unknown subcommand {m.subcommand!r}")
    o = dict(m.config)
    if args.out is not None:
        o["out"] = args.out
    current = input_digests([p for p in m.inputs if Path(p).is_file()])
    for p, digest in m.inputs.items():
        if current.get(p) != digest:
            log.warning("input %s differs from the recorded one", p)
    return HANDLERS[m.subcommand](o)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if args.command == "replay":
            m, target = _replay(args)
        else:
            m, target = HANDLERS[args.command](resolve(args.command, args))
        m.write(target)
        return 0
    except UsageError as exc:
        print(f"autopoi: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, SCTFError, TemplateError, FileNotFoundError, ValueError) as exc:
        print(f"autopoi: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
