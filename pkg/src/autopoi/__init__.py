"""Automatic selection of template-attack points of interest with a UMDA search."""

__version__ = "0.1.0"

from .aes import LeakageModel, ModelKind
from .doe import FactorSpec, compute_effects, full_factorial_plan, run_doe
from .eda import (
    Aggregation,
    AttackMode,
    EDAConfig,
    EvalConfig,
    Evaluator,
    eval_function,
    evaluate_multi,
    evaluate_single,
    run_eda,
)
from .individual import Individual
from .poi import GraphicMethod, SelectionGraphic, compute_graphic, normalize, top_k_select
from .sim import DeviceProfile, Implementation, SimConfig, make_clone_family, simulate
from .template import MaskedProfile, build_templates, guessing_entropy, rank_keys
from .traces import TraceSet, read_sctf, write_sctf

__all__ = [
    "Aggregation", "AttackMode", "DeviceProfile", "EDAConfig", "EvalConfig", "Evaluator",
    "FactorSpec", "GraphicMethod", "Implementation", "Individual", "LeakageModel",
    "MaskedProfile", "ModelKind", "SelectionGraphic", "SimConfig", "TraceSet",
    "build_templates", "compute_effects", "compute_graphic", "eval_function",
    "evaluate_multi", "evaluate_single", "full_factorial_plan", "guessing_entropy",
    "make_clone_family", "normalize", "rank_keys", "read_sctf", "run_doe", "run_eda",
    "simulate", "top_k_select", "write_sctf",
]
