"""UMDA search over binary POI selections.

Each generation: evaluate every candidate with a template attack, keep the
best ``N`` of ``R``, re-estimate one Bernoulli marginal per sample from them
and sample the next generation from those marginals.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .aes import LeakageModel
from .individual import Individual
from .poi import SelectionGraphic, normalize
from .template import (
    N_KEYS,
    MaskedProfile,
    ProfilingModel,
    TemplateError,
    _resolve_correct_key,
    class_log_likelihoods,
    key_ranks,
)
from .traces import TraceSet

log = logging.getLogger(__name__)

MAX_RESAMPLES = 16


class Aggregation(str, enum.Enum):
    PRODUCT = "product"
    SUM = "sum"


class AttackMode(str, enum.Enum):
    PLAIN = "plain"
    MASK_MARGINAL = "mask-marginal"


class InitKind(str, enum.Enum):
    UNIFORM = "uniform"
    FROM_GRAPHIC = "graphic"


@dataclass(frozen=True)
class EvalConfig:
    """How a candidate is scored.

    ``eval_n_samples`` None means the trace length. ``n_attack`` None uses
    every trace of each attack set, otherwise a fixed random subset drawn
    once with ``seed``.
    """

    correction_factor: float = 10.0
    eval_n_samples: int | None = None
    ge_aggregation: Aggregation = Aggregation.PRODUCT
    n_attack: int | None = None
    attack_mode: AttackMode = AttackMode.PLAIN
    key_space: int = N_KEYS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ge_aggregation", Aggregation(self.ge_aggregation))
        object.__setattr__(self, "attack_mode", AttackMode(self.attack_mode))
        if self.correction_factor <= 0:
            raise ValueError("correction_factor must be > 0")
        if self.eval_n_samples is not None and self.eval_n_samples < 1:
            raise ValueError("eval_n_samples must be >= 1")


@dataclass(frozen=True)
class EDAConfig:
    """Search settings. ``n_selected`` None means half the population.

    ``init_p`` is the Bernoulli probability for uniform initialization and
    the default probability scaled by the graphic for graphic seeding.
    ``p_floor``/``p_ceil`` None mean ``1/T`` and ``1 - 1/T``.
    """

    population_size: int = 20
    n_selected: int | None = None
    n_iterations: int = 10
    seed: int = 0
    init: InitKind = InitKind.UNIFORM
    init_p: float = 0.1
    elitism: bool = True
    p_floor: float | None = None
    p_ceil: float | None = None
    entropy_stop: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "init", InitKind(self.init))
        if self.n_selected is None:
            object.__setattr__(self, "n_selected", max(1, self.population_size // 2))
        if not 1 <= self.n_selected < self.population_size:
            raise ValueError(f"need 1 <= n_selected < population_size, got "
                             f"{self.n_selected}/{self.population_size}")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if not 0 < self.init_p < 1:
            raise ValueError("init_p must be in (0, 1)")

    def clamp_bounds(self, length: int) -> tuple[float, float]:
        lo = 1.0 / length if self.p_floor is None else self.p_floor
        hi = 1.0 - 1.0 / length if self.p_ceil is None else self.p_ceil
        if not 0 < lo < hi < 1:
            raise ValueError(f"need 0 < p_floor < p_ceil < 1, got {lo}, {hi}")
        return lo, hi


@dataclass(frozen=True)
class MarginalModel:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or np.any(p > 1):
            raise ValueError("marginals must be a vector of probabilities")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def max_entropy(self) -> float:
        """Largest per-bit binary entropy (bits); small means converged."""
        p = np.clip(self.probs, 1e-300, 1 - 1e-16)
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
        return float(h.max())


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    individuals: tuple[Individual, ...]
    marginals: np.ndarray

    @property
    def best(self) -> Individual:
        return self.individuals[0]

    @property
    def best_eval(self) -> float:
        return self.individuals[0].cached_eval


# --- evaluation ---------------------------------------------------------------

def eval_function(ranks: Sequence[int], n_poi: int, correction_factor: float, n_samples: int,
                  aggregation: Aggregation = Aggregation.PRODUCT, key_space: int = N_KEYS) -> float:
    """Fitness of a candidate from its per-device key ranks (higher is better).

    Ranks are divided by the key space and combined by product or sum; when
    every rank is 1 the result is further scaled by ``n_poi / n_samples`` so
    that successful candidates with fewer POIs win.
    """
    if not ranks:
        raise ValueError("at least one rank is required")
    norm = [r / key_space for r in ranks]
    agg = math.prod(norm) if Aggregation(aggregation) is Aggregation.PRODUCT else math.fsum(norm)
    if all(r == 1 for r in ranks):
        return -correction_factor * (n_poi / n_samples) * agg
    return -correction_factor * agg


class Evaluator:
    """Scores candidates against fixed profiling and attack sets.

    Profiling statistics are computed once; each evaluation only slices
    them, so thousands of candidates stay cheap.
    """

    def __init__(self, profiling: TraceSet, attacks: Sequence[TraceSet], model: LeakageModel,
                 ecfg: EvalConfig, correct_keys: Sequence[int] | None = None):
        if not attacks:
            raise ValueError("at least one attack set is required")
        self.ecfg = ecfg
        self.model = model
        self.n_samples = profiling.n_samples
        self.eval_n_samples = ecfg.eval_n_samples or profiling.n_samples
        if ecfg.attack_mode is AttackMode.MASK_MARGINAL:
            self._masked = MaskedProfile(profiling, model.byte_index)
            self._profile = None
            label_model = self._masked.model
        else:
            self._masked = None
            self._profile = ProfilingModel(profiling, model)
            label_model = model
        rng = np.random.default_rng(ecfg.seed)
        self._devices = []
        for d, ts in enumerate(attacks):
            if ts.n_samples != self.n_samples:
                raise ValueError(f"attack set {d} has {ts.n_samples} samples, profiling {self.n_samples}")
            k_star = _resolve_correct_key(ts, label_model,
                                          None if correct_keys is None else correct_keys[d])
            if ecfg.n_attack is not None and ecfg.n_attack < ts.n_traces:
                ts = ts.subset(np.sort(rng.choice(ts.n_traces, ecfg.n_attack, replace=False)))
            elif ecfg.n_attack is not None and ecfg.n_attack > ts.n_traces:
                raise ValueError(f"attack set {d} has only {ts.n_traces} traces")
            labels = label_model.label_table(ts.field("plaintext"), ts.field("ciphertext"))
            self._devices.append((np.asarray(ts.samples, dtype=np.float64),
                                  labels.astype(np.intp), k_star))

    @property
    def n_devices(self) -> int:
        return len(self._devices)

    def ranks(self, poi: np.ndarray) -> tuple[int, ...]:
        """Correct-key rank on each attack set for the POI indices ``poi``."""
        out = []
        if self._masked is not None:
            _, vpoi, mpoi = self._masked._split(poi)
            for x, labels, k_star in self._devices:
                per = self._masked._scores(x, labels, vpoi, mpoi)
                out.append(int(key_ranks(per.sum(axis=0), k_star)))
            return tuple(out)
        tset = self._profile.template_set(poi)
        for x, labels, k_star in self._devices:
            ll = class_log_likelihoods(x[:, tset.poi], tset.means, tset.variances)
            scores = np.take_along_axis(ll, labels, axis=1).sum(axis=0)
            out.append(int(key_ranks(scores, k_star)))
        return tuple(out)

    def evaluate(self, ind: Individual) -> float:
        """Score ``ind`` (cached). Unbuildable candidates get the worst score."""
        if ind.cached_eval is not None:
            return ind.cached_eval
        cf = self.ecfg.correction_factor
        worst = (self.ecfg.key_space,) * self.n_devices
        if ind.n_poi == 0:
            ind.cached_ge, ind.cached_eval, ind.error = worst, -cf, "empty POI set"
            return ind.cached_eval
        try:
            ranks = self.ranks(ind.poi)
        except TemplateError as exc:
            log.warning("candidate %s scored as worst: %s", ind.digest(), exc)
            ind.cached_ge, ind.cached_eval, ind.error = worst, -cf, str(exc)
            return ind.cached_eval
        ind.cached_ge = ranks
        ind.cached_eval = eval_function(ranks, ind.n_poi, cf, self.eval_n_samples,
                                        self.ecfg.ge_aggregation, self.ecfg.key_space)
        return ind.cached_eval


def evaluate_single(ind: Individual, profiling: TraceSet, attack: TraceSet, model: LeakageModel,
                    ecfg: EvalConfig) -> float:
    return Evaluator(profiling, [attack], model, ecfg).evaluate(ind)


def evaluate_multi(ind: Individual, profiling: TraceSet, attacks: Sequence[TraceSet],
                   model: LeakageModel, ecfg: EvalConfig) -> float:
    """Templates from ``profiling`` (device 1) applied to every attack device."""
    return Evaluator(profiling, attacks, model, ecfg).evaluate(ind)


# --- population operators -----------------------------------------------------

def _draw(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    for _ in range(MAX_RESAMPLES + 1):
        bits = rng.random(probs.size) < probs
        if bits.any():
            return bits
    # an empty selection cannot be evaluated; force one bit where it can occur
    allowed = np.flatnonzero(probs > 0)
    if allowed.size == 0:
        allowed = np.arange(probs.size)
    bits[rng.choice(allowed)] = True
    return bits


def sample_population(m: MarginalModel, population_size: int, seed: int,
                      iteration: int = 0) -> list[Individual]:
    """Independent Bernoulli draws; individual ``j`` uses stream (seed, iteration, j)."""
    probs = m.probs
    return [Individual(_draw(probs, np.random.default_rng([seed, iteration, j])))
            for j in range(population_size)]


def init_uniform(length: int, population_size: int, p: float, seed: int) -> list[Individual]:
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    return sample_population(MarginalModel(np.full(length, p)), population_size, seed, 0)


def graphic_probabilities(g: SelectionGraphic, base_p: float) -> np.ndarray | None:
    """Per-sample initial probabilities ``alpha(n) * base_p`` (None if degenerate)."""
    ng = g if g.normalized else normalize(g)
    if ng.degenerate:
        return None
    return ng.values * base_p


def init_from_graphic(g: SelectionGraphic, population_size: int, base_p: float,
                      seed: int) -> list[Individual]:
    """Seed the population so high-graphic samples are selected more often."""
    probs = graphic_probabilities(g, base_p)
    if probs is None:
        log.info("degenerate selection graphic; falling back to uniform p=%s", base_p)
        return init_uniform(len(g), population_size, base_p, seed)
    return sample_population(MarginalModel(probs), population_size, seed, 0)


def _rank_key(ind: Individual):
    return (-ind.cached_eval, ind.n_poi, ind.bits.tobytes())


def sort_population(pop: Sequence[Individual]) -> list[Individual]:
    """Best first: higher eval, then fewer POIs, then lexicographically smaller bits."""
    if any(ind.cached_eval is None for ind in pop):
        raise ValueError("every individual must be evaluated before ranking")
    return sorted(pop, key=_rank_key)


def select_top_n(pop: Sequence[Individual], n: int) -> list[Individual]:
    if not 1 <= n <= len(pop):
        raise ValueError(f"cannot select {n} of {len(pop)} individuals")
    return sort_population(pop)[:n]


def learn_marginals(selected: Sequence[Individual], p_floor: float, p_ceil: float) -> MarginalModel:
    """Frequency of each selected bit among ``selected``, clamped."""
    if not selected:
        raise ValueError("cannot learn marginals from an empty selection")
    freq = np.mean([ind.bits for ind in selected], axis=0)
    return MarginalModel(np.clip(freq, p_floor, p_ceil))


# --- driver -------------------------------------------------------------------

def _record(iteration: int, pop: Sequence[Individual], probs: np.ndarray) -> IterationRecord:
    ranked = tuple(ind.copy() for ind in sort_population(pop))
    return IterationRecord(iteration, ranked, np.array(probs, dtype=np.float64))


def run_eda(cfg: EDAConfig, ecfg: EvalConfig, profiling: TraceSet, attacks: Sequence[TraceSet],
            model: LeakageModel, graphic: SelectionGraphic | None = None,
            evaluator: Evaluator | None = None, out_dir=None,
            on_iteration: Callable[[IterationRecord], None] | None = None) -> list[IterationRecord]:
    """Run the search and return one record per generation (generation 0 first).

    With ``out_dir`` set, each generation is also written as CSV.
    """
    if evaluator is None:
        evaluator = Evaluator(profiling, attacks, model, ecfg)
    length = profiling.n_samples
    lo, hi = cfg.clamp_bounds(length)
    R, N = cfg.population_size, cfg.n_selected

    if cfg.init is InitKind.FROM_GRAPHIC:
        if graphic is None:
            raise ValueError("graphic initialization needs a selection graphic")
        if len(graphic) != length:
            raise ValueError(f"graphic has {len(graphic)} samples, traces have {length}")
        probs = graphic_probabilities(graphic, cfg.init_p)
        if probs is None:
            probs = np.full(length, cfg.init_p)
        pop = init_from_graphic(graphic, R, cfg.init_p, cfg.seed)
    else:
        probs = np.full(length, cfg.init_p)
        pop = init_uniform(length, R, cfg.init_p, cfg.seed)

    sink = []
    if out_dir is not None:
        from .report import emit_iteration_csv

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        sink.append(lambda rec: emit_iteration_csv([rec], out_dir, evaluator.n_devices))
    if on_iteration is not None:
        sink.append(on_iteration)

    records = []
    best = None
    for it in range(cfg.n_iterations + 1):
        if it > 0:
            model_ = learn_marginals(select_top_n(pop, N), lo, hi)
            probs = model_.probs
            pop = sample_population(model_, R, cfg.seed, it)
            if cfg.elitism and best is not None:
                pop[-1] = best.copy()
        for ind in pop:
            evaluator.evaluate(ind)
        rec = _record(it, pop, probs)
        if best is None or _rank_key(rec.best) < _rank_key(best):
            best = rec.best
        records.append(rec)
        log.info("iteration %d: best eval %.6g (n_poi=%d, ge=%s)", it, rec.best_eval,
                 rec.best.n_poi, rec.best.cached_ge)
        for fn in sink:
            fn(rec)
        if it > 0 and cfg.entropy_stop is not None and MarginalModel(probs).max_entropy() < cfg.entropy_stop:
            log.info("marginals converged at iteration %d", it)
            break
    return records


def best_individual(records: Sequence[IterationRecord]) -> Individual:
    """Best candidate seen in any generation."""
    return min((r.best for r in records), key=_rank_key)
