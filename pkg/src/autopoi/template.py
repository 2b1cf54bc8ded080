"""Gaussian template attack with diagonal covariance.

Profiling fits one mean/variance vector per class at the selected samples.
The attack accumulates per-trace log-likelihoods for each of the 256 key
hypotheses (uniform key prior) and ranks keys by the total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .aes import HW, SBOX, LeakageModel, ModelKind
from .individual import Individual
from .poi import snr
from .traces import TraceSet

VARIANCE_FLOOR = 1e-12
MIN_CLASS_COUNT = 4
LOG_2PI = math.log(2 * math.pi)
N_KEYS = 256


class TemplateError(ValueError):
    pass


class ClassCoverageError(TemplateError):
    """Some classes have fewer profiling traces than required."""

    def __init__(self, labels, counts, minimum):
        self.labels = tuple(int(x) for x in labels)
        self.counts = tuple(int(x) for x in counts)
        shown = ", ".join(f"{l}:{c}" for l, c in zip(self.labels[:12], self.counts[:12]))
        more = "" if len(self.labels) <= 12 else f" (+{len(self.labels) - 12} more)"
        super().__init__(f"classes under {minimum} profiling traces (label:count) {shown}{more}")


class EmptyPOIError(TemplateError):
    pass


class DimensionMismatchError(TemplateError):
    pass


@dataclass(frozen=True)
class Template:
    class_label: int
    mean: np.ndarray
    variance: np.ndarray
    n_training: int


@dataclass(frozen=True, eq=False)
class TemplateSet:
    """Templates of every class of ``model`` over the samples ``poi``.

    Stored as ``means``/``variances`` arrays of shape ``(n_classes, n_poi)``.
    """

    means: np.ndarray
    variances: np.ndarray
    counts: np.ndarray
    model: LeakageModel
    poi: np.ndarray

    @cached_property
    def templates(self) -> tuple[Template, ...]:
        return tuple(Template(c, self.means[c], self.variances[c], int(self.counts[c]))
                     for c in range(self.means.shape[0]))

    @property
    def individual_length(self) -> int:
        return int(self.poi.max()) + 1

    def __len__(self):
        return self.means.shape[0]


@dataclass(frozen=True, eq=False)
class AttackResult:
    guessing_vector: np.ndarray
    correct_rank: int
    ge_curve: np.ndarray
    log_scores: np.ndarray
    correct_key: int


def _poi_indices(poi) -> np.ndarray:
    if isinstance(poi, Individual):
        idx = poi.poi
    else:
        arr = np.asarray(poi)
        idx = np.flatnonzero(arr) if arr.dtype == bool else arr.astype(np.intp).ravel()
    if idx.size == 0:
        raise EmptyPOIError("no point of interest selected")
    return idx


def profiling_labels(ts: TraceSet, model: LeakageModel, known_key=None) -> np.ndarray:
    """Class labels of profiling traces under their true key."""
    kb = model.key_byte_index
    key = ts.key_byte(kb) if known_key is None else np.uint8(bytes(known_key)[kb])
    return model.labels(ts.field("plaintext"), ts.field("ciphertext"), key)


def _full_class_moments(samples: np.ndarray, labels: np.ndarray, n_classes: int):
    """Counts, means and population variances for every label in range."""
    counts = np.bincount(labels, minlength=n_classes)[:n_classes]
    order = np.argsort(labels, kind="stable")
    xs = samples[order]
    means = np.zeros((n_classes, samples.shape[1]))
    variances = np.zeros_like(means)
    present = np.flatnonzero(counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[present]
    if present.size:
        m = np.add.reduceat(xs, starts, axis=0) / counts[present, None]
        resid = xs - np.repeat(m, counts[present], axis=0)
        means[present] = m
        variances[present] = np.add.reduceat(resid * resid, starts, axis=0) / counts[present, None]
    return counts, means, np.maximum(variances, VARIANCE_FLOOR)


class ProfilingModel:
    """Class means and variances at every sample, fitted once.

    A template set for any POI selection is then a column slice, which
    keeps repeated evaluation inside the search cheap.
    """

    def __init__(self, profiling: TraceSet, model: LeakageModel, known_key=None,
                 min_class_count: int = MIN_CLASS_COUNT, labels=None):
        self.model = model
        self.n_samples = profiling.n_samples
        self.min_class_count = min_class_count
        if labels is None:
            labels = profiling_labels(profiling, model, known_key)
        x = np.asarray(profiling.samples, dtype=np.float64)
        self.counts, self.means, self.variances = _full_class_moments(
            x, np.asarray(labels, dtype=np.intp), model.n_classes)

    def coverage_error(self) -> ClassCoverageError | None:
        short = np.flatnonzero(self.counts < self.min_class_count)
        if short.size:
            return ClassCoverageError(short, self.counts[short], self.min_class_count)
        return None

    def template_set(self, poi) -> TemplateSet:
        idx = _poi_indices(poi)
        if idx.max() >= self.n_samples or idx.min() < 0:
            raise DimensionMismatchError(
                f"POI index {idx.max()} outside traces of {self.n_samples} samples")
        err = self.coverage_error()
        if err is not None:
            raise err
        return TemplateSet(self.means[:, idx], self.variances[:, idx], self.counts,
                           self.model, idx)


def build_templates(profiling: TraceSet, model: LeakageModel, poi, known_key=None,
                    min_class_count: int = MIN_CLASS_COUNT) -> TemplateSet:
    """Fit one diagonal Gaussian template per class of ``model``.

    ``known_key`` overrides the per-trace key metadata (16 bytes).
    """
    idx = _poi_indices(poi)
    return ProfilingModel(profiling, model, known_key, min_class_count).template_set(idx)


def log_gaussian_score(trace_poi_values, tpl: Template) -> float:
    """Log density of a diagonal multivariate normal."""
    t = np.asarray(trace_poi_values, dtype=np.float64)
    var = np.asarray(tpl.variance, dtype=np.float64)
    if t.shape != var.shape:
        raise DimensionMismatchError(f"trace has {t.shape} values, template {var.shape}")
    d = t - tpl.mean
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + d * d / var))


def class_log_likelihoods(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """``out[i, c]`` = log N(x_i; means[c], diag(variances[c])), shape ``(n, C)``."""
    x = np.asarray(x, dtype=np.float64)
    inv = 1.0 / variances
    const = -0.5 * (LOG_2PI * means.shape[1] + np.log(variances).sum(axis=1))
    out = np.empty((x.shape[0], means.shape[0]))
    for c in range(means.shape[0]):
        d = x - means[c]
        out[:, c] = (d * d) @ inv[c]
    return const[None, :] - 0.5 * out


def _resolve_correct_key(attack: TraceSet, model: LeakageModel, correct_key) -> int:
    if correct_key is not None:
        return int(correct_key)
    keys = attack.key_byte(model.key_byte_index)
    if keys.size == 0:
        raise ValueError("empty attack set")
    if np.any(keys != keys[0]):
        raise ValueError("attack traces use different keys; pass correct_key explicitly")
    return int(keys[0])


def key_ranks(scores: np.ndarray, correct_key: int) -> np.ndarray:
    """Rank (1 = best) of ``correct_key`` in each row of ``scores[..., 256]``.

    Equal scores are ordered by ascending key value.
    """
    s = np.asarray(scores)
    star = s[..., correct_key][..., None]
    better = (s > star).sum(axis=-1)
    tied_before = (s[..., :correct_key] == star).sum(axis=-1)
    return 1 + better + tied_before


def guessing_vector(scores: np.ndarray) -> np.ndarray:
    keys = np.arange(scores.size)
    return keys[np.lexsort((keys, -scores))]


def attack_result(per_trace: np.ndarray, correct_key: int) -> AttackResult:
    """Accumulate ``(n_traces, 256)`` per-trace log scores into a result."""
    cum = np.cumsum(per_trace, axis=0)
    final = cum[-1]
    curve = key_ranks(cum, correct_key)
    g = guessing_vector(final)
    return AttackResult(g, int(curve[-1]), curve, final, correct_key)


def per_trace_log_scores(attack: TraceSet, tset: TemplateSet) -> np.ndarray:
    """``log p(t_i | k)`` for every attack trace and key hypothesis."""
    if attack.n_traces == 0:
        raise ValueError("empty attack set")
    if tset.poi.max() >= attack.n_samples:
        raise DimensionMismatchError(
            f"templates use sample {tset.poi.max()}, attack traces have {attack.n_samples}")
    ll = class_log_likelihoods(attack.samples[:, tset.poi], tset.means, tset.variances)
    labels = tset.model.label_table(attack.field("plaintext"), attack.field("ciphertext"))
    return np.take_along_axis(ll, labels.astype(np.intp), axis=1)


def rank_keys(attack: TraceSet, tset: TemplateSet, correct_key=None) -> AttackResult:
    k_star = _resolve_correct_key(attack, tset.model, correct_key)
    return attack_result(per_trace_log_scores(attack, tset), k_star)


def masked_marginal_score(attack: TraceSet, tsets_per_mask, mask_prior, correct_key=None) -> AttackResult:
    """Rank keys with the mask summed out: p(t|k) = sum_m p(t|k, m) p(m)."""
    tsets = list(tsets_per_mask)
    prior = np.asarray(mask_prior, dtype=np.float64)
    if prior.shape != (len(tsets),):
        raise ValueError(f"{prior.size} prior weights for {len(tsets)} template sets")
    if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError(f"mask prior must be a probability vector (sum={prior.sum():.12g})")
    base = tsets[0]
    for t in tsets[1:]:
        if not np.array_equal(t.poi, base.poi):
            raise DimensionMismatchError("all per-mask template sets must share the same POIs")
        if (t.model.kind, t.model.byte_index) != (base.model.kind, base.model.byte_index):
            raise ValueError("all per-mask template sets must share the leakage model")
    k_star = _resolve_correct_key(attack, base.model, correct_key)
    acc = np.full((attack.n_traces, N_KEYS), -np.inf)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
    for t, lp in zip(tsets, log_prior):
        if np.isneginf(lp):
            continue
        acc = np.logaddexp(acc, per_trace_log_scores(attack, t) + lp)
    return attack_result(acc, k_star)


def guessing_entropy(profiling: TraceSet, attack_pool: TraceSet, model: LeakageModel, poi,
                     n_attack: int, n_experiments: int = 1, seed: int = 0,
                     known_key=None, correct_key=None) -> float:
    """Mean rank of the correct key over random draws of ``n_attack`` traces."""
    if n_attack < 1 or n_attack > attack_pool.n_traces:
        raise ValueError(f"cannot draw {n_attack} attack traces from {attack_pool.n_traces}")
    if n_experiments < 1:
        raise ValueError("n_experiments must be >= 1")
    tset = build_templates(profiling, model, poi, known_key)
    k_star = _resolve_correct_key(attack_pool, model, correct_key)
    per = per_trace_log_scores(attack_pool, tset)
    rng = np.random.default_rng(seed)
    ranks = []
    for _ in range(n_experiments):
        idx = rng.choice(attack_pool.n_traces, size=n_attack, replace=False)
        ranks.append(int(key_ranks(per[idx].sum(axis=0), k_star)))
    return float(np.mean(ranks))


# --- masked implementations -------------------------------------------------

def mask_mixture_weights() -> np.ndarray:
    """``W[c, a, b]`` = P(HW(z ^ m) = a, HW(m) = b) for uniform m and HW(z) = c.

    The probability depends on ``z`` only through its Hamming weight.
    """
    w = np.zeros((9, 9, 9))
    m = np.arange(256)
    for c in range(9):
        z = (1 << c) - 1
        np.add.at(w[c], (HW[z ^ m], HW[m]), 1.0 / 256)
    return w


class MaskedProfile:
    """Templates for a masked Sbox output, profiled with known masks.

    Each sample is modelled either by the Hamming weight of the masked
    value or by the Hamming weight of the output mask, whichever has the
    larger profiling SNR. For a mask value ``m`` and key guess ``k`` this
    fixes a template per trace; marginalizing over the 256 masks gives
    ``p(t | k)``.

    ``template_sets`` returns the explicit 256 per-mask template sets for
    :func:`masked_marginal_score`; ``per_trace_log_scores`` computes the same
    mixture grouped by Hamming weights, which is what the search uses.
    """

    def __init__(self, profiling: TraceSet, byte_index: int = 0, known_key=None,
                 min_class_count: int = MIN_CLASS_COUNT):
        m_out = profiling.field("mask_out")
        if m_out is None:
            raise ValueError("masked profiling needs 'mask_out' metadata")
        m_out = m_out[:, 0]
        self.model = LeakageModel(ModelKind.HW_SBOX, byte_index)
        key = (profiling.key_byte(byte_index) if known_key is None
               else np.uint8(bytes(known_key)[byte_index]))
        z = SBOX[profiling.field("plaintext")[:, byte_index] ^ key]
        value_labels = HW[z ^ m_out].astype(np.intp)
        mask_labels = HW[m_out].astype(np.intp)
        hw_model = LeakageModel(ModelKind.HW_SBOX, byte_index)
        self.value = ProfilingModel(profiling, hw_model, min_class_count=min_class_count,
                                    labels=value_labels)
        self.mask = ProfilingModel(profiling, hw_model, min_class_count=min_class_count,
                                   labels=mask_labels)
        self.mask_side = snr(profiling, mask_labels).values > snr(profiling, value_labels).values
        self.n_samples = profiling.n_samples
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(mask_mixture_weights())

    def _split(self, poi):
        idx = _poi_indices(poi)
        if idx.max() >= self.n_samples:
            raise DimensionMismatchError(
                f"POI index {idx.max()} outside traces of {self.n_samples} samples")
        for part in (self.value, self.mask):
            err = part.coverage_error()
            if err is not None:
                raise err
        side = self.mask_side[idx]
        return idx, idx[~side], idx[side]

    def template_sets(self, poi) -> tuple[list[TemplateSet], np.ndarray]:
        """The 256 per-mask template sets and their uniform prior."""
        idx, _, _ = self._split(poi)
        side = self.mask_side[idx]
        sets = []
        for m in range(256):
            means = self.value.means[:, idx].copy()
            variances = self.value.variances[:, idx].copy()
            b = HW[m]
            means[:, side] = self.mask.means[b, idx[side]]
            variances[:, side] = self.mask.variances[b, idx[side]]
            model = LeakageModel(ModelKind.HW_SBOX, self.model.byte_index, output_mask=m)
            sets.append(TemplateSet(means, variances, self.value.counts, model, idx))
        return sets, np.full(256, 1.0 / 256)

    def per_trace_log_scores(self, attack: TraceSet, poi) -> np.ndarray:
        _, vpoi, mpoi = self._split(poi)
        return self._scores(np.asarray(attack.samples, dtype=np.float64),
                            self.model.label_table(attack.field("plaintext"), None), vpoi, mpoi)

    def _scores(self, x, labels, vpoi, mpoi):
        n = x.shape[0]
        ll_a = (class_log_likelihoods(x[:, vpoi], self.value.means[:, vpoi], self.value.variances[:, vpoi])
                if vpoi.size else np.zeros((n, 9)))
        ll_b = (class_log_likelihoods(x[:, mpoi], self.mask.means[:, mpoi], self.mask.variances[:, mpoi])
                if mpoi.size else np.zeros((n, 9)))
        joint = ll_a[:, :, None] + ll_b[:, None, :]
        mix = logsumexp(joint[:, None, :, :] + self.log_weights[None], axis=(2, 3))
        return np.take_along_axis(mix, labels.astype(np.intp), axis=1)

    def rank(self, attack: TraceSet, poi, correct_key=None) -> AttackResult:
        k_star = _resolve_correct_key(attack, self.model, correct_key)
        return attack_result(self.per_trace_log_scores(attack, poi), k_star)
