"""Per-sample class-separation graphics (SOST, SOSD, SNR, correlation).

Class statistics use the population variance of each class. Only classes
that actually occur in ``labels`` take part.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .individual import Individual

NOISE_FLOOR = 1e-12


class GraphicMethod(str, enum.Enum):
    SOST = "sost"
    SOSD = "sosd"
    SNR = "snr"
    CORRELATION = "correlation"


@dataclass(frozen=True)
class SelectionGraphic:
    values: np.ndarray
    method: GraphicMethod
    normalized: bool = False
    degenerate: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "method", GraphicMethod(self.method))

    def __len__(self):
        return self.values.size


def _samples(ts) -> np.ndarray:
    return np.asarray(getattr(ts, "samples", ts), dtype=np.float64)


def class_moments(samples: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts, means and population variances of every class present.

    Returns ``(counts[C], means[C, T], variances[C, T])`` with classes in
    ascending label order.
    """
    x = _samples(samples)
    labels = np.asarray(labels).ravel()
    if labels.size != x.shape[0]:
        raise ValueError(f"{labels.size} labels for {x.shape[0]} traces")
    if labels.size == 0:
        return np.zeros(0), np.zeros((0, x.shape[1])), np.zeros((0, x.shape[1]))
    classes, inv = np.unique(labels, return_inverse=True)
    counts = np.bincount(inv, minlength=classes.size)
    order = np.argsort(inv, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    xs = x[order]
    means = np.add.reduceat(xs, starts, axis=0) / counts[:, None]
    resid = xs - np.repeat(means, counts, axis=0)
    variances = np.add.reduceat(resid * resid, starts, axis=0) / counts[:, None]
    return counts.astype(np.float64), means, variances


def _checked_moments(ts, labels):
    counts, means, variances = class_moments(ts, labels)
    if counts.size < 2:
        raise ValueError("at least two distinct classes are needed")
    return counts, means, variances


def sost(ts, labels) -> SelectionGraphic:
    """Sum over class pairs of squared Welch t-statistics."""
    counts, means, variances = _checked_moments(ts, labels)
    out = np.zeros(means.shape[1])
    scaled = variances / counts[:, None]
    for i in range(len(counts)):
        for j in range(i + 1, len(counts)):
            den = scaled[i] + scaled[j]
            num = (means[i] - means[j]) ** 2
            ok = den > 0
            out[ok] += num[ok] / den[ok]
    return SelectionGraphic(out, GraphicMethod.SOST)


def sosd(ts, labels) -> SelectionGraphic:
    """Sum over class pairs of squared mean differences."""
    _, means, _ = _checked_moments(ts, labels)
    out = np.zeros(means.shape[1])
    for i in range(means.shape[0]):
        out += ((means[i] - means[i + 1:]) ** 2).sum(axis=0)
    return SelectionGraphic(out, GraphicMethod.SOSD)


def snr(ts, labels) -> SelectionGraphic:
    """Variance of the class means over the mean of the class variances.

    Both are unweighted averages over the classes present. The noise term is
    floored at ``NOISE_FLOOR`` so a noiseless leak stays the maximum while a
    constant sample gives 0.
    """
    _, means, variances = _checked_moments(ts, labels)
    signal = means.var(axis=0)
    noise = np.maximum(variances.mean(axis=0), NOISE_FLOOR)
    return SelectionGraphic(signal / noise, GraphicMethod.SNR)


def correlation_graphic(ts, hypothesis_values) -> SelectionGraphic:
    """Absolute Pearson correlation of every sample with a hypothesis."""
    x = _samples(ts)
    h = np.asarray(hypothesis_values, dtype=np.float64).ravel()
    if h.size != x.shape[0]:
        raise ValueError(f"{h.size} hypothesis values for {x.shape[0]} traces")
    xc = x - x.mean(axis=0)
    hc = h - h.mean()
    num = hc @ xc
    den = np.sqrt((xc * xc).sum(axis=0) * (hc @ hc))
    out = np.zeros(x.shape[1])
    ok = den > 0
    out[ok] = np.abs(num[ok]) / den[ok]
    return SelectionGraphic(np.minimum(out, 1.0), GraphicMethod.CORRELATION)


def normalize(g: SelectionGraphic) -> SelectionGraphic:
    """Rescale to [0, 1]; a constant graphic becomes zeros flagged degenerate."""
    v = g.values
    lo, hi = v.min(), v.max()
    if hi == lo:
        return SelectionGraphic(np.zeros_like(v), g.method, normalized=True, degenerate=True)
    return SelectionGraphic((v - lo) / (hi - lo), g.method, normalized=True)


def top_k_select(g: SelectionGraphic, k: int) -> Individual:
    """The ``k`` highest samples; equal values prefer the lower index."""
    values = g.values
    if not 0 <= k <= values.size:
        raise ValueError(f"k must be in 0..{values.size}, got {k}")
    order = np.argsort(-values, kind="stable")
    return Individual.from_indices(order[:k], values.size)


def compute_graphic(method, ts, labels) -> SelectionGraphic:
    """Dispatch by method name; correlation uses ``labels`` as the hypothesis."""
    method = GraphicMethod(method)
    if method is GraphicMethod.CORRELATION:
        return correlation_graphic(ts, labels)
    return {GraphicMethod.SOST: sost, GraphicMethod.SOSD: sosd, GraphicMethod.SNR: snr}[method](ts, labels)
