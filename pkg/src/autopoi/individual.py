"""Binary POI-selection candidate shared by the graphics and the EDA."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class Individual:
    """One candidate: ``bits[n]`` set means sample ``n`` is a point of interest.

    ``cached_eval``/``cached_ge`` are filled in by evaluation.
    """

    bits: np.ndarray
    cached_eval: float | None = None
    cached_ge: tuple[int, ...] | None = None
    error: str | None = field(default=None, repr=False)

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool).ravel()
        bits.setflags(write=False)
        self.bits = bits

    @classmethod
    def from_indices(cls, indices, length: int) -> "Individual":
        bits = np.zeros(length, dtype=bool)
        bits[np.asarray(list(indices), dtype=int)] = True
        return cls(bits)

    @property
    def n_poi(self) -> int:
        return int(self.bits.sum())

    @property
    def poi(self) -> np.ndarray:
        """Selected sample indices in increasing order."""
        return np.flatnonzero(self.bits)

    @property
    def evaluated(self) -> bool:
        return self.cached_eval is not None

    def digest(self) -> str:
        return hashlib.sha1(np.packbits(self.bits).tobytes()).hexdigest()[:12]

    def copy(self) -> "Individual":
        return Individual(self.bits, self.cached_eval, self.cached_ge, self.error)

    def __len__(self):
        return self.bits.size
