"""Synthetic first-round AES power traces for unprotected and masked Sbox code.

Leakage is linear in the Hamming weight of the processed byte plus Gaussian
noise, on top of a smooth per-device baseline waveform.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .aes import HW, SBOX, masked_sbox_tables
from .traces import TraceSet


class Implementation(str, enum.Enum):
    UNPROTECTED = "unprotected"
    MASKED = "masked"


@dataclass(frozen=True)
class DeviceProfile:
    """Physical behaviour of one simulated device.

    Value positions leak the (masked) Sbox output; mask positions leak the
    output mask and are only used for masked implementations.
    """

    gain: float = 1.0
    offset: float = 0.0
    noise_sigma: float = 1.0
    leak_positions_value: tuple[int, ...] = (0,)
    leak_positions_mask: tuple[int, ...] = ()
    leak_coeffs_value: tuple[float, ...] | None = None
    leak_coeffs_mask: tuple[float, ...] | None = None
    baseline_seed: int = 0
    baseline_amplitude: float = 1.0

    def __post_init__(self):
        pv = tuple(int(i) for i in self.leak_positions_value)
        pm = tuple(int(i) for i in self.leak_positions_mask)
        cv = tuple(float(c) for c in (self.leak_coeffs_value or [1.0] * len(pv)))
        cm = tuple(float(c) for c in (self.leak_coeffs_mask or [1.0] * len(pm)))
        if len(cv) != len(pv) or len(cm) != len(pm):
            raise ValueError("leak coefficients must match their position lists in length")
        if set(pv) & set(pm):
            raise ValueError("value and mask leak positions must be disjoint")
        if min(pv + pm, default=0) < 0:
            raise ValueError("leak positions must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        object.__setattr__(self, "leak_positions_value", pv)
        object.__setattr__(self, "leak_positions_mask", pm)
        object.__setattr__(self, "leak_coeffs_value", cv)
        object.__setattr__(self, "leak_coeffs_mask", cm)

    def baseline(self, n_samples: int) -> np.ndarray:
        """Smooth deterministic waveform: a few random low-frequency sinusoids."""
        if self.baseline_amplitude == 0:
            return np.zeros(n_samples)
        rng = np.random.default_rng(self.baseline_seed)
        t = np.arange(n_samples) / max(n_samples, 1)
        freqs = rng.uniform(0.5, 4.0, size=4)
        phases = rng.uniform(0, 2 * np.pi, size=4)
        amps = rng.normal(0, 1, size=4)
        curve = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
        return self.baseline_amplitude * curve / 2


@dataclass(frozen=True)
class SimConfig:
    """What to acquire: implementation, trace count, key policy, seed.

    ``fixed_key`` set means one key for all traces, None draws a fresh
    random key per trace.
    """

    implementation: Implementation = Implementation.UNPROTECTED
    n_traces: int = 1000
    fixed_key: bytes | None = None
    byte_index: int = 0
    n_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "implementation", Implementation(self.implementation))
        if self.n_traces < 1 or self.n_samples < 1:
            raise ValueError("n_traces and n_samples must be >= 1")
        if not 0 <= self.byte_index < 16:
            raise ValueError("byte_index must be in 0..15")
        if self.fixed_key is not None:
            key = bytes(self.fixed_key)
            if len(key) != 16:
                raise ValueError("fixed_key must be 16 bytes")
            object.__setattr__(self, "fixed_key", key)


def simulate(profile: DeviceProfile, cfg: SimConfig) -> TraceSet:
    """Generate a labeled trace set; identical inputs give identical output.

    The ``ciphertext`` field holds the first-round Sbox outputs of all 16
    bytes rather than a real ciphertext.
    """
    positions = profile.leak_positions_value + (
        profile.leak_positions_mask if cfg.implementation is Implementation.MASKED else ())
    if positions and max(positions) >= cfg.n_samples:
        raise ValueError(f"leak position {max(positions)} outside trace of {cfg.n_samples} samples")

    n, b = cfg.n_traces, cfg.byte_index
    rng = np.random.default_rng(cfg.seed)
    pt = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
    if cfg.fixed_key is None:
        key = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
    else:
        key = np.broadcast_to(np.frombuffer(cfg.fixed_key, dtype=np.uint8), (n, 16)).copy()
    x = pt ^ key
    sbox_out = SBOX[x]
    meta = {"plaintext": pt, "ciphertext": sbox_out, "key": key}

    if cfg.implementation is Implementation.MASKED:
        m_in = rng.integers(0, 256, size=n, dtype=np.uint8)
        m_out = rng.integers(0, 256, size=n, dtype=np.uint8)
        tables = masked_sbox_tables(m_in, m_out)
        value = tables[np.arange(n), x[:, b] ^ m_in]
        meta["mask_in"] = m_in[:, None]
        meta["mask_out"] = m_out[:, None]
    else:
        value = sbox_out[:, b]

    noise = rng.standard_normal((n, cfg.n_samples))
    traces = profile.baseline(cfg.n_samples)[None, :] + profile.offset + profile.noise_sigma * noise
    hw_v = HW[value].astype(np.float64)
    for pos, c in zip(profile.leak_positions_value, profile.leak_coeffs_value):
        traces[:, pos] += profile.gain * c * hw_v
    if cfg.implementation is Implementation.MASKED:
        hw_m = HW[m_out].astype(np.float64)
        for pos, c in zip(profile.leak_positions_mask, profile.leak_coeffs_mask):
            traces[:, pos] += profile.gain * c * hw_m
    return TraceSet(traces.astype(np.float32), meta)


def make_clone_family(base: DeviceProfile, n_devices: int, variation_seed: int,
                      gain_jitter: float = 0.0, offset_jitter: float = 0.0,
                      noise_jitter: float = 0.0) -> list[DeviceProfile]:
    """Copies of ``base`` that differ only in gain, offset and noise level.

    Device 0 is ``base``. Gain and noise are scaled by ``1 + u * jitter``,
    the offset is shifted by ``u * offset_jitter``, with ``u ~ U(-1, 1)``
    drawn independently per device and parameter.
    """
    if n_devices < 1:
        raise ValueError("n_devices must be >= 1")
    if min(gain_jitter, offset_jitter, noise_jitter) < 0:
        raise ValueError("jitters must be non-negative")
    rng = np.random.default_rng(variation_seed)
    family = [base]
    for _ in range(n_devices - 1):
        u = rng.uniform(-1.0, 1.0, size=3)
        sigma = base.noise_sigma * (1 + u[2] * noise_jitter)
        if sigma < 0:
            raise ValueError(f"perturbed noise_sigma is negative ({sigma:.3g})")
        family.append(replace(
            base,
            gain=base.gain * (1 + u[0] * gain_jitter),
            offset=base.offset + u[1] * offset_jitter,
            noise_sigma=sigma,
        ))
    return family
