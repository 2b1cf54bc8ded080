"""Trace container, the SCTF on-disk format, preprocessing and splitting.

SCTF layout (little-endian, no padding)::

    magic "SCTF" | version u32 | n_traces u64 | n_samples u32 | encoding u8
    | field_count u8 | per field: name_len u8, name, width u16
    | n_traces records: metadata field bytes in declared order, then samples

``encoding`` is 0 for int8 samples and 1 for IEEE-754 float32 samples.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SCTF"
VERSION = 1

# Widths of the metadata fields the rest of the package relies on.
STANDARD_WIDTHS = {"plaintext": 16, "ciphertext": 16, "key": 16, "mask_in": 1, "mask_out": 1}

_HEAD = struct.Struct("<4sIQIBB")


class SampleEncoding(enum.IntEnum):
    INT8 = 0
    FLOAT32 = 1


class SCTFError(ValueError):
    """Base class for malformed SCTF files."""


class BadMagicError(SCTFError):
    pass


class UnsupportedVersionError(SCTFError):
    pass


class TruncatedFileError(SCTFError):
    pass


class WidthMismatchError(SCTFError):
    """A metadata field does not have the byte width it must have."""


class TrailingDataError(SCTFError):
    pass


class TraceSet:
    """An immutable matrix of traces with per-trace byte metadata.

    ``samples`` is ``(n_traces, n_samples)``; int8 and float32 arrays map to
    the two SCTF encodings, float64 arrays are allowed in memory (they are
    what preprocessing produces) and are stored as float32 on disk.
    ``metadata`` maps field names to ``(n_traces, width)`` uint8 arrays;
    insertion order is the on-disk field order.
    """

    __slots__ = ("samples", "metadata")

    def __init__(self, samples, metadata=None):
        samples = np.array(samples, copy=True)
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {samples.shape}")
        if samples.dtype not in (np.int8, np.float32, np.float64):
            raise TypeError(f"unsupported sample dtype {samples.dtype}")
        n = samples.shape[0]
        meta = {}
        for name, values in (metadata or {}).items():
            if len(name.encode("ascii")) > 255:
                raise ValueError(f"metadata field name longer than 255 bytes: {name[:32]}...")
            arr = np.array(values, dtype=np.uint8, copy=True)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.ndim != 2 or arr.shape[0] != n:
                raise WidthMismatchError(f"field {name!r}: expected {n} rows, got shape {arr.shape}")
            want = STANDARD_WIDTHS.get(name)
            if want is not None and arr.shape[1] != want:
                raise WidthMismatchError(f"field {name!r} must be {want} bytes wide, got {arr.shape[1]}")
            if not 1 <= arr.shape[1] <= 0xFFFF:
                raise WidthMismatchError(f"field {name!r} has unsupported width {arr.shape[1]}")
            arr.setflags(write=False)
            meta[name] = arr
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "metadata", meta)

    def __setattr__(self, name, value):
        raise AttributeError("TraceSet is immutable")

    @property
    def n_traces(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def sample_encoding(self) -> SampleEncoding:
        return SampleEncoding.INT8 if self.samples.dtype == np.int8 else SampleEncoding.FLOAT32

    def __len__(self):
        return self.n_traces

    def __eq__(self, other):
        if not isinstance(other, TraceSet):
            return NotImplemented
        if self.samples.dtype != other.samples.dtype or self.samples.shape != other.samples.shape:
            return False
        if list(self.metadata) != list(other.metadata):
            return False
        if self.samples.tobytes() != other.samples.tobytes():
            return False
        return all(np.array_equal(v, other.metadata[k]) for k, v in self.metadata.items())

    __hash__ = None

    def __repr__(self):
        fields = ", ".join(f"{k}[{v.shape[1]}]" for k, v in self.metadata.items())
        return f"TraceSet({self.n_traces}x{self.n_samples} {self.samples.dtype}; {fields})"

    def field(self, name: str) -> np.ndarray | None:
        return self.metadata.get(name)

    def subset(self, index) -> "TraceSet":
        index = np.asarray(index)
        return TraceSet(self.samples[index], {k: v[index] for k, v in self.metadata.items()})

    def with_samples(self, samples) -> "TraceSet":
        return TraceSet(samples, self.metadata)

    def key_byte(self, byte_index: int) -> np.ndarray:
        """Per-trace key byte at ``byte_index`` (requires ``key`` metadata)."""
        key = self.metadata.get("key")
        if key is None:
            raise KeyError("trace set has no 'key' metadata")
        return key[:, byte_index]


def _record_dtype(widths, n_samples, encoding):
    fields = [(f"m{i}", np.uint8, (w,)) for i, w in enumerate(widths)]
    sample_type = np.int8 if encoding == SampleEncoding.INT8 else np.dtype("<f4")
    fields.append(("s", sample_type, (n_samples,)))
    return np.dtype(fields)


def _header_bytes(names, widths, n_traces, n_samples, encoding) -> bytes:
    parts = [_HEAD.pack(MAGIC, VERSION, n_traces, n_samples, int(encoding), len(names))]
    for name, width in zip(names, widths):
        raw = name.encode("ascii")
        if len(raw) > 255:
            raise ValueError(f"metadata field name longer than 255 bytes: {name[:32]}...")
        parts.append(struct.pack("<B", len(raw)) + raw + struct.pack("<H", width))
    return b"".join(parts)


def write_sctf(ts: TraceSet, path) -> None:
    names = list(ts.metadata)
    if len(names) > 255:
        raise ValueError("at most 255 metadata fields can be stored")
    widths = [ts.metadata[k].shape[1] for k in names]
    enc = ts.sample_encoding
    header = _header_bytes(names, widths, ts.n_traces, ts.n_samples, enc)
    records = np.zeros(ts.n_traces, dtype=_record_dtype(widths, ts.n_samples, enc))
    for i, name in enumerate(names):
        records[f"m{i}"] = ts.metadata[name]
    records["s"] = ts.samples
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def read_sctf(path) -> TraceSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{os.fspath(path)}: not an SCTF file (magic {data[:4]!r})")
    if len(data) < _HEAD.size:
        raise TruncatedFileError(f"{os.fspath(path)}: header truncated")
    _, version, n_traces, n_samples, enc, n_fields = _HEAD.unpack_from(data, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"{os.fspath(path)}: unsupported SCTF version {version}")
    try:
        enc = SampleEncoding(enc)
    except ValueError:
        raise SCTFError(f"{os.fspath(path)}: unknown sample encoding {enc}") from None
    pos = _HEAD.size
    names, widths = [], []
    for _ in range(n_fields):
        if pos + 1 > len(data):
            raise TruncatedFileError(f"{os.fspath(path)}: field table truncated")
        name_len = data[pos]
        pos += 1
        if pos + name_len + 2 > len(data):
            raise TruncatedFileError(f"{os.fspath(path)}: field table truncated")
        name = data[pos:pos + name_len].decode("ascii")
        pos += name_len
        (width,) = struct.unpack_from("<H", data, pos)
        pos += 2
        want = STANDARD_WIDTHS.get(name)
        if want is not None and width != want:
            raise WidthMismatchError(f"{os.fspath(path)}: field {name!r} declared {width} bytes, must be {want}")
        if width == 0:
            raise WidthMismatchError(f"{os.fspath(path)}: field {name!r} has zero width")
        names.append(name)
        widths.append(width)
    dtype = _record_dtype(widths, n_samples, enc)
    body = len(data) - pos
    need = n_traces * dtype.itemsize
    if body < need:
        raise TruncatedFileError(
            f"{os.fspath(path)}: {n_traces} records need {need} bytes, only {body} present")
    if body > need:
        raise TrailingDataError(f"{os.fspath(path)}: {body - need} unexpected trailing bytes")
    records = np.frombuffer(data, dtype=dtype, count=n_traces, offset=pos)
    samples = records["s"].astype(np.int8 if enc == SampleEncoding.INT8 else np.float32)
    samples = samples.reshape(n_traces, n_samples)
    meta = {name: records[f"m{i}"].reshape(n_traces, widths[i]) for i, name in enumerate(names)}
    return TraceSet(samples, meta)


@dataclass(frozen=True)
class PreprocessSpec:
    zero_mean: bool = False
    standardize: bool = False
    lowpass_window: int = 1

    def __post_init__(self):
        if self.lowpass_window < 1:
            raise ValueError("lowpass_window must be >= 1")


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average along the last axis.

    Windows are truncated at the trace edges, so edge samples average fewer
    points instead of being padded with zeros.
    """
    if window == 1:
        return np.array(x, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    left, right = (window - 1) // 2, window // 2
    csum = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    lo = np.clip(np.arange(n) - left, 0, n)
    hi = np.clip(np.arange(n) + right + 1, 0, n)
    return (csum[..., hi] - csum[..., lo]) / (hi - lo)


def preprocess(ts: TraceSet, spec: PreprocessSpec) -> TraceSet:
    """Apply zero-mean, lowpass, then standardization (in that order)."""
    if spec.lowpass_window > ts.n_samples:
        raise ValueError(f"lowpass_window {spec.lowpass_window} exceeds trace length {ts.n_samples}")
    x = np.asarray(ts.samples, dtype=np.float64)
    if spec.zero_mean:
        x = x - x.mean(axis=1, keepdims=True)
    x = moving_average(x, spec.lowpass_window)
    if spec.standardize and ts.n_traces:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        live = sd > 0
        out = np.zeros_like(x)
        out[:, live] = (x[:, live] - mu[live]) / sd[live]
        x = out
    return ts.with_samples(x)


def split(ts: TraceSet, n_profiling: int, n_attack: int, seed: int) -> tuple[TraceSet, TraceSet]:
    """Disjoint random profiling/attack subsets, each kept in file order."""
    if n_profiling < 0 or n_attack < 0:
        raise ValueError("subset sizes must be non-negative")
    if n_profiling + n_attack > ts.n_traces:
        raise ValueError(
            f"cannot draw {n_profiling} + {n_attack} traces from a set of {ts.n_traces}")
    perm = np.random.default_rng(seed).permutation(ts.n_traces)
    prof = np.sort(perm[:n_profiling])
    att = np.sort(perm[n_profiling:n_profiling + n_attack])
    return ts.subset(prof), ts.subset(att)
