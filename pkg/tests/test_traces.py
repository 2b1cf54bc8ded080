import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from autopoi.traces import (
    BadMagicError,
    PreprocessSpec,
    SampleEncoding,
    SCTFError,
    TraceSet,
    TrailingDataError,
    TruncatedFileError,
    UnsupportedVersionError,
    WidthMismatchError,
    moving_average,
    preprocess,
    read_sctf,
    split,
    write_sctf,
)


def _random_set(rng, n=10, t=6, dtype=np.float32):
    if dtype == np.int8:
        samples = rng.integers(-128, 128, (n, t)).astype(np.int8)
    else:
        samples = rng.normal(size=(n, t)).astype(dtype)
    meta = {"plaintext": rng.integers(0, 256, (n, 16)), "key": rng.integers(0, 256, (n, 16)),
            "mask_out": rng.integers(0, 256, n)}
    return TraceSet(samples, meta)


def test_roundtrip(tmp_path):
    ts = _random_set(np.random.default_rng(0), 100, 500)
    write_sctf(ts, tmp_path / "a.sctf")
    back = read_sctf(tmp_path / "a.sctf")
    assert back == ts
    assert back.sample_encoding is SampleEncoding.FLOAT32


def test_int8_roundtrip(tmp_path):
    ts = _random_set(np.random.default_rng(1), 7, 9, np.int8)
    write_sctf(ts, tmp_path / "a.sctf")
    assert read_sctf(tmp_path / "a.sctf") == ts


def test_empty_set(tmp_path):
    ts = TraceSet(np.zeros((0, 100), np.float32), {"plaintext": np.zeros((0, 16))})
    write_sctf(ts, tmp_path / "e.sctf")
    back = read_sctf(tmp_path / "e.sctf")
    assert back.n_traces == 0 and back.n_samples == 100


def test_file_size_accounting(tmp_path):
    ts = TraceSet(np.zeros((2, 4), np.float32), {"plaintext": np.zeros((2, 16)), "mask_in": [1, 2]})
    write_sctf(ts, tmp_path / "s.sctf")
    header = 22 + (1 + 9 + 2) + (1 + 7 + 2)
    assert (tmp_path / "s.sctf").stat().st_size == header + 2 * (17 + 16)


def test_header_layout(tmp_path):
    ts = TraceSet(np.ones((3, 2), np.float32), {"key": np.zeros((3, 16))})
    write_sctf(ts, tmp_path / "h.sctf")
    raw = (tmp_path / "h.sctf").read_bytes()
    assert struct.unpack_from("<4sIQIBB", raw) == (b"SCTF", 1, 3, 2, 1, 1)
    assert raw[22:26] == b"\x03key" and struct.unpack_from("<H", raw, 26) == (16,)
    assert struct.unpack_from("<2f", raw, 28 + 16) == (1.0, 1.0)


def test_float64_stored_as_float32(tmp_path):
    ts = TraceSet(np.array([[0.1, 0.2]]), {})
    write_sctf(ts, tmp_path / "f.sctf")
    back = read_sctf(tmp_path / "f.sctf")
    assert back.samples.dtype == np.float32
    assert np.array_equal(back.samples, ts.samples.astype(np.float32))


@st.composite
def trace_sets(draw):
    n = draw(st.integers(0, 8))
    t = draw(st.integers(1, 12))
    enc = draw(st.sampled_from([np.int8, np.float32]))
    samples = draw(hnp.arrays(enc, (n, t)))
    names = draw(st.lists(st.text("abcdefghij_", min_size=1, max_size=12), max_size=4, unique=True))
    meta = {}
    for name in names:
        w = draw(st.integers(1, 5))
        meta[name] = draw(hnp.arrays(np.uint8, (n, w)))
    return TraceSet(samples, meta)


@settings(max_examples=200, deadline=None)
@given(trace_sets())
def test_roundtrip_property(tmp_path_factory, ts):
    path = tmp_path_factory.mktemp("rt") / "p.sctf"
    write_sctf(ts, path)
    raw = path.read_bytes()
    back = read_sctf(path)
    assert back == ts
    write_sctf(back, path)
    assert path.read_bytes() == raw


@pytest.fixture
def good_file(tmp_path):
    ts = _random_set(np.random.default_rng(2), 5, 8)
    path = tmp_path / "good.sctf"
    write_sctf(ts, path)
    return path


def _corrupt(path, data):
    out = path.with_name("bad.sctf")
    out.write_bytes(data)
    return out


def test_bad_magic(good_file):
    raw = good_file.read_bytes()
    with pytest.raises(BadMagicError):
        read_sctf(_corrupt(good_file, b"HDF5" + raw[4:]))
    with pytest.raises(BadMagicError):
        read_sctf(_corrupt(good_file, b""))


def test_unsupported_version(good_file):
    raw = bytearray(good_file.read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersionError):
        read_sctf(_corrupt(good_file, bytes(raw)))


@pytest.mark.parametrize("cut", [10, 25, 40, -1, -33])
def test_truncation(good_file, cut):
    raw = good_file.read_bytes()
    with pytest.raises(TruncatedFileError):
        read_sctf(_corrupt(good_file, raw[:cut]))


def test_width_mismatch(good_file):
    raw = bytearray(good_file.read_bytes())
    # first field is "plaintext" (name_len at 22, width right after the name)
    assert raw[23:32] == b"plaintext"
    raw[32:34] = struct.pack("<H", 8)
    with pytest.raises(WidthMismatchError):
        read_sctf(_corrupt(good_file, bytes(raw)))


def test_trailing_data(good_file):
    with pytest.raises(TrailingDataError):
        read_sctf(_corrupt(good_file, good_file.read_bytes() + b"\0"))


def test_errors_are_distinct():
    kinds = [BadMagicError, UnsupportedVersionError, TruncatedFileError, WidthMismatchError]
    for a in kinds:
        assert issubclass(a, SCTFError)
        assert sum(issubclass(a, b) for b in kinds) == 1


def test_in_memory_width_check():
    with pytest.raises(WidthMismatchError):
        TraceSet(np.zeros((2, 3), np.float32), {"plaintext": np.zeros((2, 15))})
    with pytest.raises(WidthMismatchError):
        TraceSet(np.zeros((2, 3), np.float32), {"aux": np.zeros((3, 1))})


def test_long_field_name_rejected():
    with pytest.raises(ValueError):
        TraceSet(np.zeros((1, 1), np.float32), {"x" * 256: [0]})


def test_immutable():
    ts = _random_set(np.random.default_rng(3))
    with pytest.raises(ValueError):
        ts.samples[0, 0] = 1
    with pytest.raises(AttributeError):
        ts.samples = None


def test_zero_mean_example():
    ts = TraceSet(np.array([[1.0, 2.0, 3.0]]))
    out = preprocess(ts, PreprocessSpec(zero_mean=True))
    assert out.samples.tolist() == [[-1.0, 0.0, 1.0]]


def test_standardize_example():
    ts = TraceSet(np.array([[0.0], [2.0]]))
    out = preprocess(ts, PreprocessSpec(standardize=True))
    assert out.samples.tolist() == [[-1.0], [1.0]]


def test_lowpass_example():
    ts = TraceSet(np.array([[0.0, 3.0, 0.0, 3.0, 0.0]]))
    out = preprocess(ts, PreprocessSpec(lowpass_window=3))
    assert np.allclose(out.samples, [[1.5, 1.0, 2.0, 1.0, 1.5]])


def _naive_ma(row, w):
    left, right = (w - 1) // 2, w // 2
    n = len(row)
    return [np.mean(row[max(0, i - left):min(n, i + right + 1)]) for i in range(n)]


@given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)),
       st.integers(1, 8))
def test_moving_average_matches_naive(row, w):
    assert np.allclose(moving_average(row[None, :], w)[0], _naive_ma(row, w), atol=1e-9)


def test_preprocess_order_and_standardize_properties():
    rng = np.random.default_rng(4)
    x = rng.normal(3, 2, (200, 30))
    x[:, 7] = 5.0
    ts = TraceSet(x)
    out = preprocess(ts, PreprocessSpec(zero_mean=True, standardize=True, lowpass_window=1))
    assert np.all(np.abs(out.samples.mean(axis=0)) < 1e-9)
    var = out.samples.var(axis=0)
    assert np.all(np.isclose(var, 1.0) | (var == 0))
    # per-sample transforms do not depend on trace order
    perm = rng.permutation(200)
    shuffled = preprocess(ts.subset(perm), PreprocessSpec(zero_mean=True, standardize=True))
    assert np.allclose(shuffled.samples, out.samples[perm])


def test_constant_sample_standardizes_to_zero():
    ts = TraceSet(np.array([[1.0, 4.0], [1.0, 6.0]]))
    out = preprocess(ts, PreprocessSpec(standardize=True))
    assert out.samples[:, 0].tolist() == [0.0, 0.0]


def test_lowpass_window_too_long():
    with pytest.raises(ValueError):
        preprocess(TraceSet(np.zeros((2, 3))), PreprocessSpec(lowpass_window=4))
    with pytest.raises(ValueError):
        PreprocessSpec(lowpass_window=0)


def test_split():
    ts = _random_set(np.random.default_rng(5), 100, 3)
    prof, att = split(ts, 100, 0, 1)
    assert prof == ts and att.n_traces == 0
    a = split(ts, 60, 30, 9)
    b = split(ts, 60, 30, 9)
    assert a[0] == b[0] and a[1] == b[1]
    rows = {r.tobytes() for r in a[0].samples} | {r.tobytes() for r in a[1].samples}
    assert len(rows) == 90
    with pytest.raises(ValueError):
        split(ts, 60, 60, 0)
