import numpy as np
import pytest
from hypothesis import given, strategies as st

from autopoi.aes import (
    HW,
    INV_SBOX,
    RIJNDAEL,
    SBOX,
    LeakageModel,
    ModelKind,
    SboxTable,
    hamming_weight,
    intermediate_value,
    inv_sbox,
    mask_sbox_table,
    masked_sbox_tables,
    sbox,
)

byte = st.integers(0, 255)


def _gf_mul(a, b):
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        if a & 0x100:
            a ^= 0x11B
        b >>= 1
    return r


def _gf_inv(a):
    if a == 0:
        return 0
    return next(x for x in range(1, 256) if _gf_mul(a, x) == 1)


def _affine(b):
    out = 0
    for i in range(8):
        bit = ((b >> i) ^ (b >> ((i + 4) % 8)) ^ (b >> ((i + 5) % 8))
               ^ (b >> ((i + 6) % 8)) ^ (b >> ((i + 7) % 8)) ^ (0x63 >> i)) & 1
        out |= bit << i
    return out


def test_sbox_matches_field_inverse_construction():
    oracle = [_affine(_gf_inv(x)) for x in range(256)]
    assert SBOX.tolist() == oracle


# first row and a few scattered entries of the published inverse table
INV_ROW0 = [0x52, 0x09, 0x6A, 0xD5, 0x30, 0x36, 0xA5, 0x38,
            0xBF, 0x40, 0xA3, 0x9E, 0x81, 0xF3, 0xD7, 0xFB]
INV_SPOT = {0x63: 0x00, 0x7C: 0x01, 0xED: 0x53, 0xFF: 0x7D, 0x16: 0xFF, 0x10: 0x7C}


def test_inverse_table_against_transcription():
    assert INV_SBOX[:16].tolist() == INV_ROW0
    for x, y in INV_SPOT.items():
        assert inv_sbox(x) == y


@pytest.mark.parametrize("x, y", [(0x00, 0x63), (0x01, 0x7C), (0x53, 0xED)])
def test_sbox_examples(x, y):
    assert sbox(x) == y


def test_inverse_roundtrip():
    assert inv_sbox(sbox(0xAB)) == 0xAB
    assert np.array_equal(INV_SBOX[SBOX], np.arange(256))


def test_sbox_table_rejects_non_permutation():
    bad = np.arange(256)
    bad[3] = 4
    with pytest.raises(ValueError):
        SboxTable(bad)


@pytest.mark.parametrize("x, w", [(0x00, 0), (0xFF, 8), (0xA5, 4)])
def test_hamming_weight_examples(x, w):
    assert hamming_weight(x) == w


@given(byte, byte)
def test_hamming_weight_xor_symmetric(x, y):
    assert hamming_weight(x ^ y) == hamming_weight(y ^ x) == bin(x ^ y).count("1")


def test_hamming_weight_array():
    assert hamming_weight(np.array([0, 3, 255])).tolist() == [0, 2, 8]


def test_mask_table_identity_masks():
    assert np.array_equal(mask_sbox_table(RIJNDAEL, 0, 0), SBOX)


def test_mask_table_examples():
    sm = mask_sbox_table(RIJNDAEL, 0x01, 0x02)
    assert all(sm[i ^ 1] == SBOX[i] ^ 2 for i in range(256))
    assert mask_sbox_table(RIJNDAEL, 0xFF, 0x63)[0xFF] == 0x00


@given(byte, byte)
def test_mask_table_property(m_in, m_out):
    sm = mask_sbox_table(RIJNDAEL, m_in, m_out)
    x = np.arange(256)
    assert np.array_equal(sm[x ^ m_in] ^ m_out, SBOX)


def test_vectorized_mask_tables_match_loop():
    rng = np.random.default_rng(0)
    m_in = rng.integers(0, 256, 20, dtype=np.uint8)
    m_out = rng.integers(0, 256, 20, dtype=np.uint8)
    tables = masked_sbox_tables(m_in, m_out)
    for j in range(20):
        assert np.array_equal(tables[j], mask_sbox_table(RIJNDAEL, int(m_in[j]), int(m_out[j])))


def _block(b=0, value=0):
    out = bytearray(16)
    out[b] = value
    return bytes(out)


def test_intermediate_value_examples():
    hw = LeakageModel(ModelKind.HW_SBOX, 0)
    assert intermediate_value(hw, _block(), None, 0x00) == 4
    iv = LeakageModel(ModelKind.IV_SBOX, 3)
    assert intermediate_value(iv, _block(3, 0x5A), None, 0x5A) == 0x63


def test_hd_model_self_cancellation():
    m = LeakageModel(ModelKind.HD_LAST_ROUND, ciphertext_byte_pair=(2, 7))
    c_prime, k = 0x3C, 0x91
    ct = bytearray(16)
    ct[2] = c_prime
    ct[7] = INV_SBOX[c_prime ^ k]
    assert intermediate_value(m, None, bytes(ct), k) == 0
    assert m.key_byte_index == 2


def test_iv_model_bijective_in_key():
    m = LeakageModel(ModelKind.IV_SBOX, 0)
    pt = np.full((1, 16), 0x42, dtype=np.uint8)
    assert len(set(m.label_table(pt, None)[0].tolist())) == 256


@pytest.mark.parametrize("kind, n", [("iv-sbox", 256), ("hw-sbox", 9)])
def test_class_counts(kind, n):
    assert LeakageModel(kind).n_classes == n
    assert LeakageModel(ModelKind.HD_LAST_ROUND, ciphertext_byte_pair=(0, 1)).n_classes == 9


def test_label_table_agrees_with_labels():
    rng = np.random.default_rng(1)
    pt = rng.integers(0, 256, (50, 16), dtype=np.uint8)
    ct = rng.integers(0, 256, (50, 16), dtype=np.uint8)
    models = [LeakageModel("iv-sbox", 5), LeakageModel("hw-sbox", 9),
              LeakageModel("hd-last-round", ciphertext_byte_pair=(4, 11)),
              LeakageModel("hw-sbox", 1, output_mask=0x3C)]
    for m in models:
        table = m.label_table(pt, ct)
        for k in (0, 17, 255):
            assert np.array_equal(table[:, k], m.labels(pt, ct, k))


def test_output_mask_shifts_labels():
    pt = np.zeros((1, 16), dtype=np.uint8)
    m = LeakageModel("iv-sbox", 0, output_mask=0x63)
    assert m.labels(pt, None, 0)[0] == 0


def test_model_validation():
    with pytest.raises(ValueError):
        LeakageModel("hw-sbox", 16)
    with pytest.raises(ValueError):
        LeakageModel("hd-last-round")
    with pytest.raises(ValueError):
        LeakageModel("no-such-kind")
    with pytest.raises(ValueError):
        LeakageModel("hd-last-round", ciphertext_byte_pair=(0, 16))


def test_hw_table_frozen():
    with pytest.raises(ValueError):
        HW[0] = 1
