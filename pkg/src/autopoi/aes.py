"""AES byte primitives and the intermediate-value models used to label traces."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# fmt: off
_SBOX = [
    0x63, 0x7C, 0x77, 0x7B, 0xF2, 0x6B, 0x6F, 0xC5, 0x30, 0x01, 0x67, 0x2B, 0xFE, 0xD7, 0xAB, 0x76,
    0xCA, 0x82, 0xC9, 0x7D, 0xFA, 0x59, 0x47, 0xF0, 0xAD, 0xD4, 0xA2, 0xAF, 0x9C, 0xA4, 0x72, 0xC0,
    0xB7, 0xFD, 0x93, 0x26, 0x36, 0x3F, 0xF7, 0xCC, 0x34, 0xA5, 0xE5, 0xF1, 0x71, 0xD8, 0x31, 0x15,
    0x04, 0xC7, 0x23, 0xC3, 0x18, 0x96, 0x05, 0x9A, 0x07, 0x12, 0x80, 0xE2, 0xEB, 0x27, 0xB2, 0x75,
    0x09, 0x83, 0x2C, 0x1A, 0x1B, 0x6E, 0x5A, 0xA0, 0x52, 0x3B, 0xD6, 0xB3, 0x29, 0xE3, 0x2F, 0x84,
    0x53, 0xD1, 0x00, 0xED, 0x20, 0xFC, 0xB1, 0x5B, 0x6A, 0xCB, 0xBE, 0x39, 0x4A, 0x4C, 0x58, 0xCF,
    0xD0, 0xEF, 0xAA, 0xFB, 0x43, 0x4D, 0x33, 0x85, 0x45, 0xF9, 0x02, 0x7F, 0x50, 0x3C, 0x9F, 0xA8,
    0x51, 0xA3, 0x40, 0x8F, 0x92, 0x9D, 0x38, 0xF5, 0xBC, 0xB6, 0xDA, 0x21, 0x10, 0xFF, 0xF3, 0xD2,
    0xCD, 0x0C, 0x13, 0xEC, 0x5F, 0x97, 0x44, 0x17, 0xC4, 0xA7, 0x7E, 0x3D, 0x64, 0x5D, 0x19, 0x73,
    0x60, 0x81, 0x4F, 0xDC, 0x22, 0x2A, 0x90, 0x88, 0x46, 0xEE, 0xB8, 0x14, 0xDE, 0x5E, 0x0B, 0xDB,
    0xE0, 0x32, 0x3A, 0x0A, 0x49, 0x06, 0x24, 0x5C, 0xC2, 0xD3, 0xAC, 0x62, 0x91, 0x95, 0xE4, 0x79,
    0xE7, 0xC8, 0x37, 0x6D, 0x8D, 0xD5, 0x4E, 0xA9, 0x6C, 0x56, 0xF4, 0xEA, 0x65, 0x7A, 0xAE, 0x08,
    0xBA, 0x78, 0x25, 0x2E, 0x1C, 0xA6, 0xB4, 0xC6, 0xE8, 0xDD, 0x74, 0x1F, 0x4B, 0xBD, 0x8B, 0x8A,
    0x70, 0x3E, 0xB5, 0x66, 0x48, 0x03, 0xF6, 0x0E, 0x61, 0x35, 0x57, 0xB9, 0x86, 0xC1, 0x1D, 0x9E,
    0xE1, 0xF8, 0x98, 0x11, 0x69, 0xD9, 0x8E, 0x94, 0x9B, 0x1E, 0x87, 0xE9, 0xCE, 0x55, 0x28, 0xDF,
    0x8C, 0xA1, 0x89, 0x0D, 0xBF, 0xE6, 0x42, 0x68, 0x41, 0x99, 0x2D, 0x0F, 0xB0, 0x54, 0xBB, 0x16,
]
# fmt: on


@dataclass(frozen=True)
class SboxTable:
    """A byte substitution table together with its inverse."""

    entries: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.uint8)
        if entries.shape != (256,) or len(np.unique(entries)) != 256:
            raise ValueError("an Sbox must be a permutation of 0..255")
        inverse = np.empty(256, dtype=np.uint8)
        inverse[entries] = np.arange(256, dtype=np.uint8)
        if self.inverse is not None and not np.array_equal(inverse, self.inverse):
            raise ValueError("inverse table does not invert entries")
        entries.setflags(write=False)
        inverse.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "inverse", inverse)


RIJNDAEL = SboxTable(np.array(_SBOX, dtype=np.uint8))
SBOX = RIJNDAEL.entries
INV_SBOX = RIJNDAEL.inverse
HW = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)
HW.setflags(write=False)


def sbox(x):
    """Rijndael Sbox lookup; accepts an int or an integer array."""
    if np.isscalar(x):
        return int(SBOX[int(x) & 0xFF])
    return SBOX[np.asarray(x, dtype=np.uint8)]


def inv_sbox(x):
    if np.isscalar(x):
        return int(INV_SBOX[int(x) & 0xFF])
    return INV_SBOX[np.asarray(x, dtype=np.uint8)]


def hamming_weight(x):
    """Number of set bits of a byte (or of every byte in an array)."""
    if np.isscalar(x):
        return int(HW[int(x) & 0xFF])
    return HW[np.asarray(x, dtype=np.uint8)]


def mask_sbox_table(s: SboxTable | np.ndarray, m_in: int, m_out: int) -> np.ndarray:
    """Masked lookup table ``Sm`` with ``Sm[x ^ m_in] == S[x] ^ m_out``."""
    table = s.entries if isinstance(s, SboxTable) else np.asarray(s, dtype=np.uint8)
    masked = np.empty(256, dtype=np.uint8)
    for i in range(256):
        masked[i ^ m_in] = table[i] ^ m_out
    return masked


def masked_sbox_tables(m_in: np.ndarray, m_out: np.ndarray) -> np.ndarray:
    """One masked table per (m_in, m_out) pair, shape ``(n, 256)``.

    Row ``j`` equals ``mask_sbox_table(RIJNDAEL, m_in[j], m_out[j])``.
    """
    m_in = np.asarray(m_in, dtype=np.uint8)[:, None]
    m_out = np.asarray(m_out, dtype=np.uint8)[:, None]
    idx = np.arange(256, dtype=np.uint8)[None, :]
    return SBOX[idx ^ m_in] ^ m_out


class ModelKind(str, enum.Enum):
    IV_SBOX = "iv-sbox"
    HW_SBOX = "hw-sbox"
    HD_LAST_ROUND = "hd-last-round"


@dataclass(frozen=True)
class LeakageModel:
    """Which intermediate value labels a trace, and for which byte.

    ``output_mask`` is only meaningful for the Sbox models: when set, the
    label is computed on ``Sbox[p ^ k] ^ output_mask``. It is how one
    per-mask template set is described for mask marginalization.
    """

    kind: ModelKind = ModelKind.HW_SBOX
    byte_index: int = 0
    ciphertext_byte_pair: tuple[int, int] | None = None
    output_mask: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not 0 <= self.byte_index < 16:
            raise ValueError(f"byte_index must be in 0..15, got {self.byte_index}")
        if self.kind is ModelKind.HD_LAST_ROUND:
            if self.ciphertext_byte_pair is None:
                raise ValueError("HD_LAST_ROUND needs ciphertext_byte_pair=(b1, b2)")
            b1, b2 = self.ciphertext_byte_pair
            if not (0 <= b1 < 16 and 0 <= b2 < 16):
                raise ValueError(f"ciphertext byte indices out of range: {self.ciphertext_byte_pair}")
            object.__setattr__(self, "ciphertext_byte_pair", (int(b1), int(b2)))
            if self.output_mask is not None:
                raise ValueError("output_mask is only defined for Sbox models")

    @property
    def n_classes(self) -> int:
        return 256 if self.kind is ModelKind.IV_SBOX else 9

    @property
    def key_byte_index(self) -> int:
        """Byte of the key metadata that holds the correct hypothesis."""
        if self.kind is ModelKind.HD_LAST_ROUND:
            return self.ciphertext_byte_pair[0]
        return self.byte_index

    def labels(self, plaintext, ciphertext, key_byte) -> np.ndarray:
        """Class labels for traces given a key byte (scalar or per trace).

        ``plaintext`` and ``ciphertext`` are ``(n, 16)`` byte arrays;
        ``ciphertext`` may be None for the Sbox models.
        """
        key_byte = np.asarray(key_byte, dtype=np.uint8)
        if self.kind is ModelKind.HD_LAST_ROUND:
            if ciphertext is None:
                raise ValueError("HD_LAST_ROUND needs ciphertext metadata")
            c = np.asarray(ciphertext, dtype=np.uint8)
            b1, b2 = self.ciphertext_byte_pair
            return HW[INV_SBOX[c[:, b1] ^ key_byte] ^ c[:, b2]]
        p = np.asarray(plaintext, dtype=np.uint8)[:, self.byte_index]
        v = SBOX[p ^ key_byte]
        if self.output_mask is not None:
            v = v ^ np.uint8(self.output_mask)
        return v if self.kind is ModelKind.IV_SBOX else HW[v]

    def label_table(self, plaintext, ciphertext) -> np.ndarray:
        """Labels under every key hypothesis, shape ``(n, 256)``."""
        keys = np.arange(256, dtype=np.uint8)
        if self.kind is ModelKind.HD_LAST_ROUND:
            c = np.asarray(ciphertext, dtype=np.uint8)
            b1, b2 = self.ciphertext_byte_pair
            return HW[INV_SBOX[c[:, b1, None] ^ keys[None, :]] ^ c[:, b2, None]]
        p = np.asarray(plaintext, dtype=np.uint8)[:, self.byte_index]
        v = SBOX[p[:, None] ^ keys[None, :]]
        if self.output_mask is not None:
            v = v ^ np.uint8(self.output_mask)
        return v if self.kind is ModelKind.IV_SBOX else HW[v]


def intermediate_value(model: LeakageModel, plaintext, ciphertext, key_byte_hypothesis: int) -> int:
    """Label of a single trace (16-byte plaintext/ciphertext) under one key guess."""
    pt = None if plaintext is None else np.frombuffer(bytes(plaintext), dtype=np.uint8)[None, :]
    ct = None if ciphertext is None else np.frombuffer(bytes(ciphertext), dtype=np.uint8)[None, :]
    return int(model.labels(pt, ct, key_byte_hypothesis)[0])
