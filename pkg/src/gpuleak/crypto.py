"""AES-128 (ECB) and SHA-1, used as victim workloads.

AES operates on all blocks of a buffer at once with numpy, which is the
only reason it is fast enough for thousands of case-study trials. Key words
follow the usual big-endian convention, so expanding the key
``deadbeef cafed00d baddcafe 8badf00d`` yields round_keys[0..3] equal to
those four integers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

BLOCK = 16

CASE_STUDY_KEY = (0xDEADBEEF, 0xCAFED00D, 0xBADDCAFE, 0x8BADF00D)


def _xtime(b: int) -> int:
    b <<= 1
    return (b ^ 0x11B) if b & 0x100 else b


def _gmul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a = _xtime(a)
        b >>= 1
    return out


def _build_sbox() -> np.ndarray:
    # log/antilog tables over generator 3
    exp, log = [0] * 255, [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _gmul(x, 3)
    inv = [0] + [exp[(255 - log[a]) % 255] for a in range(1, 256)]
    sbox = np.zeros(256, dtype=np.uint8)
    for x in range(256):
        b = inv[x]
        s = b
        for shift in range(1, 5):
            s ^= ((b << shift) | (b >> (8 - shift))) & 0xFF
        sbox[x] = s ^ 0x63
    return sbox


SBOX = _build_sbox()
INV_SBOX = np.argsort(SBOX).astype(np.uint8)
_MUL = {k: np.array([_gmul(x, k) for x in range(256)], dtype=np.uint8)
        for k in (2, 3, 9, 11, 13, 14)}

# state byte i sits at row i % 4, column i // 4
_SHIFT_ROWS = np.empty(16, dtype=np.intp)
for _i, (_c, _r) in enumerate((c, r) for c in range(4) for r in range(4)):
    _SHIFT_ROWS[_i] = _r + 4 * ((_c + _r) % 4)
_INV_SHIFT_ROWS = np.argsort(_SHIFT_ROWS)

_RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]


def _key_words(key) -> list[int]:
    if isinstance(key, AesKey128):
        return list(key.key)
    if isinstance(key, (bytes, bytearray)):
        if len(key) != 16:
            raise ValueError("AES-128 key must be 16 bytes")
        return list(struct.unpack(">4I", key))
    words = [int(w) & 0xFFFFFFFF for w in key]
    if len(words) != 4:
        raise ValueError("AES-128 key must be 4 words")
    return words


def expand_key(key) -> list[int]:
    """Standard AES-128 key schedule; returns 44 words."""
    w = _key_words(key)
    for i in range(4, 44):
        t = w[i - 1]
        if i % 4 == 0:
            t = ((t << 8) | (t >> 24)) & 0xFFFFFFFF
            t = int.from_bytes(bytes(SBOX[b] for b in t.to_bytes(4, "big")), "big")
            t ^= _RCON[i // 4 - 1] << 24
        w.append(w[i - 4] ^ t)
    return w


@dataclass(frozen=True)
class AesKey128:
    key: tuple[int, ...]
    round_keys: tuple[int, ...]

    @classmethod
    def from_words(cls, words) -> "AesKey128":
        words = tuple(_key_words(words))
        return cls(words, tuple(expand_key(words)))

    def key_bytes(self) -> bytes:
        return struct.pack(">4I", *self.key)


def _round_key_bytes(round_keys) -> np.ndarray:
    rk = np.array(round_keys, dtype=">u4").view(np.uint8)
    return rk.reshape(11, 16)


def _mix(state: np.ndarray, coeffs) -> np.ndarray:
    cols = state.reshape(-1, 4, 4)
    a0, a1, a2, a3 = cols[:, :, 0], cols[:, :, 1], cols[:, :, 2], cols[:, :, 3]
    m = [_MUL.get(k) for k in coeffs]

    def mul(tbl, x):
        return x if tbl is None else tbl[x]

    out = np.empty_like(cols)
    rows = (a0, a1, a2, a3)
    for r in range(4):
        acc = np.zeros_like(a0)
        for j in range(4):
            acc ^= mul(m[(j - r) % 4], rows[j])
        out[:, :, r] = acc
    return out.reshape(-1, 16)


def _blocks(data: bytes) -> np.ndarray:
    if len(data) % BLOCK:
        raise ValueError(f"length {len(data)} is not a multiple of {BLOCK} bytes")
    return np.frombuffer(bytes(data), dtype=np.uint8).reshape(-1, 16).copy()


def aes128_encrypt_ecb(plaintext: bytes, key) -> bytes:
    """AES-128 in ECB mode over every 16-byte block of ``plaintext``."""
    return encrypt_with_schedule(plaintext, expand_key(key))


def encrypt_with_schedule(plaintext: bytes, round_keys) -> bytes:
    """ECB encryption from an already expanded 44-word schedule."""
    if len(round_keys) != 44:
        raise ValueError("AES-128 schedule must hold 44 words")
    rk = _round_key_bytes([int(w) for w in round_keys])
    state = _blocks(plaintext)
    state ^= rk[0]
    for rnd in range(1, 10):
        state = SBOX[state][:, _SHIFT_ROWS]
        state = _mix(state, (2, 3, 1, 1))
        state ^= rk[rnd]
    state = SBOX[state][:, _SHIFT_ROWS]
    state ^= rk[10]
    return state.tobytes()


def aes128_decrypt_ecb(ciphertext: bytes, key) -> bytes:
    rk = _round_key_bytes(expand_key(key))
    state = _blocks(ciphertext)
    state ^= rk[10]
    state = INV_SBOX[state[:, _INV_SHIFT_ROWS]]
    for rnd in range(9, 0, -1):
        state ^= rk[rnd]
        state = _mix(state, (14, 11, 13, 9))
        state = INV_SBOX[state[:, _INV_SHIFT_ROWS]]
    state ^= rk[0]
    return state.tobytes()


# ---------------------------------------------------------------------- SHA-1

def _rotl(x: int, n: int) -> int:
    return ((x << n) | (x >> (32 - n))) & 0xFFFFFFFF


def sha1(message: bytes) -> bytes:
    """Plain SHA-1; returns the 20-byte digest."""
    message = bytes(message)
    h0, h1, h2, h3, h4 = 0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0
    bit_len = len(message) * 8
    padded = message + b"\x80" + b"\x00" * ((55 - len(message)) % 64) + struct.pack(">Q", bit_len)
    for chunk in range(0, len(padded), 64):
        w = list(struct.unpack(">16I", padded[chunk:chunk + 64]))
        for i in range(16, 80):
            w.append(_rotl(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1))
        a, b, c, d, e = h0, h1, h2, h3, h4
        for i in range(80):
            if i < 20:
                f, k = (b & c) | (~b & d), 0x5A827999
            elif i < 40:
                f, k = b ^ c ^ d, 0x6ED9EBA1
            elif i < 60:
                f, k = (b & c) | (b & d) | (c & d), 0x8F1BBCDC
            else:
                f, k = b ^ c ^ d, 0xCA62C1D6
            a, b, c, d, e = (_rotl(a, 5) + f + e + k + w[i]) & 0xFFFFFFFF, a, _rotl(b, 30), c, d
        h0 = (h0 + a) & 0xFFFFFFFF
        h1 = (h1 + b) & 0xFFFFFFFF
        h2 = (h2 + c) & 0xFFFFFFFF
        h3 = (h3 + d) & 0xFFFFFFFF
        h4 = (h4 + e) & 0xFFFFFFFF
    return struct.pack(">5I", h0, h1, h2, h3, h4)


@lru_cache(maxsize=64)
def sha1_cached(message: bytes) -> bytes:
    # pure function of the bytes, so memoising is observationally identical
    return sha1(message)


# ----------------------------------------------------------------- payloads

def case_study_plaintext() -> bytes:
    """The fixed 4KB plaintext bundled with the package."""
    data = resources.files("gpuleak.data").joinpath("plaintext.txt").read_bytes()
    assert len(data) == 4096
    return data


def integrity_plaintext(nbytes: int = 16 * 1024) -> bytes:
    """Constant buffer hashed by the write-attack victim."""
    return bytes((i * 7 + (i >> 8)) & 0xFF for i in range(nbytes))


def bytes_to_words(data: bytes) -> np.ndarray:
    if len(data) % 4:
        raise ValueError("byte length must be a multiple of 4")
    return np.frombuffer(bytes(data), dtype="<u4").astype(np.uint32)


def words_to_bytes(words) -> bytes:
    return np.asarray(words, dtype=np.uint32).astype("<u4").tobytes()
