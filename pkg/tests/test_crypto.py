import hashlib
import json
import random
from pathlib import Path

import numpy as np
import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from hypothesis import given, settings
from hypothesis import strategies as st

from gpuleak import crypto

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_vectors.json").read_text())


def reference_aes(key: bytes, pt: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(pt) + enc.finalize()


def test_standard_known_answers():
    key = bytes(range(16))
    pt = bytes.fromhex("00112233445566778899aabbccddeeff")
    assert crypto.aes128_encrypt_ecb(pt, key).hex() == "69c4e0d86a7b0430d8cdb78070b4c55a"
    assert crypto.sha1(b"abc").hex() == "a9993e364706816aba3e25717850c26c9cd0d89d"


def test_key_schedule_known_answer():
    rk = crypto.expand_key(bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c"))
    assert rk[4] == 0xA0FAFE17
    assert rk[43] == 0xB6630CA6


def test_case_study_key_schedule_starts_with_key():
    key = crypto.AesKey128.from_words(crypto.CASE_STUDY_KEY)
    assert key.round_keys[:4] == crypto.CASE_STUDY_KEY
    assert len(key.round_keys) == 44
    assert key.key_bytes().hex() == "deadbeefcafed00dbaddcafe8badf00d"


@pytest.mark.parametrize("case", GOLDEN["aes128_ecb"], ids=lambda c: c["key"][:8])
def test_aes_golden(case):
    key, pt = bytes.fromhex(case["key"]), bytes.fromhex(case["plaintext"])
    ct = crypto.aes128_encrypt_ecb(pt, key)
    assert ct.hex() == case["ciphertext"]
    assert crypto.aes128_decrypt_ecb(ct, key) == pt


@pytest.mark.parametrize("case", GOLDEN["sha1"], ids=lambda c: str(len(c["message"]) // 2))
def test_sha1_golden(case):
    assert crypto.sha1(bytes.fromhex(case["message"])).hex() == case["digest"]


def test_aes_random_against_reference():
    rng = random.Random(11)
    for _ in range(120):
        key = rng.randbytes(16)
        pt = rng.randbytes(16 * rng.randint(1, 6))
        assert crypto.aes128_encrypt_ecb(pt, key) == reference_aes(key, pt)


def test_sha1_random_against_reference():
    rng = random.Random(12)
    for _ in range(120):
        msg = rng.randbytes(rng.randint(0, 200))
        assert crypto.sha1(msg) == hashlib.sha1(msg).digest()


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=16, max_size=16), st.binary(min_size=16, max_size=128))
def test_aes_roundtrip_property(key, data):
    pt = data[: len(data) // 16 * 16]
    ct = crypto.aes128_encrypt_ecb(pt, key)
    assert ct == reference_aes(key, pt)
    assert crypto.aes128_decrypt_ecb(ct, key) == pt


@settings(max_examples=50, deadline=None)
@given(st.binary(max_size=300))
def test_sha1_property(msg):
    assert crypto.sha1(msg) == hashlib.sha1(msg).digest()


def test_sha1_cached_matches():
    msg = crypto.integrity_plaintext()
    assert len(msg) == 16 * 1024
    assert crypto.sha1_cached(msg) == hashlib.sha1(msg).digest()


def test_bad_inputs():
    with pytest.raises(ValueError):
        crypto.aes128_encrypt_ecb(b"x" * 15, bytes(16))
    with pytest.raises(ValueError):
        crypto.expand_key(b"short")
    with pytest.raises(ValueError):
        crypto.encrypt_with_schedule(bytes(16), [0] * 40)
    with pytest.raises(ValueError):
        crypto.bytes_to_words(b"abc")


def test_word_conversion_is_little_endian():
    assert crypto.bytes_to_words(b"\x01\x00\x00\x00\x00\x00\x00\x02").tolist() == [1, 0x02000000]
    data = bytes(range(64))
    assert crypto.words_to_bytes(crypto.bytes_to_words(data)) == data


def test_case_study_plaintext_properties():
    pt = crypto.case_study_plaintext()
    assert len(pt) == 4096
    words = crypto.bytes_to_words(pt)
    key = set(crypto.CASE_STUDY_KEY)
    # the scan relies on the first word being unique and the key absent
    assert (words == words[0]).sum() == 1
    assert not key & set(words.tolist())
    ct = crypto.bytes_to_words(crypto.aes128_encrypt_ecb(pt, crypto.CASE_STUDY_KEY))
    assert not key & set(ct.tolist()) and words[0] not in ct
    rk = crypto.expand_key(crypto.CASE_STUDY_KEY)[4:]
    assert not key & set(rk) and int(words[0]) not in rk
    assert np.isin(words, ct).sum() == 0
