import random
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from dtnlab import errors
from dtnlab.agent import Mutation, mutate_in_transit
from dtnlab.integrity import (
    Coverage,
    Mode,
    Verdict,
    VerificationPolicy,
    attach_integrity,
    compute_result,
    coverage_bytes,
    crc32,
    verify,
)
from dtnlab.model import Bundle, EndpointId, RawBlock
from dtnlab.wire import decode_bundle, encode_bundle, encode_primary_fields

DATA = Path(__file__).parent / "data"
POLY_REFLECTED = 0xEDB88320
KEY = bytes(range(32))


def crc32_bitwise(data: bytes) -> int:
    """Reference CRC-32/ISO-HDLC, one bit at a time."""
    reg = 0xFFFFFFFF
    for byte in data:
        reg ^= byte
        for _ in range(8):
            reg = (reg >> 1) ^ (POLY_REFLECTED if reg & 1 else 0)
    return reg ^ 0xFFFFFFFF


def _bundle(payload=b"hello world", **kw):
    return Bundle(EndpointId("dtn:a/app"), EndpointId("dtn:c/app"), 1000, 0, 3600, payload, **kw)


# -- CRC --------------------------------------------------------------------------------

def test_oracle_check_values():
    assert crc32_bitwise(b"") == 0x00000000
    assert crc32_bitwise(b"123456789") == 0xCBF43926


def test_crc_matches_oracle():
    rng = random.Random(11)
    for n in list(range(0, 40)) + [rng.randint(40, 3000) for _ in range(40)]:
        data = rng.randbytes(n)
        assert crc32(data) == crc32_bitwise(data)


def _vectors():
    for line in (DATA / "integrity_vectors.txt").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cov, suite, key, result = line.split()
        unhex = (lambda s: b"" if s == "-" else bytes.fromhex(s))
        yield unhex(cov), int(suite), (None if key == "-" else unhex(key)), unhex(result)


@pytest.mark.parametrize("cov, suite, key, result", list(_vectors()))
def test_golden_vectors(cov, suite, key, result):
    assert compute_result(suite, cov, key) == result
    if suite == 1:
        assert crc32_bitwise(cov).to_bytes(4, "big") == result


def test_single_bit_flips_detected_exhaustive():
    rng = random.Random(12)
    for n in (1, 17, 1024, 8192):
        data = rng.randbytes(n)
        good = crc32(data)
        buf = bytearray(data)
        for bit in range(n * 8):
            buf[bit >> 3] ^= 0x80 >> (bit & 7)
            assert crc32(buf) != good
            buf[bit >> 3] ^= 0x80 >> (bit & 7)


def test_two_bit_flips_detected_sampled():
    rng = random.Random(13)
    data = rng.randbytes(8192)
    good = crc32(data)
    buf = bytearray(data)
    nbits = len(data) * 8
    for _ in range(100_000):
        i, j = rng.sample(range(nbits), 2)
        for b in (i, j):
            buf[b >> 3] ^= 0x80 >> (b & 7)
        assert crc32(buf) != good
        for b in (i, j):
            buf[b >> 3] ^= 0x80 >> (b & 7)


def _table():
    out = np.zeros(256, dtype=np.uint32)
    for i in range(256):
        reg = i
        for _ in range(8):
            reg = (reg >> 1) ^ (POLY_REFLECTED if reg & 1 else 0)
        out[i] = reg
    return out


def crc_linear_batch(errs: np.ndarray) -> np.ndarray:
    """Linear part of the CRC (zero init, no xorout) for each row of ``errs``.

    CRC is affine, so crc(x ^ e) == crc(x) exactly when this is zero.
    """
    table = _table()
    reg = np.zeros(errs.shape[0], dtype=np.uint32)
    for col in range(errs.shape[1]):
        reg = table[(reg ^ errs[:, col]) & 0xFF] ^ (reg >> np.uint32(8))
    return reg


def test_batch_linear_crc_agrees_with_zlib():
    rng = np.random.default_rng(14)
    errs = rng.integers(0, 256, size=(200, 16), dtype=np.uint8)
    lin = crc_linear_batch(errs)
    zero = zlib.crc32(bytes(16))
    for row, got in zip(errs, lin):
        assert int(got) == zlib.crc32(row.tobytes()) ^ zero
    # and the affine identity, end to end
    x = bytes(rng.integers(0, 256, 16, dtype=np.uint8))
    for row, got in zip(errs[:20], lin[:20]):
        corrupted = bytes(a ^ b for a, b in zip(x, row.tobytes()))
        assert (crc32(corrupted) ^ crc32(x)) == int(got)


def test_many_bit_corruption_undetected_rate():
    """Random corruption of >= 33 bits: misses occur at about 2^-32 per trial."""
    rng = np.random.default_rng(15)
    trials = misses = 0
    while trials < 10_000_000:
        errs = rng.integers(0, 256, size=(1_000_000, 16), dtype=np.uint8)
        weight = np.unpackbits(errs, axis=1).sum(axis=1)
        errs = errs[weight >= 33]
        trials += errs.shape[0]
        misses += int((crc_linear_batch(errs) == 0).sum())
    # 5 x 2^-32 x 1e7 is about 0.012, so any miss would be out of bounds
    assert misses / trials <= 5 * 2.0**-32


# -- coverage -----------------------------------------------------------------------------

def test_coverage_bytes():
    b = _bundle(b"payload")
    assert coverage_bytes(b, Coverage.PAYLOAD) == b"payload"
    assert coverage_bytes(b, Coverage.PRIMARY) == encode_primary_fields(b)
    assert coverage_bytes(b, Coverage.BOTH) == encode_primary_fields(b) + b"payload"
    with pytest.raises(errors.EmptyCoverage):
        coverage_bytes(b, 0)


def test_primary_fields_exclude_mutable_blocks():
    b = _bundle(age_ms=5, extensions=(RawBlock(200, 0, b"x"),))
    assert encode_primary_fields(b) == encode_primary_fields(_bundle())


# -- attach / verify --------------------------------------------------------------------

@pytest.mark.parametrize("suite", [1, 2])
@pytest.mark.parametrize("coverage", [Coverage.PRIMARY, Coverage.PAYLOAD, Coverage.BOTH])
def test_attach_verify_round_trip(suite, coverage):
    key = KEY if suite == 2 else None
    b = attach_integrity(_bundle(), suite, coverage, key)
    assert b.integrity.suite_id == suite and b.integrity.coverage == coverage
    b = decode_bundle(encode_bundle(b))
    mode = Mode.AUTHENTICATED if suite == 2 else Mode.RELIABILITY
    assert verify(b, VerificationPolicy(mode, key)) is Verdict.PASS
    assert verify(b, VerificationPolicy(Mode.RELIABILITY, key)) is Verdict.PASS


def test_crc_result_matches_oracle_on_bundle():
    b = attach_integrity(_bundle(b"123456789"), 1)
    assert b.integrity.result == bytes.fromhex("cbf43926")


def test_tampered_payload_fails():
    for suite, key in ((1, None), (2, KEY)):
        b = attach_integrity(_bundle(), suite, Coverage.PAYLOAD, key)
        bad = replace(b, payload=b"hello worle")
        assert verify(bad, VerificationPolicy(Mode.RELIABILITY, key)) is Verdict.FAIL_MISMATCH


def test_wrong_key_fails():
    b = attach_integrity(_bundle(), 2, Coverage.BOTH, KEY)
    pol = VerificationPolicy(Mode.AUTHENTICATED, b"other key")
    assert verify(b, pol) is Verdict.FAIL_MISMATCH


def test_hmac_without_key_under_reliability_fails():
    b = attach_integrity(_bundle(), 2, Coverage.PAYLOAD, KEY)
    assert verify(b, VerificationPolicy(Mode.RELIABILITY)) is Verdict.FAIL_MISMATCH


def test_absent_block():
    b = _bundle()
    assert verify(b, VerificationPolicy(Mode.RELIABILITY)) is Verdict.FAIL_ABSENT
    assert verify(b, VerificationPolicy(Mode.AUTHENTICATED, KEY)) is Verdict.FAIL_ABSENT


def test_authenticated_rejects_crc_block():
    b = attach_integrity(_bundle(), 1)
    assert verify(b, VerificationPolicy(Mode.AUTHENTICATED, KEY)) is Verdict.FAIL_ABSENT


def test_mode_none_always_skips():
    rng = random.Random(16)
    for _ in range(50):
        b = _bundle(rng.randbytes(rng.randint(0, 50)))
        if rng.random() < 0.5:
            b = attach_integrity(b, 1)
            b = replace(b, payload=b.payload + b"!")
        assert verify(b, VerificationPolicy(Mode.NONE)) is Verdict.SKIPPED


def test_attach_errors():
    with pytest.raises(errors.KeyRequired):
        attach_integrity(_bundle(), 2)
    with pytest.raises(errors.AlreadyProtected):
        attach_integrity(attach_integrity(_bundle(), 1), 1)
    with pytest.raises(errors.EmptyCoverage):
        attach_integrity(_bundle(), 1, 0)
    with pytest.raises(errors.KeyRequired):
        VerificationPolicy(Mode.AUTHENTICATED)


# -- what coverage does and does not protect ----------------------------------------------

def test_extension_mutation_passes_payload_coverage():
    b = attach_integrity(_bundle(extensions=(RawBlock(200, 0, b"orig"),)), 1)
    m = mutate_in_transit(b, Mutation("extension", b"evil", 200))
    assert m.extensions[0].body == b"evil"
    assert verify(m, VerificationPolicy(Mode.RELIABILITY)) is Verdict.PASS


def test_lifetime_mutation_gap_and_fix():
    pol = VerificationPolicy(Mode.RELIABILITY)
    weak = mutate_in_transit(attach_integrity(_bundle(), 1, Coverage.PAYLOAD),
                             Mutation("lifetime", 6))
    assert weak.lifetime == 6 and verify(weak, pol) is Verdict.PASS
    strong = mutate_in_transit(attach_integrity(_bundle(), 1, Coverage.BOTH),
                               Mutation("lifetime", 6))
    assert verify(strong, pol) is Verdict.FAIL_MISMATCH


def test_any_primary_field_change_detected_under_primary_coverage():
    pol = VerificationPolicy(Mode.RELIABILITY)
    b = attach_integrity(_bundle(), 1, Coverage.PRIMARY)
    for m in (Mutation("lifetime", 3601), Mutation("creation_ts", 999),
              Mutation("creation_seq", 1), Mutation("destination", "dtn:x/app"),
              Mutation("source", "dtn:a/other")):
        assert verify(mutate_in_transit(b, m), pol) is Verdict.FAIL_MISMATCH
