"""Integrity blocks: a keyless CRC-32 reliability suite and an HMAC-SHA256 suite.

Both suites share one block format (suite id, coverage bitset, result) and
one coverage definition, so a node's verification policy decides whether a
bundle is checked at all and what kind of check is acceptable.  The
integrity block never covers itself.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import zlib
from dataclasses import dataclass, replace
from typing import Optional

from .errors import AlreadyProtected, EmptyCoverage, KeyRequired
from .model import Bundle, IntegrityBlock
from .wire import encode_primary_fields

__all__ = [
    "IntegrityBlock",
    "Suite",
    "Coverage",
    "Mode",
    "Verdict",
    "VerificationPolicy",
    "coverage_bytes",
    "crc32",
    "compute_result",
    "attach_integrity",
    "verify",
]


class Suite(enum.IntEnum):
    CRC32_RELIABILITY_ONLY = 1
    HMAC_SHA256 = 2


class Coverage(enum.IntFlag):
    PRIMARY = 1
    PAYLOAD = 2
    BOTH = 3


class Mode(str, enum.Enum):
    NONE = "none"
    RELIABILITY = "reliability"
    AUTHENTICATED = "authenticated"


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL_MISMATCH = "fail_mismatch"
    FAIL_ABSENT = "fail_absent"
    SKIPPED = "skipped"

    @property
    def failed(self) -> bool:
        return self in (Verdict.FAIL_MISMATCH, Verdict.FAIL_ABSENT)


@dataclass(frozen=True)
class VerificationPolicy:
    mode: Mode = Mode.NONE
    key: Optional[bytes] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.AUTHENTICATED and not self.key:
            raise KeyRequired("authenticated policy needs a key")


def coverage_bytes(bundle: Bundle, coverage: int) -> bytes:
    coverage = int(coverage)
    if not coverage & Coverage.BOTH:
        raise EmptyCoverage("coverage selects nothing")
    out = b""
    if coverage & Coverage.PRIMARY:
        out += encode_primary_fields(bundle)
    if coverage & Coverage.PAYLOAD:
        out += bundle.payload
    return out


def crc32(data: bytes) -> int:
    """CRC-32/ISO-HDLC: poly 0x04C11DB7, reflected, init and xorout 0xFFFFFFFF."""
    return zlib.crc32(data) & 0xFFFFFFFF


def compute_result(suite_id: int, data: bytes, key: Optional[bytes] = None) -> bytes:
    if suite_id == Suite.CRC32_RELIABILITY_ONLY:
        return crc32(data).to_bytes(4, "big")
    if suite_id == Suite.HMAC_SHA256:
        if not key:
            raise KeyRequired("HMAC suite needs a key")
        return hmac.new(key, data, hashlib.sha256).digest()
    raise ValueError(f"unknown integrity suite {suite_id}")


def attach_integrity(bundle: Bundle, suite_id: int, coverage: int = Coverage.PAYLOAD,
                     key: Optional[bytes] = None) -> Bundle:
    if bundle.integrity is not None:
        raise AlreadyProtected(f"bundle {bundle.bundle_id} already has an integrity block")
    if suite_id == Suite.HMAC_SHA256 and not key:
        raise KeyRequired("HMAC suite needs a key")
    result = compute_result(suite_id, coverage_bytes(bundle, coverage), key)
    return replace(bundle, integrity=IntegrityBlock(int(suite_id), int(coverage), result))


def _matches(blk: IntegrityBlock, bundle: Bundle, key: Optional[bytes]) -> bool:
    if blk.suite_id == Suite.HMAC_SHA256 and not key:
        return False
    expected = compute_result(blk.suite_id, coverage_bytes(bundle, blk.coverage), key)
    return hmac.compare_digest(expected, blk.result)


def verify(bundle: Bundle, policy: VerificationPolicy) -> Verdict:
    if policy.mode is Mode.NONE:
        return Verdict.SKIPPED
    blk = bundle.integrity
    if policy.mode is Mode.AUTHENTICATED:
        if blk is None or blk.suite_id != Suite.HMAC_SHA256:
            return Verdict.FAIL_ABSENT
    elif blk is None:
        return Verdict.FAIL_ABSENT
    return Verdict.PASS if _matches(blk, bundle, policy.key) else Verdict.FAIL_MISMATCH
