"""Bundle value types, bundle creation and the two expiry disciplines.

Two ways of deciding that a bundle has outlived its lifetime are supported:

* UTC discipline: the creation timestamp (seconds since 2000-01-01 UTC, read
  from the creating node's clock) is compared against the evaluating node's
  clock.  Clock error on either side shows up directly in the decision.
* Age discipline: when a bundle-age block is present, only the accumulated
  age counts and the timestamp is ignored.

Expiry comparisons are strict, so a bundle at exactly ``creation_ts +
lifetime`` is still live.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Optional

from .errors import AlreadyExpired, InvalidEndpoint, InvalidLifetime, NoAgeBlock

# Canonical block type codes.
BLOCK_PAYLOAD = 1
BLOCK_AGE = 10
BLOCK_INTEGRITY = 13

# Block processing flags.
FLAG_LAST_BLOCK = 0x01
FLAG_DISCARD_IF_UNPROCESSABLE = 0x02

NULL_EID = "dtn:none"


@dataclass(frozen=True, order=True)
class EndpointId:
    """Textual endpoint id, ``dtn:<node>/<app>`` or the null endpoint."""

    text: str

    def __post_init__(self):
        t = self.text
        if not isinstance(t, str) or not t:
            raise InvalidEndpoint("endpoint id must be a non-empty string")
        if any(not (0x21 <= ord(c) <= 0x7E) for c in t):
            raise InvalidEndpoint(f"endpoint id must be printable ASCII: {t!r}")
        if t == NULL_EID:
            return
        if not t.startswith("dtn:"):
            raise InvalidEndpoint(f"endpoint id must use the dtn scheme: {t!r}")
        node, sep, app = t[4:].partition("/")
        if not node or not sep or not app:
            raise InvalidEndpoint(f"endpoint id needs node and app parts: {t!r}")

    @classmethod
    def make(cls, node: str, app: str) -> "EndpointId":
        return cls(f"dtn:{node}/{app}")

    @property
    def is_null(self) -> bool:
        return self.text == NULL_EID

    @property
    def node(self) -> Optional[str]:
        if self.is_null:
            return None
        return self.text[4:].partition("/")[0]

    @property
    def app(self) -> Optional[str]:
        if self.is_null:
            return None
        return self.text[4:].partition("/")[2]

    def __str__(self):
        return self.text


@dataclass(frozen=True)
class RawBlock:
    """A canonical block kept opaque (extension blocks the agent does not interpret)."""

    block_type: int
    flags: int
    body: bytes


@dataclass(frozen=True)
class IntegrityBlock:
    """Checksum or MAC over selected parts of a bundle.

    ``suite_id`` 1 is the keyless CRC-32 reliability suite (4-byte result),
    2 is HMAC-SHA256 (32-byte result).  ``coverage`` bit 0 selects the
    immutable primary fields, bit 1 the payload.
    """

    suite_id: int
    coverage: int
    result: bytes


@dataclass(frozen=True)
class Bundle:
    source: EndpointId
    destination: EndpointId
    creation_ts: int
    creation_seq: int
    lifetime: int
    payload: bytes = b""
    age_ms: Optional[int] = None
    integrity: Optional[IntegrityBlock] = None
    extensions: tuple = ()
    flags: int = 0

    @property
    def bundle_id(self) -> tuple:
        return (self.source.text, self.creation_ts, self.creation_seq)

    @property
    def has_age_block(self) -> bool:
        return self.age_ms is not None

    @property
    def expiry_deadline(self) -> int:
        """UTC-discipline deadline; meaningless when an age block governs expiry."""
        return self.creation_ts + self.lifetime


@dataclass(frozen=True)
class ExpiryPolicy:
    # seconds a creation timestamp may lie ahead of the local clock
    future_tolerance: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.future_tolerance) or self.future_tolerance < 0:
            raise ValueError("future_tolerance must be finite and >= 0")


class Expiry(str, enum.Enum):
    LIVE = "live"
    EXPIRED = "expired"
    INVALID_FUTURE_TIMESTAMP = "invalid_future_timestamp"


class SequenceCounter:
    """Hands out creation sequence numbers per ``(source, creation_ts)``."""

    def __init__(self):
        self._next = defaultdict(int)

    def next(self, source: EndpointId, creation_ts: int) -> int:
        key = (source.text, creation_ts)
        seq = self._next[key]
        self._next[key] = seq + 1
        return seq


_default_counter = SequenceCounter()


def new_bundle(
    source: EndpointId,
    destination: EndpointId,
    lifetime: int,
    payload: bytes,
    local_now: float,
    with_age_block: bool = False,
    counter: Optional[SequenceCounter] = None,
) -> Bundle:
    """Create a bundle stamped with the creating node's (possibly wrong) clock."""
    if lifetime <= 0:
        raise InvalidLifetime(f"lifetime must be > 0, got {lifetime}")
    counter = counter if counter is not None else _default_counter
    # SDNV cannot carry negative timestamps; a clock before the epoch reads 0.
    ts = max(0, math.floor(local_now))
    return Bundle(
        source=source,
        destination=destination,
        creation_ts=ts,
        creation_seq=counter.next(source, ts),
        lifetime=int(lifetime),
        payload=bytes(payload),
        age_ms=0 if with_age_block else None,
    )


def is_expired(bundle: Bundle, local_now: float, policy: ExpiryPolicy = ExpiryPolicy()) -> Expiry:
    if bundle.age_ms is not None:
        # age block governs alone; the timestamp is not consulted at all
        if bundle.age_ms / 1000 > bundle.lifetime:
            return Expiry.EXPIRED
        return Expiry.LIVE
    if bundle.creation_ts > local_now + policy.future_tolerance:
        return Expiry.INVALID_FUTURE_TIMESTAMP
    if local_now > bundle.creation_ts + bundle.lifetime:
        return Expiry.EXPIRED
    return Expiry.LIVE


def accumulate_age(bundle: Bundle, residence_ms: int) -> Bundle:
    if bundle.age_ms is None:
        raise NoAgeBlock("bundle carries no bundle-age block")
    if residence_ms < 0:
        raise ValueError("residence time cannot be negative")
    if residence_ms == 0:
        return bundle
    return replace(bundle, age_ms=bundle.age_ms + int(residence_ms))


def _remaining(bundle: Bundle, local_now: float) -> float:
    if bundle.age_ms is not None:
        return bundle.lifetime - bundle.age_ms / 1000
    return bundle.creation_ts + bundle.lifetime - local_now


def remaining_lifetime(bundle: Bundle, local_now: float) -> float:
    """Seconds of lifetime left; raises AlreadyExpired unless strictly positive."""
    left = _remaining(bundle, local_now)
    if left <= 0:
        raise AlreadyExpired(f"bundle {bundle.bundle_id} has {left:g} s left")
    return left
