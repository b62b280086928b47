"""Relative processor cost of the two integrity suites.

Only the ratio is meaningful; absolute times depend on the host.  No
threshold is asserted anywhere.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from ..integrity import Coverage, compute_result, coverage_bytes
from ..model import Bundle, EndpointId

_KEY = bytes(32)


@dataclass(frozen=True)
class SuiteCost:
    payload_size: int
    repeats: int
    crc32_s: float
    hmac_sha256_s: float

    @property
    def ratio(self) -> float:
        """HMAC-SHA256 CPU time per CRC-32 CPU time."""
        return self.hmac_sha256_s / self.crc32_s if self.crc32_s > 0 else float("inf")

    def __str__(self) -> str:
        return (f"payload {self.payload_size} B x {self.repeats}: "
                f"crc32 {self.crc32_s * 1e6 / self.repeats:.1f} us/bundle, "
                f"hmac-sha256 {self.hmac_sha256_s * 1e6 / self.repeats:.1f} us/bundle, "
                f"ratio {self.ratio:.1f}x")


def _time(data: bytes, suite: int, repeats: int) -> float:
    key = _KEY if suite == 2 else None
    start = time.process_time()
    for _ in range(repeats):
        compute_result(suite, data, key)
    return time.process_time() - start


def suite_cost(payload_size: int = 10_240, repeats: int = 2000) -> SuiteCost:
    """CPU seconds spent computing each suite ``repeats`` times over one bundle's coverage.

    Coverage (primary fields plus payload) is built once, so only the
    checksum or MAC itself is timed.
    """
    b = Bundle(EndpointId("dtn:a/app"), EndpointId("dtn:c/app"), 0, 0, 3600, bytes(payload_size))
    data = coverage_bytes(b, Coverage.BOTH)
    _time(data, 1, 10), _time(data, 2, 10)  # warm up
    return SuiteCost(payload_size, repeats, _time(data, 1, repeats), _time(data, 2, repeats))
