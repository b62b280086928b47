"""Bit-exact wire codec: SDNVs, canonical blocks and whole bundles.

Layout::

    primary   := 0x06  flags:SDNV  dst:EID  src:EID  ts:SDNV  seq:SDNV  lifetime:SDNV
    EID       := length:SDNV  utf8-bytes
    block     := type:u8  flags:SDNV  length:SDNV  body
    bundle    := primary  block*        (last block has FLAG_LAST_BLOCK)

Blocks are emitted integrity first, then bundle-age, then other extensions,
payload last.  Only minimal SDNV encodings are accepted.
"""

from __future__ import annotations

from typing import List, Tuple

from .errors import (
    BadVersion,
    DecodeError,
    DuplicateSingletonBlock,
    InvalidEndpoint,
    MalformedBlock,
    MissingPayload,
    NonMinimal,
    Overflow,
    TrailingGarbage,
    Truncated,
)
from .model import (
    BLOCK_AGE,
    BLOCK_INTEGRITY,
    BLOCK_PAYLOAD,
    FLAG_LAST_BLOCK,
    Bundle,
    EndpointId,
    IntegrityBlock,
    RawBlock,
)

__all__ = [
    "RawBlock",
    "VERSION",
    "encode_sdnv",
    "decode_sdnv",
    "encode_eid",
    "encode_primary_fields",
    "encode_bundle",
    "encode_bundle_parts",
    "decode_bundle",
]

VERSION = 0x06
SDNV_MAX_BYTES = 10
_U64 = 1 << 64

# result lengths per integrity suite
SUITE_RESULT_LEN = {1: 4, 2: 32}


def encode_sdnv(value: int) -> bytes:
    if value < 0 or value >= _U64:
        raise ValueError(f"SDNV value out of range: {value}")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    out.reverse()
    return bytes(out)


def decode_sdnv(data, offset: int = 0) -> Tuple[int, int]:
    """Decode one SDNV starting at ``offset``.

    Returns ``(value, consumed)``.  Trailing bytes after the SDNV are left
    untouched.
    """
    end = len(data)
    if offset >= end:
        raise Truncated("no bytes for SDNV")
    if data[offset] == 0x80:
        raise NonMinimal("SDNV has a leading zero group")
    value = 0
    i = 0
    while True:
        if i >= SDNV_MAX_BYTES:
            raise Overflow("SDNV longer than 10 bytes")
        pos = offset + i
        if pos >= end:
            raise Truncated("SDNV continuation bit set on final byte")
        byte = data[pos]
        value = (value << 7) | (byte & 0x7F)
        i += 1
        if not byte & 0x80:
            break
    if value >= _U64:
        raise Overflow("SDNV value does not fit in 64 bits")
    return value, i


def encode_eid(eid: EndpointId) -> bytes:
    raw = eid.text.encode("utf-8")
    return encode_sdnv(len(raw)) + raw


def encode_primary_fields(bundle: Bundle) -> bytes:
    """Destination, source, timestamp, sequence and lifetime in wire form."""
    return b"".join((
        encode_eid(bundle.destination),
        encode_eid(bundle.source),
        encode_sdnv(bundle.creation_ts),
        encode_sdnv(bundle.creation_seq),
        encode_sdnv(bundle.lifetime),
    ))


def _block(block_type: int, flags: int, body: bytes) -> bytes:
    return bytes([block_type]) + encode_sdnv(flags) + encode_sdnv(len(body)) + body


def _integrity_body(blk: IntegrityBlock) -> bytes:
    return (encode_sdnv(blk.suite_id) + encode_sdnv(blk.coverage)
            + encode_sdnv(len(blk.result)) + blk.result)


def encode_bundle_parts(bundle: Bundle) -> List[Tuple[str, bytes]]:
    """Serialize ``bundle`` as labelled pieces whose concatenation is the image.

    Labels are ``primary``, ``integrity``, ``age``, ``ext<i>`` and ``payload``;
    the fault injector uses them to keep per-block error streams stable.
    """
    parts = [("primary", bytes([VERSION]) + encode_sdnv(bundle.flags)
              + encode_primary_fields(bundle))]
    if bundle.integrity is not None:
        parts.append(("integrity", _block(BLOCK_INTEGRITY, 0, _integrity_body(bundle.integrity))))
    if bundle.age_ms is not None:
        parts.append(("age", _block(BLOCK_AGE, 0, encode_sdnv(bundle.age_ms))))
    for i, ext in enumerate(bundle.extensions):
        parts.append((f"ext{i}", _block(ext.block_type, ext.flags & ~FLAG_LAST_BLOCK, ext.body)))
    parts.append(("payload", _block(BLOCK_PAYLOAD, FLAG_LAST_BLOCK, bundle.payload)))
    return parts


def encode_bundle(bundle: Bundle) -> bytes:
    return b"".join(piece for _, piece in encode_bundle_parts(bundle))


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def sdnv(self) -> int:
        value, n = decode_sdnv(self.data, self.pos)
        self.pos += n
        return value

    def take(self, n: int) -> bytes:
        if n > len(self.data) - self.pos:
            raise Truncated(f"need {n} bytes at offset {self.pos}")
        chunk = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return chunk

    def eid(self) -> EndpointId:
        raw = self.take(self.sdnv())
        try:
            return EndpointId(raw.decode("utf-8"))
        except (UnicodeDecodeError, InvalidEndpoint) as exc:
            raise MalformedBlock(f"bad endpoint id: {exc}") from None


def _parse_integrity(body: bytes) -> IntegrityBlock:
    r = _Reader(body)
    try:
        suite = r.sdnv()
        coverage = r.sdnv()
        result = r.take(r.sdnv())
    except DecodeError as exc:
        raise MalformedBlock(f"integrity block: {exc}") from None
    if r.pos != len(body):
        raise MalformedBlock("integrity block has trailing bytes")
    if SUITE_RESULT_LEN.get(suite) != len(result):
        raise MalformedBlock(f"integrity suite {suite} with {len(result)}-byte result")
    if coverage == 0 or coverage & ~0x3:
        raise MalformedBlock(f"integrity coverage {coverage:#x} invalid")
    return IntegrityBlock(suite, coverage, result)


def _parse_age(body: bytes) -> int:
    try:
        age, n = decode_sdnv(body)
    except DecodeError as exc:
        raise MalformedBlock(f"age block: {exc}") from None
    if n != len(body):
        raise MalformedBlock("age block has trailing bytes")
    return age


def decode_bundle(data) -> Bundle:
    """Parse a bundle image.  Raises a DecodeError subclass on any defect."""
    r = _Reader(data)
    version = r.take(1)[0]
    if version != VERSION:
        raise BadVersion(f"version byte {version:#04x}")
    flags = r.sdnv()
    destination = r.eid()
    source = r.eid()
    creation_ts = r.sdnv()
    creation_seq = r.sdnv()
    lifetime = r.sdnv()
    if lifetime == 0:
        raise MalformedBlock("lifetime is zero")

    payload = None
    age_ms = None
    integrity = None
    extensions = []
    while True:
        block_type = r.take(1)[0]
        bflags = r.sdnv()
        body = r.take(r.sdnv())
        if block_type == BLOCK_PAYLOAD:
            if payload is not None:
                raise DuplicateSingletonBlock("two payload blocks")
            payload = body
        elif block_type == BLOCK_AGE:
            if age_ms is not None:
                raise DuplicateSingletonBlock("two bundle-age blocks")
            age_ms = _parse_age(body)
        elif block_type == BLOCK_INTEGRITY:
            if integrity is not None:
                raise DuplicateSingletonBlock("two integrity blocks")
            integrity = _parse_integrity(body)
        else:
            extensions.append(RawBlock(block_type, bflags & ~FLAG_LAST_BLOCK, body))
        if bflags & FLAG_LAST_BLOCK:
            break

    if r.pos != len(data):
        raise TrailingGarbage(f"{len(data) - r.pos} bytes after last block")
    if payload is None:
        raise MissingPayload("no payload block")
    return Bundle(
        source=source,
        destination=destination,
        creation_ts=creation_ts,
        creation_seq=creation_seq,
        lifetime=lifetime,
        payload=payload,
        age_ms=age_ms,
        integrity=integrity,
        extensions=tuple(extensions),
        flags=flags,
    )
