"""Convergence-layer adapters and fault injection.

Every adapter frames a bundle image as a 4-byte big-endian length followed by
the image.  Adapters never look inside the image: a flipped payload bit is
handed up to the agent exactly as received.

Faults act on the serialized image, so the same mechanism can break a header
(the agent then fails to decode) or silently alter payload bytes.  All
randomness comes from numpy generators seeded through :func:`derive_seed`.
"""

from __future__ import annotations

import hashlib
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import BadFrame, FrameTooLarge, LinkDown

DEFAULT_PORT = 4556
MAX_FRAME = 1 << 24

_LEN = struct.Struct("!I")
# bits drawn per chunk in corrupt_transit; bounds memory on large images
_CHUNK_BITS = 1 << 20


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary printable parts (never uses ``hash``)."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def make_rng(*parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))


@dataclass(frozen=True)
class FaultModel:
    transit_ber: float = 0.0
    storage_corrupt_prob: float = 0.0
    storage_flip_bits: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.transit_ber < 1.0:
            raise ValueError(f"transit_ber must be in [0, 1): {self.transit_ber}")
        if not 0.0 <= self.storage_corrupt_prob <= 1.0:
            raise ValueError(f"storage_corrupt_prob must be in [0, 1]: {self.storage_corrupt_prob}")
        if self.storage_flip_bits < 1:
            raise ValueError("storage_flip_bits must be >= 1")
        if not 0 <= self.rng_seed < 1 << 64:
            raise ValueError("rng_seed must be an unsigned 64-bit value")

    @property
    def is_clean(self) -> bool:
        return self.transit_ber == 0 and self.storage_corrupt_prob == 0


def corrupt_transit(data: bytes, ber: float, rng: np.random.Generator) -> bytes:
    """Flip each bit independently with probability ``ber``.

    One uniform draw per bit, compared against ``ber``: for a fixed generator
    state a higher ``ber`` flips a superset of the bits a lower one flips.
    """
    if not 0.0 <= ber < 1.0:
        raise ValueError(f"ber must be in [0, 1): {ber}")
    if ber == 0.0 or not data:
        return bytes(data)
    buf = np.frombuffer(bytes(data), dtype=np.uint8).copy()
    nbits = buf.size * 8
    hit = False
    for start in range(0, nbits, _CHUNK_BITS):
        n = min(_CHUNK_BITS, nbits - start)
        mask = rng.random(n) < ber
        if mask.any():
            hit = True
            # chunk boundaries are byte aligned since _CHUNK_BITS % 8 == 0
            buf[start // 8:(start + n) // 8] ^= np.packbits(mask)
    return buf.tobytes() if hit else bytes(data)


def corrupt_segments(parts: Sequence[Tuple[str, bytes]], ber: float, *seed_parts) -> bytes:
    """Corrupt a labelled image with an independent stream per label.

    Blocks present in two variants of a bundle (with and without an integrity
    block, say) then see identical flips, which pairs experiments.
    """
    return b"".join(
        corrupt_transit(piece, ber, make_rng(*seed_parts, label)) for label, piece in parts
    )


def corrupt_storage(data: bytes, model: FaultModel, rng: np.random.Generator) -> bytes:
    """With probability ``storage_corrupt_prob`` flip ``storage_flip_bits`` distinct bits."""
    if model.storage_corrupt_prob == 0.0 or not data:
        return bytes(data)
    if rng.random() >= model.storage_corrupt_prob:
        return bytes(data)
    nbits = len(data) * 8
    positions = rng.choice(nbits, size=min(model.storage_flip_bits, nbits), replace=False)
    buf = bytearray(data)
    for pos in positions.tolist():
        buf[pos >> 3] ^= 0x80 >> (pos & 7)
    return bytes(buf)


def frame(bundle_bytes: bytes) -> bytes:
    if len(bundle_bytes) > MAX_FRAME:
        raise FrameTooLarge(f"{len(bundle_bytes)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(bundle_bytes)) + bytes(bundle_bytes)


def parse_frames(stream: bytes) -> Tuple[list, bytes]:
    """Split a byte stream into complete frames plus the unconsumed remainder."""
    out = []
    pos = 0
    while len(stream) - pos >= 4:
        (n,) = _LEN.unpack_from(stream, pos)
        if n > MAX_FRAME:
            raise BadFrame(f"declared length {n} exceeds {MAX_FRAME}")
        if len(stream) - pos - 4 < n:
            break
        out.append(bytes(stream[pos + 4:pos + 4 + n]))
        pos += 4 + n
    return out, bytes(stream[pos:])


class SimulatedLink:
    """In-memory adapter with transit bit errors.

    Frames are queued as raw bytes, so :meth:`feed` can inject arbitrary
    (including truncated) streams for testing the receiver.
    """

    def __init__(self, fault: FaultModel = FaultModel(), rng: Optional[np.random.Generator] = None):
        self.fault = fault
        self.rng = rng if rng is not None else make_rng(fault.rng_seed, "link")
        self.up = True
        self._buf = bytearray()

    def close(self):
        self.up = False

    def send(self, bundle_bytes: bytes, *, parts=None, stream_key: Iterable = ()) -> int:
        if not self.up:
            raise LinkDown("simulated link is down")
        if len(bundle_bytes) > MAX_FRAME:
            raise FrameTooLarge(f"{len(bundle_bytes)} bytes exceeds {MAX_FRAME}")
        if parts is not None:
            data = corrupt_segments(parts, self.fault.transit_ber, self.fault.rng_seed, *stream_key)
        else:
            data = corrupt_transit(bundle_bytes, self.fault.transit_ber, self.rng)
        wire = frame(data)
        self._buf += wire
        return len(wire)

    def feed(self, raw: bytes):
        self._buf += raw

    def pending(self) -> int:
        return len(self._buf)

    def recv(self) -> Optional[bytes]:
        if not self._buf:
            if not self.up:
                raise LinkDown("simulated link is down")
            return None
        if len(self._buf) < 4:
            raise BadFrame("truncated length prefix")
        (n,) = _LEN.unpack_from(self._buf, 0)
        if n > MAX_FRAME or len(self._buf) - 4 < n:
            raise BadFrame(f"declared length {n} unsatisfiable")
        data = bytes(self._buf[4:4 + n])
        del self._buf[:4 + n]
        return data


def _read_exactly(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 16))
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class TcpLink:
    """TCP adapter.  Relies entirely on TCP for correctness; injects no faults."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.up = True
        self._send_lock = threading.Lock()

    @classmethod
    def connect(cls, host: str, port: int = DEFAULT_PORT, timeout: Optional[float] = 10.0) -> "TcpLink":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise LinkDown(f"cannot connect to {host}:{port}: {exc}") from None
        sock.settimeout(None)
        return cls(sock)

    def close(self):
        if self.up:
            self.up = False
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()

    def send(self, bundle_bytes: bytes) -> int:
        wire = frame(bundle_bytes)
        if not self.up:
            raise LinkDown("link closed")
        with self._send_lock:
            try:
                self.sock.sendall(wire)
            except OSError as exc:
                self.up = False
                raise LinkDown(str(exc)) from None
        return len(wire)

    def recv(self) -> bytes:
        if not self.up:
            raise LinkDown("link closed")
        try:
            head = _read_exactly(self.sock, 4)
            if not head:
                raise LinkDown("peer closed connection")
            if len(head) < 4:
                raise BadFrame("truncated length prefix")
            (n,) = _LEN.unpack(head)
            if n > MAX_FRAME:
                raise BadFrame(f"declared length {n} exceeds {MAX_FRAME}")
            body = _read_exactly(self.sock, n)
        except OSError as exc:
            self.up = False
            raise LinkDown(str(exc)) from None
        if len(body) < n:
            raise BadFrame(f"stream ended after {len(body)} of {n} bytes")
        return body

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def cla_send(bundle_bytes: bytes, link) -> int:
    """Frame and send one bundle image; returns bytes put on the wire."""
    return link.send(bundle_bytes)


def cla_recv(link) -> Optional[bytes]:
    return link.recv()


def parse_addr(text: str, default_port: int = DEFAULT_PORT) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host or "127.0.0.1", int(port)
