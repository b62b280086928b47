"""Per-node bundle agent: receive, verify, store, expire and forward.

An agent only ever sees its own clock.  Callers pass true time as integer
milliseconds since the scenario start; the agent turns that into a local
UTC reading through its :class:`ClockModel` and into residence times through
its (drifting, but never offset) monotonic clock.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from .errors import DecodeError, TargetAbsent, ValidationError
from .integrity import Coverage, Mode, Suite, VerificationPolicy, attach_integrity, verify
from .model import (
    Bundle,
    EndpointId,
    Expiry,
    ExpiryPolicy,
    RawBlock,
    SequenceCounter,
    _remaining,
    accumulate_age,
    is_expired,
    new_bundle,
)
from .wire import decode_bundle, encode_bundle

log = logging.getLogger(__name__)

MAX_DRIFT = 0.1


@dataclass(frozen=True)
class ClockModel:
    offset: float = 0.0  # seconds, signed
    drift: float = 0.0   # seconds of error per second of true time

    def __post_init__(self):
        if not abs(self.drift) < MAX_DRIFT:
            raise ValueError(f"|drift| must be < {MAX_DRIFT}: {self.drift}")

    @property
    def is_true(self) -> bool:
        return self.offset == 0 and self.drift == 0


def local_time(clock: ClockModel, true_now: float, start: float = 0.0) -> float:
    """Local UTC reading of ``clock`` at true time ``true_now``."""
    return true_now + clock.offset + clock.drift * (true_now - start)


class Disposition(str, enum.Enum):
    DELIVERED = "delivered"
    QUEUED = "queued"
    DROPPED_EXPIRED = "dropped_expired"
    DROPPED_INVALID_TIMESTAMP = "dropped_invalid_timestamp"
    DROPPED_INTEGRITY = "dropped_integrity"
    DROPPED_STORAGE_FULL = "dropped_storage_full"
    DROPPED_DECODE_ERROR = "dropped_decode_error"
    DELIVERED_CORRUPT_UNDETECTED = "delivered_corrupt_undetected"

    @property
    def is_drop(self) -> bool:
        return self.value.startswith("dropped_")


_EXPIRY_DROP = {
    Expiry.EXPIRED: Disposition.DROPPED_EXPIRED,
    Expiry.INVALID_FUTURE_TIMESTAMP: Disposition.DROPPED_INVALID_TIMESTAMP,
}


# -- in-transit block mutation --------------------------------------------------

_INT_FIELDS = ("lifetime", "creation_ts", "creation_seq", "flags")
MUTATION_TARGETS = _INT_FIELDS + (
    "destination", "source", "age_ms", "extension",
    "insert_extension", "remove_extension", "remove_age", "remove_integrity",
)


@dataclass(frozen=True)
class Mutation:
    """An edit a misbehaving (or merely meddling) relay applies while forwarding.

    ``value`` is an int for numeric fields, an EID string for endpoints and
    bytes for extension bodies.  ``block_type`` names the extension block for
    the ``*extension`` targets.
    """

    target: str
    value: Any = None
    block_type: Optional[int] = None

    def __post_init__(self):
        if self.target not in MUTATION_TARGETS:
            raise ValueError(f"unknown mutation target {self.target!r}")


def mutate_in_transit(bundle: Bundle, mutation: Mutation) -> Bundle:
    """Apply ``mutation`` without touching any integrity block."""
    t = mutation.target
    if t in _INT_FIELDS:
        return replace(bundle, **{t: int(mutation.value)})
    if t in ("destination", "source"):
        return replace(bundle, **{t: EndpointId(str(mutation.value))})
    if t == "age_ms":
        if bundle.age_ms is None:
            raise TargetAbsent("no bundle-age block")
        return replace(bundle, age_ms=int(mutation.value))
    if t == "remove_age":
        if bundle.age_ms is None:
            raise TargetAbsent("no bundle-age block")
        return replace(bundle, age_ms=None)
    if t == "remove_integrity":
        if bundle.integrity is None:
            raise TargetAbsent("no integrity block")
        return replace(bundle, integrity=None)
    if t == "insert_extension":
        blk = RawBlock(int(mutation.block_type), 0, bytes(mutation.value or b""))
        return replace(bundle, extensions=bundle.extensions + (blk,))

    idx = next((i for i, b in enumerate(bundle.extensions)
                if b.block_type == mutation.block_type), None)
    if idx is None:
        raise TargetAbsent(f"no extension block of type {mutation.block_type}")
    exts = list(bundle.extensions)
    if t == "extension":
        exts[idx] = replace(exts[idx], body=bytes(mutation.value))
    else:  # remove_extension
        del exts[idx]
    return replace(bundle, extensions=tuple(exts))


# -- node configuration -----------------------------------------------------------

@dataclass
class NodeConfig:
    node_id: str
    clock: ClockModel = field(default_factory=ClockModel)
    policy: VerificationPolicy = field(default_factory=VerificationPolicy)
    expiry: ExpiryPolicy = field(default_factory=ExpiryPolicy)
    routes: Dict[str, str] = field(default_factory=dict)
    storage_limit: int = 10_000
    age_block_default: bool = False
    mutation: Optional[Mutation] = None
    # live mode only: next-hop node id -> "host:port"
    neighbors: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        EndpointId.make(self.node_id, "x")  # validates the node part
        if "/" in self.node_id:
            raise ValueError(f"node id may not contain '/': {self.node_id!r}")
        if self.storage_limit < 1:
            raise ValueError("storage_limit must be >= 1")

    def to_dict(self) -> dict:
        d = {
            "node_id": self.node_id,
            "clock": {"offset_s": self.clock.offset, "drift": self.clock.drift},
            "policy": {"mode": self.policy.mode.value,
                       "key_hex": self.policy.key.hex() if self.policy.key else None},
            "expiry": {"future_tolerance_s": self.expiry.future_tolerance},
            "routes": dict(self.routes),
            "storage_limit": self.storage_limit,
            "age_block_default": self.age_block_default,
        }
        if self.mutation is not None:
            m = {"target": self.mutation.target}
            if isinstance(self.mutation.value, (bytes, bytearray)):
                m["value_hex"] = bytes(self.mutation.value).hex()
            elif self.mutation.value is not None:
                m["value"] = self.mutation.value
            if self.mutation.block_type is not None:
                m["block_type"] = self.mutation.block_type
            d["mutation"] = m
        if self.neighbors:
            d["neighbors"] = dict(self.neighbors)
        return d

    @classmethod
    def from_dict(cls, d: dict, path: str = "") -> "NodeConfig":
        """Build from the JSON form; every problem is reported with its field path."""
        problems: List[Tuple[str, str]] = []
        p = (path + ".") if path else ""

        def get(obj, key, kind, default, where):
            if not isinstance(obj, dict) or key not in obj or obj[key] is None:
                return default
            val = obj[key]
            if kind is float and isinstance(val, int) and not isinstance(val, bool):
                val = float(val)
            if not isinstance(val, kind) or (kind in (int, float) and isinstance(val, bool)):
                problems.append((where + key, f"expected {kind.__name__}, got {type(val).__name__}"))
                return default
            return val

        if not isinstance(d, dict):
            raise ValidationError([(path or "<root>", "node config must be an object")])
        node_id = get(d, "node_id", str, None, p)
        if node_id is None:
            problems.append((p + "node_id", "required"))
        clock_d = get(d, "clock", dict, {}, p)
        offset = get(clock_d, "offset_s", float, 0.0, p + "clock.")
        drift = get(clock_d, "drift", float, 0.0, p + "clock.")
        if not abs(drift) < MAX_DRIFT:
            problems.append((p + "clock.drift", f"|drift| must be < {MAX_DRIFT}"))
            drift = 0.0
        pol_d = get(d, "policy", dict, {}, p)
        mode_s = get(pol_d, "mode", str, "none", p + "policy.")
        key_hex = get(pol_d, "key_hex", str, None, p + "policy.")
        key = None
        if key_hex is not None:
            try:
                key = bytes.fromhex(key_hex)
            except ValueError:
                problems.append((p + "policy.key_hex", "not valid hex"))
        try:
            mode = Mode(mode_s)
        except ValueError:
            problems.append((p + "policy.mode",
                             f"unknown mode {mode_s!r}; expected one of none, reliability, authenticated"))
            mode = Mode.NONE
        if mode is Mode.AUTHENTICATED and not key:
            problems.append((p + "policy.key_hex", "required for authenticated mode"))
            mode = Mode.NONE
        exp_d = get(d, "expiry", dict, {}, p)
        tol = get(exp_d, "future_tolerance_s", float, 0.0, p + "expiry.")
        if not (tol >= 0 and tol != float("inf")):
            problems.append((p + "expiry.future_tolerance_s", "must be finite and >= 0"))
            tol = 0.0
        routes = get(d, "routes", dict, {}, p)
        for k, v in routes.items():
            if not isinstance(v, str):
                problems.append((f"{p}routes.{k}", "next hop must be a node id string"))
        storage_limit = get(d, "storage_limit", int, 10_000, p)
        if storage_limit < 1:
            problems.append((p + "storage_limit", "must be >= 1"))
            storage_limit = 1
        age_default = get(d, "age_block_default", bool, False, p)
        mutation = None
        mut_d = get(d, "mutation", dict, None, p)
        if mut_d is not None:
            value = mut_d.get("value")
            if "value_hex" in mut_d:
                try:
                    value = bytes.fromhex(mut_d["value_hex"])
                except (TypeError, ValueError):
                    problems.append((p + "mutation.value_hex", "not valid hex"))
            try:
                mutation = Mutation(mut_d.get("target", ""), value, mut_d.get("block_type"))
            except ValueError as exc:
                problems.append((p + "mutation.target", str(exc)))
        neighbors = get(d, "neighbors", dict, {}, p)
        if problems:
            raise ValidationError(problems)
        try:
            return cls(
                node_id=node_id,
                clock=ClockModel(offset, drift),
                policy=VerificationPolicy(mode, key),
                expiry=ExpiryPolicy(tol),
                routes={str(k): v for k, v in routes.items()},
                storage_limit=storage_limit,
                age_block_default=age_default,
                mutation=mutation,
                neighbors={str(k): str(v) for k, v in neighbors.items()},
            )
        except ValueError as exc:
            raise ValidationError([(p + "node_id", str(exc))]) from None


# -- the agent ----------------------------------------------------------------------

@dataclass
class StoredBundle:
    image: bytes
    stored_ms: int
    tag: Any = None
    _cache: Optional[Tuple[bytes, Bundle]] = field(default=None, repr=False, compare=False)

    def decode(self) -> Bundle:
        """Decode ``image``, reusing the last result while the image is unchanged."""
        if self._cache is None or self._cache[0] is not self.image:
            self._cache = (self.image, decode_bundle(self.image))
        return self._cache[1]


@dataclass
class Transmission:
    bundle: Bundle
    next_hop: str
    tag: Any = None

    @property
    def image(self) -> bytes:
        return encode_bundle(self.bundle)


@dataclass
class DispatchResult:
    transmissions: List[Transmission] = field(default_factory=list)
    # (tag, disposition, decoded bundle or None)
    drops: List[Tuple[Any, Disposition, Optional[Bundle]]] = field(default_factory=list)


class Agent:
    """Single-threaded store-and-forward state machine for one node.

    Not thread safe; feed it from one serialized event queue.
    """

    def __init__(self, config: NodeConfig, start_utc: float = 0.0):
        self.config = config
        self.start_utc = start_utc
        self.store: List[StoredBundle] = []
        self.counter = SequenceCounter()

    @property
    def node_id(self) -> str:
        return self.config.node_id

    def local_now(self, now_ms: int) -> float:
        return local_time(self.config.clock, self.start_utc + now_ms / 1000, self.start_utc)

    def residence_ms(self, since_ms: int, now_ms: int) -> int:
        # the monotonic clock drifts with the node's oscillator but has no offset
        return max(0, round((now_ms - since_ms) * (1 + self.config.clock.drift)))

    def next_hop(self, bundle: Bundle) -> Optional[str]:
        return self.config.routes.get(bundle.destination.node)

    def create_bundle(self, destination: EndpointId, payload: bytes, lifetime: int, now_ms: int,
                      app: str = "app", suite: Optional[int] = None,
                      coverage: int = Coverage.PAYLOAD, with_age: Optional[bool] = None,
                      local_now: Optional[float] = None) -> Bundle:
        if with_age is None:
            with_age = self.config.age_block_default
        if local_now is None:
            local_now = self.local_now(now_ms)
        b = new_bundle(EndpointId.make(self.node_id, app), destination, lifetime, payload,
                       local_now, with_age, counter=self.counter)
        if suite:
            key = self.config.policy.key if suite == Suite.HMAC_SHA256 else None
            b = attach_integrity(b, suite, coverage, key)
        return b

    def _store(self, bundle: Bundle, now_ms: int, tag) -> Disposition:
        if len(self.store) >= self.config.storage_limit:
            return Disposition.DROPPED_STORAGE_FULL
        entry = StoredBundle(encode_bundle(bundle), now_ms, tag)
        entry._cache = (entry.image, bundle)
        self.store.append(entry)
        return Disposition.QUEUED

    def originate(self, bundle: Bundle, now_ms: int, tag=None) -> Disposition:
        """Hand a locally created bundle to the agent (no expiry or integrity check)."""
        if bundle.destination.node == self.node_id:
            return Disposition.DELIVERED
        return self._store(bundle, now_ms, tag)

    def receive(self, bundle: Bundle, now_ms: int, tag=None,
                local_now: Optional[float] = None) -> Disposition:
        if local_now is None:
            local_now = self.local_now(now_ms)
        state = is_expired(bundle, local_now, self.config.expiry)
        if state is not Expiry.LIVE:
            return _EXPIRY_DROP[state]
        if verify(bundle, self.config.policy).failed:
            return Disposition.DROPPED_INTEGRITY
        if bundle.destination.node == self.node_id:
            return Disposition.DELIVERED
        return self._store(bundle, now_ms, tag)

    def receive_image(self, image: bytes, now_ms: int, tag=None,
                      local_now: Optional[float] = None) -> Tuple[Disposition, Optional[Bundle]]:
        try:
            bundle = decode_bundle(image)
        except DecodeError as exc:
            log.debug("%s: undecodable bundle: %s", self.node_id, exc)
            return Disposition.DROPPED_DECODE_ERROR, None
        return self.receive(bundle, now_ms, tag, local_now), bundle

    def dispatch(self, now_ms: int, open_hops, local_now: Optional[float] = None) -> DispatchResult:
        """Forward every stored bundle whose next hop currently has an open contact.

        Residence time is added to bundle-age blocks, expiry is re-checked, and
        survivors go out most-urgent first.  Bundles without an open next hop
        stay in storage untouched.
        """
        if local_now is None:
            local_now = self.local_now(now_ms)
        result = DispatchResult()
        keep: List[StoredBundle] = []
        ready: List[Tuple[float, int, Bundle, StoredBundle, str]] = []
        for i, entry in enumerate(self.store):
            try:
                bundle = entry.decode()
            except DecodeError:
                result.drops.append((entry.tag, Disposition.DROPPED_DECODE_ERROR, None))
                continue
            hop = self.next_hop(bundle)
            if hop is None or hop not in open_hops:
                keep.append(entry)
                continue
            if bundle.age_ms is not None:
                bundle = accumulate_age(bundle, self.residence_ms(entry.stored_ms, now_ms))
            state = is_expired(bundle, local_now, self.config.expiry)
            if state is not Expiry.LIVE:
                result.drops.append((entry.tag, _EXPIRY_DROP[state], bundle))
                continue
            ready.append((_remaining(bundle, local_now), i, bundle, entry, hop))
        self.store = keep

        ready.sort(key=lambda r: (r[0], r[1]))
        for _, _, bundle, entry, hop in ready:
            if self.config.mutation is not None:
                try:
                    bundle = mutate_in_transit(bundle, self.config.mutation)
                except TargetAbsent as exc:
                    log.debug("%s: mutation skipped: %s", self.node_id, exc)
            result.transmissions.append(Transmission(bundle, hop, entry.tag))
        return result
