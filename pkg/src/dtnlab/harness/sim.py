"""Deterministic discrete-event simulator.

True time is integer milliseconds; agents only see their local clocks.  The
simulator keeps each bundle's original payload and primary fields as ground
truth, which is how it can tell a clean delivery from a corrupted one that
the protocol waved through.
"""

from __future__ import annotations

import heapq
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional

from ..agent import Agent, Disposition
from ..channel import SimulatedLink, corrupt_storage, make_rng
from ..errors import DecodeError
from ..wire import encode_bundle_parts, encode_primary_fields
from .scenario import Scenario

DROP_FIELDS = (
    "dropped_expired",
    "dropped_invalid_timestamp",
    "dropped_integrity",
    "dropped_decode_error",
    "dropped_storage_full",
)

# same-millisecond ordering: closes, then opens, then arrivals, then creations
_CLOSE, _OPEN, _ARRIVE, _CREATE = range(4)


@dataclass
class Counters:
    created: int = 0
    delivered_clean: int = 0
    delivered_corrupt_undetected: int = 0
    dropped_expired: int = 0
    dropped_invalid_timestamp: int = 0
    dropped_integrity: int = 0
    dropped_decode_error: int = 0
    dropped_storage_full: int = 0
    still_queued: int = 0
    in_flight: int = 0

    @property
    def dropped_total(self) -> int:
        return sum(getattr(self, f) for f in DROP_FIELDS)

    @property
    def accounted(self) -> int:
        return (self.delivered_clean + self.delivered_corrupt_undetected
                + self.dropped_total + self.still_queued + self.in_flight)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(Counters)}


@dataclass
class Metrics(Counters):
    nodes: Dict[str, Counters] = field(default_factory=dict)

    def conservation_ok(self) -> bool:
        return self.created == self.accounted

    def check_conservation(self):
        if not self.conservation_ok():
            raise RuntimeError(
                f"conservation violated: created={self.created} accounted={self.accounted}")

    def node(self, node_id: str) -> Counters:
        return self.nodes.setdefault(node_id, Counters())

    def bump(self, node_id: str, name: str, n: int = 1):
        setattr(self, name, getattr(self, name) + n)
        c = self.node(node_id)
        setattr(c, name, getattr(c, name) + n)


@dataclass(frozen=True)
class TraceRecord:
    time_ms: int
    node: str
    event: str
    bundle: Optional[str]
    detail: dict

    def to_json(self) -> str:
        return json.dumps(
            {"time_ms": self.time_ms, "node": self.node, "event": self.event,
             "bundle": self.bundle, "detail": self.detail},
            sort_keys=True, separators=(",", ":"))


@dataclass
class EventTrace:
    records: List[TraceRecord] = field(default_factory=list)

    def add(self, time_ms, node, event, bundle=None, **detail):
        self.records.append(TraceRecord(time_ms, node, event, bundle, detail))

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


_TERMINAL = {d.value for d in Disposition if d is not Disposition.QUEUED} | {"delivered_clean"}


def final_dispositions(trace: EventTrace) -> Dict[str, str]:
    """Last terminal event per bundle id; bundles never terminated map to ``pending``."""
    out: Dict[str, str] = {}
    for r in trace:
        if r.bundle is None:
            continue
        if r.event == "created":
            out.setdefault(r.bundle, "pending")
        elif r.event in _TERMINAL:
            out[r.bundle] = r.event
    return out


@dataclass
class _Truth:
    payload: bytes
    primary: bytes


class Simulator:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.agents = {n.node_id: Agent(n, scenario.start_utc) for n in scenario.nodes}
        self.links: Dict[tuple, SimulatedLink] = {}
        self.trace = EventTrace()
        self.metrics = Metrics()
        for nid in self.agents:
            self.metrics.node(nid)
        self.truth: Dict[str, _Truth] = {}
        self._open = defaultdict(list)  # (from, to) -> list of open Contact
        self._events = []
        self._seq = 0
        self._in_flight = Counter()
        self._sends = Counter()          # (bundle id, from, to) -> transmissions so far
        self._storage_cycles = Counter()  # (node, bundle id) -> dispatch cycles seen
        self._serial = 0

    # -- event plumbing ------------------------------------------------------------

    def _push(self, t: int, prio: int, kind: str, data):
        self._seq += 1
        heapq.heappush(self._events, (t, prio, self._seq, kind, data))

    def _link(self, a: str, b: str) -> SimulatedLink:
        key = (a, b)
        if key not in self.links:
            fault = self.sc.link_fault(a, b)
            self.links[key] = SimulatedLink(fault, make_rng(fault.rng_seed, "link"))
        return self.links[key]

    def _open_hops(self, node: str):
        return {b for (a, b), cs in self._open.items() if a == node and cs}

    # -- handlers ------------------------------------------------------------------

    def _corrupted(self, bid: str, bundle) -> dict:
        t = self.truth[bid]
        return {"payload_corrupt": bundle.payload != t.payload,
                "primary_altered": encode_primary_fields(bundle) != t.primary}

    def _record(self, now: int, node: str, bid: str, disp: Disposition, bundle=None):
        detail = self._corrupted(bid, bundle) if bundle is not None else {}
        name = disp.value
        if disp is Disposition.DELIVERED:
            name = "delivered_corrupt_undetected" if detail["payload_corrupt"] else "delivered_clean"
        self.trace.add(now, node, name, bid, **detail)
        if name != "queued":
            self.metrics.bump(node, name)

    def _create(self, now: int, idx: int, k: int):
        tr = self.sc.traffic[idx]
        node = tr.source.node
        agent = self.agents[node]
        payload = make_rng(self.sc.seed, "payload", idx, k).bytes(tr.payload_size)
        bundle = agent.create_bundle(tr.destination, payload, tr.lifetime_s, now,
                                     app=tr.source.app, suite=tr.suite,
                                     coverage=tr.coverage, with_age=tr.age_block)
        bid = f"{node}#{self._serial}"
        self._serial += 1
        self.truth[bid] = _Truth(bundle.payload, encode_primary_fields(bundle))
        self.metrics.bump(node, "created")
        self.trace.add(now, node, "created", bid, creation_ts=bundle.creation_ts,
                       seq=bundle.creation_seq, lifetime=bundle.lifetime,
                       age=bundle.age_ms is not None, suite=tr.suite)
        self._record(now, node, bid, agent.originate(bundle, now, tag=bid), bundle)
        self._dispatch(now, node)

    def _arrive(self, now: int, data):
        src, node, bid, image = data
        self._in_flight[src] -= 1
        disp, bundle = self.agents[node].receive_image(image, now, tag=bid)
        self._record(now, node, bid, disp, bundle)
        if disp is Disposition.QUEUED:
            self._dispatch(now, node)

    def _age_storage(self, now: int, node: str):
        agent = self.agents[node]
        for entry in agent.store:
            try:
                hop = agent.next_hop(entry.decode())
            except DecodeError:
                continue
            if hop is None:
                continue
            fault = self.sc.link_fault(node, hop)
            if fault.storage_corrupt_prob == 0:
                continue
            key = (node, entry.tag)
            cycle = self._storage_cycles[key]
            self._storage_cycles[key] += 1
            rng = make_rng(fault.rng_seed, "storage", entry.tag, cycle)
            new = corrupt_storage(entry.image, fault, rng)
            if new != entry.image:
                entry.image = new
                self.trace.add(now, node, "storage_corrupted", entry.tag)

    def _dispatch(self, now: int, node: str):
        hops = self._open_hops(node)
        if not hops or not self.agents[node].store:
            return
        self._age_storage(now, node)
        result = self.agents[node].dispatch(now, hops)
        for bid, disp, bundle in result.drops:
            self._record(now, node, bid, disp, bundle)
        for tx in result.transmissions:
            bid, hop = tx.tag, tx.next_hop
            link = self._link(node, hop)
            parts = encode_bundle_parts(tx.bundle)
            image = b"".join(p for _, p in parts)
            n = self._sends[(bid, node, hop)]
            self._sends[(bid, node, hop)] += 1
            link.send(image, parts=parts, stream_key=(bid, n))
            received = link.recv()
            flipped = sum(bin(x ^ y).count("1") for x, y in zip(image, received)) if received != image else 0
            self.trace.add(now, node, "transmitted", bid, to=hop, bytes=len(image),
                           flipped_bits=flipped)
            owlt = self._open[(node, hop)][0].owlt_ms
            self._in_flight[node] += 1
            self._push(now + owlt, _ARRIVE, "arrive", (node, hop, bid, received))

    # -- main loop -------------------------------------------------------------------

    def run(self):
        end = self.sc.duration_ms
        for i, c in enumerate(self.sc.contacts):
            self._push(c.open_ms, _OPEN, "open", c)
            self._push(c.close_ms, _CLOSE, "close", c)
        for idx, tr in enumerate(self.sc.traffic):
            for k, t in enumerate(tr.creation_times_ms()):
                self._push(t, _CREATE, "create", (idx, k))

        while self._events and self._events[0][0] <= end:
            now, _, _, kind, data = heapq.heappop(self._events)
            if kind == "create":
                self._create(now, *data)
            elif kind == "arrive":
                self._arrive(now, data)
            elif kind == "open":
                self._open[(data.from_node, data.to_node)].append(data)
                self.trace.add(now, data.from_node, "contact_open", None, to=data.to_node)
                self._dispatch(now, data.from_node)
            elif kind == "close":
                self._open[(data.from_node, data.to_node)].remove(data)
                self.trace.add(now, data.from_node, "contact_close", None, to=data.to_node)

        for nid, agent in self.agents.items():
            self.metrics.bump(nid, "still_queued", len(agent.store))
            self.metrics.bump(nid, "in_flight", self._in_flight[nid])
        self.metrics.check_conservation()
        return self.trace, self.metrics


def run(scenario: Scenario):
    """Execute ``scenario``; returns ``(EventTrace, Metrics)``."""
    return Simulator(scenario).run()
