"""Declarative experiment description and its JSON form.

Scenario file schema (all times in seconds unless the key says ``_ms``)::

    {
      "seed": 7,                       # unsigned 64-bit
      "duration_s": 300,
      "start_utc": 820540800,          # true UTC at t=0, seconds since 2000-01-01
      "nodes":    [<node config>, ...],  # see NodeConfig.to_dict
      "contacts": [{"from": "a", "to": "b", "open_s": 0, "close_s": 300, "owlt_ms": 100}],
      "links":    [{"from": "b", "to": "c", "transit_ber": 1e-5,
                    "storage_corrupt_prob": 0, "storage_flip_bits": 1}],
      "traffic":  [{"source": "dtn:a/app", "destination": "dtn:c/app",
                    "payload_size": 1024, "creation_s": 1, "lifetime_s": 3600,
                    "suite": 0, "coverage": ["payload"], "count": 1,
                    "interval_ms": 0, "age_block": null}]
    }

Contacts are directed.  Links without an entry are fault free.  Each link's
generator is seeded from ``(seed, from, to)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..agent import NodeConfig
from ..channel import FaultModel, derive_seed
from ..errors import InvalidEndpoint, ParseError, ValidationError
from ..integrity import Coverage, Suite
from ..model import EndpointId

DEFAULT_START_UTC = 820_540_800  # 2026-01-01T00:00:00Z

_COVERAGE_NAMES = {"primary": Coverage.PRIMARY, "payload": Coverage.PAYLOAD}


@dataclass(frozen=True)
class Contact:
    from_node: str
    to_node: str
    open_s: float
    close_s: float
    owlt_ms: int = 0

    @property
    def open_ms(self) -> int:
        return round(self.open_s * 1000)

    @property
    def close_ms(self) -> int:
        return round(self.close_s * 1000)


@dataclass(frozen=True)
class Traffic:
    source: EndpointId
    destination: EndpointId
    payload_size: int
    creation_s: float
    lifetime_s: int
    suite: int = 0
    coverage: int = Coverage.PAYLOAD
    count: int = 1
    interval_ms: int = 0
    age_block: Optional[bool] = None

    def creation_times_ms(self):
        first = round(self.creation_s * 1000)
        return [first + k * self.interval_ms for k in range(self.count)]


@dataclass
class Scenario:
    nodes: List[NodeConfig]
    contacts: List[Contact] = field(default_factory=list)
    faults: Dict[Tuple[str, str], FaultModel] = field(default_factory=dict)
    traffic: List[Traffic] = field(default_factory=list)
    duration_s: float = 300.0
    seed: int = 0
    start_utc: float = DEFAULT_START_UTC

    @property
    def duration_ms(self) -> int:
        return round(self.duration_s * 1000)

    def node(self, node_id: str) -> NodeConfig:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def link_fault(self, from_node: str, to_node: str) -> FaultModel:
        base = self.faults.get((from_node, to_node), FaultModel())
        return replace(base, rng_seed=derive_seed(self.seed, "link", from_node, to_node))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        links = []
        for (a, b), fm in sorted(self.faults.items()):
            links.append({"from": a, "to": b, "transit_ber": fm.transit_ber,
                          "storage_corrupt_prob": fm.storage_corrupt_prob,
                          "storage_flip_bits": fm.storage_flip_bits})
        traffic = []
        for t in self.traffic:
            traffic.append({
                "source": t.source.text, "destination": t.destination.text,
                "payload_size": t.payload_size, "creation_s": t.creation_s,
                "lifetime_s": t.lifetime_s, "suite": t.suite,
                "coverage": [name for name, bit in _COVERAGE_NAMES.items() if t.coverage & bit],
                "count": t.count, "interval_ms": t.interval_ms, "age_block": t.age_block,
            })
        return {
            "seed": self.seed,
            "duration_s": self.duration_s,
            "start_utc": self.start_utc,
            "nodes": [n.to_dict() for n in self.nodes],
            "contacts": [{"from": c.from_node, "to": c.to_node, "open_s": c.open_s,
                          "close_s": c.close_s, "owlt_ms": c.owlt_ms} for c in self.contacts],
            "links": links,
            "traffic": traffic,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class _Checker:
    """Collects (path, message) problems while reading a JSON document."""

    def __init__(self):
        self.problems: List[Tuple[str, str]] = []

    def bad(self, path, msg):
        self.problems.append((path, msg))

    def num(self, obj, key, path, default=None, *, integer=False, required=False):
        if key not in obj or obj[key] is None:
            if required:
                self.bad(f"{path}.{key}" if path else key, "required")
            return default
        val = obj[key]
        ok = isinstance(val, int) if integer else isinstance(val, (int, float))
        if not ok or isinstance(val, bool):
            kind = "integer" if integer else "number"
            self.bad(f"{path}.{key}" if path else key, f"expected {kind}, got {val!r}")
            return default
        return val

    def text(self, obj, key, path, required=True):
        val = obj.get(key)
        if not isinstance(val, str) or not val:
            if required or val is not None:
                self.bad(f"{path}.{key}", "expected non-empty string")
            return None
        return val


def scenario_from_dict(doc: dict) -> Scenario:
    """Validate a parsed scenario document; all violations are reported at once."""
    if not isinstance(doc, dict):
        raise ValidationError([("<root>", "scenario must be a JSON object")])
    ck = _Checker()
    seed = ck.num(doc, "seed", "", 0, integer=True)
    if not 0 <= seed < 1 << 64:
        ck.bad("seed", "must be an unsigned 64-bit integer")
        seed = 0
    duration = ck.num(doc, "duration_s", "", None, required=True)
    if duration is not None and duration <= 0:
        ck.bad("duration_s", "must be > 0")
    start_utc = ck.num(doc, "start_utc", "", DEFAULT_START_UTC)

    nodes: List[NodeConfig] = []
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        ck.bad("nodes", "expected a non-empty list")
        raw_nodes = []
    for i, nd in enumerate(raw_nodes):
        try:
            nodes.append(NodeConfig.from_dict(nd, f"nodes[{i}]"))
        except ValidationError as exc:
            ck.problems.extend(exc.problems)
    ids = [n.node_id for n in nodes]
    known = set(ids)
    for i, nid in enumerate(ids):
        if ids.index(nid) != i:
            ck.bad(f"nodes[{i}].node_id", f"duplicate node id {nid!r}")
    for i, n in enumerate(nodes):
        for dest, hop in n.routes.items():
            if hop not in known:
                ck.bad(f"nodes[{i}].routes.{dest}", f"next hop {hop!r} is not a node")

    contacts: List[Contact] = []
    for i, c in enumerate(doc.get("contacts") or []):
        p = f"contacts[{i}]"
        if not isinstance(c, dict):
            ck.bad(p, "expected an object")
            continue
        a, b = ck.text(c, "from", p), ck.text(c, "to", p)
        for key, nid in (("from", a), ("to", b)):
            if nid is not None and nid not in known:
                ck.bad(f"{p}.{key}", f"unknown node {nid!r}")
        op = ck.num(c, "open_s", p, required=True)
        cl = ck.num(c, "close_s", p, required=True)
        owlt = ck.num(c, "owlt_ms", p, 0, integer=True)
        if op is not None and cl is not None and cl <= op:
            ck.bad(f"{p}.close_s", f"close ({cl}) must be greater than open ({op})")
        if op is not None and op < 0:
            ck.bad(f"{p}.open_s", "must be >= 0")
        if owlt < 0:
            ck.bad(f"{p}.owlt_ms", "must be >= 0")
        if a and b and op is not None and cl is not None:
            contacts.append(Contact(a, b, op, cl, owlt))

    faults: Dict[Tuple[str, str], FaultModel] = {}
    for i, lk in enumerate(doc.get("links") or []):
        p = f"links[{i}]"
        if not isinstance(lk, dict):
            ck.bad(p, "expected an object")
            continue
        a, b = ck.text(lk, "from", p), ck.text(lk, "to", p)
        ber = ck.num(lk, "transit_ber", p, 0.0)
        sprob = ck.num(lk, "storage_corrupt_prob", p, 0.0)
        flips = ck.num(lk, "storage_flip_bits", p, 1, integer=True)
        if not 0 <= ber < 1:
            ck.bad(f"{p}.transit_ber", "must be in [0, 1)")
            continue
        if not 0 <= sprob <= 1:
            ck.bad(f"{p}.storage_corrupt_prob", "must be in [0, 1]")
            continue
        if flips < 1:
            ck.bad(f"{p}.storage_flip_bits", "must be >= 1")
            continue
        if a and b:
            faults[(a, b)] = FaultModel(ber, sprob, flips)

    traffic: List[Traffic] = []
    for i, t in enumerate(doc.get("traffic") or []):
        p = f"traffic[{i}]"
        if not isinstance(t, dict):
            ck.bad(p, "expected an object")
            continue
        eids = {}
        for key in ("source", "destination"):
            s = ck.text(t, key, p)
            if s is None:
                continue
            try:
                eids[key] = EndpointId(s)
            except InvalidEndpoint as exc:
                ck.bad(f"{p}.{key}", str(exc))
                continue
            if eids[key].node not in known:
                ck.bad(f"{p}.{key}", f"node {eids[key].node!r} is not in the scenario")
        size = ck.num(t, "payload_size", p, 0, integer=True, required=True)
        if size < 0:
            ck.bad(f"{p}.payload_size", "must be >= 0")
        created = ck.num(t, "creation_s", p, 0.0)
        lifetime = ck.num(t, "lifetime_s", p, None, integer=True, required=True)
        if lifetime is not None and lifetime <= 0:
            ck.bad(f"{p}.lifetime_s", "must be > 0")
        suite = ck.num(t, "suite", p, 0, integer=True)
        if suite not in (0, Suite.CRC32_RELIABILITY_ONLY, Suite.HMAC_SHA256):
            ck.bad(f"{p}.suite", f"unknown suite {suite}; expected 0, 1 or 2")
        cov_names = t.get("coverage", ["payload"])
        coverage = 0
        if not isinstance(cov_names, list):
            ck.bad(f"{p}.coverage", "expected a list of 'primary'/'payload'")
            cov_names = []
        for name in cov_names:
            if name not in _COVERAGE_NAMES:
                ck.bad(f"{p}.coverage", f"unknown coverage {name!r}")
            else:
                coverage |= _COVERAGE_NAMES[name]
        if suite and not coverage:
            ck.bad(f"{p}.coverage", "must select at least one region")
        count = ck.num(t, "count", p, 1, integer=True)
        interval = ck.num(t, "interval_ms", p, 0, integer=True)
        if count < 1:
            ck.bad(f"{p}.count", "must be >= 1")
        if interval < 0:
            ck.bad(f"{p}.interval_ms", "must be >= 0")
        age = t.get("age_block")
        if age is not None and not isinstance(age, bool):
            ck.bad(f"{p}.age_block", "expected true, false or null")
            age = None
        if duration is not None and created is not None:
            last = created * 1000 + max(count - 1, 0) * interval
            if created < 0 or last > duration * 1000:
                ck.bad(f"{p}.creation_s", "creation times must lie within the scenario duration")
        if suite == Suite.HMAC_SHA256 and "source" in eids and eids["source"].node in known:
            src_cfg = nodes[ids.index(eids["source"].node)]
            if not src_cfg.policy.key:
                ck.bad(f"{p}.suite", "suite 2 needs a key in the source node's policy")
        if len(eids) == 2 and lifetime and lifetime > 0 and size >= 0:
            traffic.append(Traffic(eids["source"], eids["destination"], size, created,
                                   lifetime, suite, coverage or Coverage.PAYLOAD,
                                   max(count, 1), max(interval, 0), age))

    # static routes must not loop for any destination that traffic uses
    by_id = {n.node_id: n for n in nodes}
    for dest in sorted({t.destination.node for t in traffic}):
        for start in ids:
            seen = [start]
            cur = start
            while cur != dest:
                hop = by_id[cur].routes.get(dest)
                if hop is None or hop not in by_id:
                    break
                if hop in seen:
                    ck.bad(f"nodes[{ids.index(start)}].routes.{dest}",
                           f"routing loop {' -> '.join(seen + [hop])}")
                    break
                seen.append(hop)
                cur = hop

    if ck.problems:
        raise ValidationError(ck.problems)
    return Scenario(nodes, contacts, faults, traffic, duration, seed, start_utc)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return scenario_from_dict(doc)
