"""Built-in scenarios, one per failure mode or remedy.

Presets are built as JSON documents and parsed through the normal scenario
validator, so ``bp-sim preset <name> --emit`` always yields a loadable file.
Bit-error rates here are illustrative, not measured space-link figures.
"""

from __future__ import annotations

from typing import Callable, Dict

from ..errors import UnknownPreset
from .scenario import Scenario, scenario_from_dict

SEED = 1


def _node(node_id, routes, *, mode="none", offset=0.0, age=False, mutation=None):
    d = {
        "node_id": node_id,
        "clock": {"offset_s": offset, "drift": 0.0},
        "policy": {"mode": mode, "key_hex": None},
        "expiry": {"future_tolerance_s": 0.0},
        "routes": routes,
        "storage_limit": 10_000,
        "age_block_default": age,
    }
    if mutation:
        d["mutation"] = mutation
    return d


def _contact(a, b, open_s, close_s, owlt_ms=100):
    return {"from": a, "to": b, "open_s": open_s, "close_s": close_s, "owlt_ms": owlt_ms}


def _chain3(duration, *, mode="none", relay_offset=0.0, age=False):
    return [
        _node("a", {"b": "b", "c": "b"}, mode=mode, age=age),
        _node("b", {"c": "c"}, mode=mode, offset=relay_offset, age=age),
        _node("c", {}, mode=mode, age=age),
    ], [_contact("a", "b", 0, duration), _contact("b", "c", 0, duration)]


def _traffic(count, size, lifetime, *, start=1.0, interval_ms=1000, suite=0,
             coverage=("payload",), dest="dtn:c/app"):
    return [{
        "source": "dtn:a/app", "destination": dest, "payload_size": size,
        "creation_s": start, "lifetime_s": lifetime, "suite": suite,
        "coverage": list(coverage), "count": count, "interval_ms": interval_ms,
        "age_block": None,
    }]


def baseline(count: int = 100, seed: int = SEED) -> Scenario:
    """Three-node chain, true clocks, no faults."""
    duration = 300
    nodes, contacts = _chain3(duration)
    return scenario_from_dict({
        "seed": seed, "duration_s": duration, "nodes": nodes, "contacts": contacts,
        "links": [], "traffic": _traffic(count, 1024, 3600),
    })


def silent_corruption(ber: float = 1e-5, count: int = 1000, size: int = 10_240,
                      seed: int = SEED, suite: int = 0, mode: str = "none") -> Scenario:
    """Lossy b->c hop and no integrity checking anywhere.

    Only the last hop is noisy, so each bundle crosses ``8 * size`` payload
    bits of noisy channel exactly once.
    """
    duration = 200
    nodes, contacts = _chain3(duration, mode=mode)
    return scenario_from_dict({
        "seed": seed, "duration_s": duration, "nodes": nodes, "contacts": contacts,
        "links": [{"from": "b", "to": "c", "transit_ber": ber,
                   "storage_corrupt_prob": 0.0, "storage_flip_bits": 1}],
        "traffic": _traffic(count, size, 3600, interval_ms=100, suite=suite),
    })


def reliability_fix(ber: float = 1e-5, count: int = 1000, size: int = 10_240,
                    seed: int = SEED) -> Scenario:
    """silent_corruption with CRC-32 integrity blocks verified at every node."""
    return silent_corruption(ber, count, size, seed, suite=1, mode="reliability")


def clock_skew(count: int = 100, seed: int = SEED, offset: float = -7200.0,
               age: bool = False) -> Scenario:
    """Relay clock misset by ``offset`` seconds; lifetime 3600 s; UTC expiry."""
    duration = 300
    nodes, contacts = _chain3(duration, relay_offset=offset, age=age)
    return scenario_from_dict({
        "seed": seed, "duration_s": duration, "nodes": nodes, "contacts": contacts,
        "links": [], "traffic": _traffic(count, 1024, 3600),
    })


def age_fix(count: int = 100, seed: int = SEED, offset: float = -7200.0) -> Scenario:
    """clock_skew topology with bundle-age blocks on every bundle."""
    return clock_skew(count, seed, offset, age=True)


def tamper_relay(cover_primary: bool = False, count: int = 100, seed: int = SEED,
                 new_lifetime: int = 6) -> Scenario:
    """Relay b rewrites the lifetime 60 -> ``new_lifetime`` while forwarding.

    Bundles reach c within a second, then wait for the c->d contact at
    t=30 s.  Untouched they would still be live there (lifetime 60 s).
    """
    duration = 120
    coverage = ("primary", "payload") if cover_primary else ("payload",)
    nodes = [
        _node("a", {"b": "b", "c": "b", "d": "b"}, mode="reliability"),
        _node("b", {"c": "c", "d": "c"}, mode="reliability",
              mutation={"target": "lifetime", "value": new_lifetime}),
        _node("c", {"d": "d"}, mode="reliability"),
        _node("d", {}, mode="reliability"),
    ]
    contacts = [_contact("a", "b", 0, duration), _contact("b", "c", 0, duration),
                _contact("c", "d", 30, duration)]
    return scenario_from_dict({
        "seed": seed, "duration_s": duration, "nodes": nodes, "contacts": contacts,
        "links": [],
        "traffic": _traffic(count, 1024, 60, interval_ms=50, suite=1,
                            coverage=coverage, dest="dtn:d/app"),
    })


PRESETS: Dict[str, Callable[..., Scenario]] = {
    "baseline": baseline,
    "silent_corruption": silent_corruption,
    "reliability_fix": reliability_fix,
    "clock_skew": clock_skew,
    "age_fix": age_fix,
    "tamper_relay": tamper_relay,
}


def preset(name: str, **overrides) -> Scenario:
    try:
        build = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return build(**overrides)
