"""Render run results as a text table, JSON or CSV."""

from __future__ import annotations

import csv
import io
import json

from .sim import DROP_FIELDS, Counters, EventTrace, Metrics

JSON_SCHEMA = "dtnlab.metrics/1"
FORMATS = ("text", "json", "csv")

_COLUMNS = [f for f in Counters().as_dict()]


def to_dict(trace: EventTrace, metrics: Metrics) -> dict:
    return {
        "schema": JSON_SCHEMA,
        "totals": metrics.as_dict(),
        "nodes": {nid: c.as_dict() for nid, c in sorted(metrics.nodes.items())},
        "drops_by_cause": {f: getattr(metrics, f) for f in DROP_FIELDS},
        "conservation": {
            "created": metrics.created,
            "accounted": metrics.accounted,
            "ok": metrics.conservation_ok(),
        },
        "events": len(trace),
    }


def _text(trace, metrics) -> str:
    lines = ["metric                          total"]
    lines.append("-" * 38)
    for name, val in metrics.as_dict().items():
        lines.append(f"{name:<30}{val:>8}")
    lines.append("")
    nodes = sorted(metrics.nodes)
    width = max([6] + [len(n) + 2 for n in nodes])
    lines.append("drops by cause and node")
    lines.append(f"{'cause':<28}" + "".join(f"{n:>{width}}" for n in nodes))
    for cause in DROP_FIELDS:
        row = "".join(f"{getattr(metrics.nodes[n], cause):>{width}}" for n in nodes)
        lines.append(f"{cause:<28}{row}")
    lines.append("")
    ok = "ok" if metrics.conservation_ok() else "VIOLATED"
    lines.append(f"conservation: created={metrics.created} accounted={metrics.accounted} ({ok})")
    lines.append(f"trace events: {len(trace)}")
    return "\n".join(lines) + "\n"


def _csv(metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node"] + _COLUMNS)
    for nid in sorted(metrics.nodes):
        c = metrics.nodes[nid].as_dict()
        w.writerow([nid] + [c[k] for k in _COLUMNS])
    return buf.getvalue()


def report(trace: EventTrace, metrics: Metrics, fmt: str = "text") -> str:
    if fmt == "text":
        return _text(trace, metrics)
    if fmt == "json":
        return json.dumps(to_dict(trace, metrics), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return _csv(metrics)
    raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
