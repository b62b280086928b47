import csv
import io
import json
import random
import statistics

import pytest
from scipy.stats import binom

from dtnlab import errors
from dtnlab.harness import (
    PRESETS,
    final_dispositions,
    load_scenario,
    preset,
    report,
    run,
    scenario_from_dict,
)
from dtnlab.harness.presets import silent_corruption


def _node(nid, routes, mode="none", offset=0.0):
    return {"node_id": nid, "clock": {"offset_s": offset}, "policy": {"mode": mode},
            "routes": routes}


def _two_node():
    return {
        "seed": 3, "duration_s": 60,
        "nodes": [_node("a", {"b": "b"}), _node("b", {})],
        "contacts": [{"from": "a", "to": "b", "open_s": 0, "close_s": 60}],
        "traffic": [{"source": "dtn:a/app", "destination": "dtn:b/app", "payload_size": 100,
                     "creation_s": 1, "lifetime_s": 600, "count": 5, "interval_ms": 10}],
    }


def _paths(exc_info):
    return {p for p, _ in exc_info.value.problems}


# -- scenario files ---------------------------------------------------------------------------

def test_load_two_node_file(tmp_path):
    f = tmp_path / "two.json"
    f.write_text(json.dumps(_two_node()))
    sc = load_scenario(f)
    assert len(sc.contacts) == 1 and [n.node_id for n in sc.nodes] == ["a", "b"]


def test_contact_close_equals_open(tmp_path):
    doc = _two_node()
    doc["contacts"][0]["close_s"] = 0
    f = tmp_path / "bad.json"
    f.write_text(json.dumps(doc))
    with pytest.raises(errors.ValidationError) as ei:
        load_scenario(f)
    assert "contacts[0].close_s" in _paths(ei)


def test_unknown_policy_mode_names_field():
    doc = _two_node()
    doc["nodes"][1]["policy"]["mode"] = "strict"
    with pytest.raises(errors.ValidationError) as ei:
        scenario_from_dict(doc)
    assert "nodes[1].policy.mode" in _paths(ei)


def test_traffic_outside_duration_rejected():
    doc = _two_node()
    doc["traffic"][0]["creation_s"] = 61
    with pytest.raises(errors.ValidationError):
        scenario_from_dict(doc)


def test_unknown_node_in_contact():
    doc = _two_node()
    doc["contacts"][0]["to"] = "zz"
    with pytest.raises(errors.ValidationError) as ei:
        scenario_from_dict(doc)
    assert "contacts[0].to" in _paths(ei)


def test_parse_error(tmp_path):
    f = tmp_path / "broken.json"
    f.write_text("{not json")
    with pytest.raises(errors.ParseError):
        load_scenario(f)
    with pytest.raises(errors.ParseError):
        load_scenario(tmp_path / "missing.json")


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_json_round_trip(name):
    sc = preset(name)
    again = scenario_from_dict(json.loads(sc.to_json()))
    assert again.to_json() == sc.to_json()


def test_unknown_preset():
    with pytest.raises(errors.UnknownPreset):
        preset("everything_fine")


# -- runs ------------------------------------------------------------------------------------

def test_two_node_run():
    _, m = run(scenario_from_dict(_two_node()))
    assert m.created == m.delivered_clean == 5


def test_baseline_all_clean():
    trace, m = run(preset("baseline"))
    assert m.created == m.delivered_clean == 100
    assert m.dropped_total == 0 and m.delivered_corrupt_undetected == 0
    times = [r.time_ms for r in trace]
    assert times == sorted(times)


def test_ber_corruption_within_binomial_interval():
    count, size, ber = 300, 10_240, 1e-5
    p = 1 - (1 - ber) ** (8 * size)
    lo, hi = binom.interval(0.99, count, p)
    _, m = run(silent_corruption(ber=ber, count=count, seed=77))
    assert lo <= m.delivered_corrupt_undetected <= hi
    assert m.dropped_integrity == 0


def test_silent_corruption_mean_over_seeds():
    """Averaged over seeds the per-bundle corruption rate matches the closed form."""
    count, size, ber, seeds = 200, 10_240, 1e-5, range(100, 110)
    p = 1 - (1 - ber) ** (8 * size)
    rates = [run(silent_corruption(ber=ber, count=count, seed=s))[1].delivered_corrupt_undetected
             / count for s in seeds]
    # standard error of the pooled mean over 2000 bundles is about 0.011
    assert abs(statistics.mean(rates) - p) <= 0.035


def test_storage_corruption_caught_by_crc():
    n = 10_000
    doc = {
        "seed": 5, "duration_s": 120,
        "nodes": [_node("a", {"b": "b", "c": "b"}, "reliability"),
                  _node("b", {"c": "c"}, "reliability"), _node("c", {}, "reliability")],
        "contacts": [{"from": "a", "to": "b", "open_s": 0, "close_s": 120},
                     {"from": "b", "to": "c", "open_s": 0, "close_s": 120}],
        "links": [{"from": "b", "to": "c", "storage_corrupt_prob": 1.0, "storage_flip_bits": 1}],
        "traffic": [{"source": "dtn:a/app", "destination": "dtn:c/app", "payload_size": 64,
                     "creation_s": 0, "lifetime_s": 3600, "suite": 1, "count": n,
                     "interval_ms": 10}],
    }
    trace, m = run(scenario_from_dict(doc))
    assert sum(r.event == "storage_corrupted" for r in trace) == n
    assert m.delivered_corrupt_undetected == 0
    assert m.dropped_integrity > 0
    # most of the image is payload, so most corruptions land there
    assert m.dropped_integrity > n * 0.5


def test_reliability_fix_detects_everything():
    _, m = run(preset("reliability_fix", count=300))
    assert m.delivered_corrupt_undetected == 0
    assert m.dropped_integrity > 0


def test_clock_skew_relay_rejects_everything():
    """A relay 2 h behind sees every bundle as stamped in its future."""
    _, m = run(preset("clock_skew"))
    b = m.nodes["b"]
    assert b.dropped_invalid_timestamp + b.dropped_expired == m.created == 100


def test_slow_sender_expires_at_true_relay():
    """A sender 2 h slow stamps bundles that a true-clock relay finds expired."""
    sc = preset("clock_skew", offset=0.0)
    sc.nodes[0] = type(sc.nodes[0]).from_dict({**sc.nodes[0].to_dict(),
                                               "clock": {"offset_s": -7200.0, "drift": 0.0}})
    _, m = run(sc)
    assert m.nodes["b"].dropped_expired == m.created == 100


def test_age_fix_invariant_to_offsets():
    for offset in (-7200.0, -100_000.0, 3600.0, 7200.0):
        _, m = run(preset("age_fix", offset=offset))
        assert m.delivered_clean == m.created == 100


def test_tamper_relay_payload_only():
    _, m = run(preset("tamper_relay"))
    assert m.nodes["c"].dropped_expired == 100 and m.dropped_integrity == 0


def test_tamper_relay_primary_covered():
    _, m = run(preset("tamper_relay", cover_primary=True))
    assert m.nodes["c"].dropped_integrity == 100 and m.dropped_expired == 0


def test_tamper_without_mutation_delivers():
    _, m = run(preset("tamper_relay", new_lifetime=60))
    assert m.delivered_clean == 100


def test_still_queued_counted():
    doc = _two_node()
    doc["contacts"][0].update(open_s=50, close_s=60)
    doc["duration_s"] = 40
    _, m = run(scenario_from_dict(doc))
    assert m.still_queued == 5 and m.conservation_ok()


# -- properties ------------------------------------------------------------------------------

def test_determinism_and_conservation_all_presets():
    for name in sorted(PRESETS):
        sc = preset(name, count=60)
        t1, m1 = run(sc)
        t2, m2 = run(sc)
        assert t1.to_jsonl() == t2.to_jsonl() and m1 == m2
        assert m1.conservation_ok()


def test_seed_changes_trace():
    sc = preset("silent_corruption", count=50)
    assert run(sc)[0].to_jsonl() != run(sc.with_seed(sc.seed + 1))[0].to_jsonl()


def test_monotone_harm():
    harm = []
    for ber in (0.0, 1e-6, 5e-6, 1e-5, 3e-5, 1e-4):
        _, m = run(silent_corruption(ber=ber, count=200, seed=9))
        harm.append(m.delivered_corrupt_undetected + m.dropped_total)
    assert harm == sorted(harm) and harm[0] == 0 and harm[-1] > 0


def test_remedy_equivalence_per_bundle():
    count, seed = 300, 21
    ta, _ = run(silent_corruption(count=count, seed=seed))
    tb, mb = run(preset("reliability_fix", count=count, seed=seed))
    a, b = final_dispositions(ta), final_dispositions(tb)
    corrupt = [bid for bid, d in a.items() if d == "delivered_corrupt_undetected"]
    assert corrupt
    assert all(b[bid] in ("dropped_integrity", "delivered_clean") for bid in corrupt)
    assert mb.delivered_corrupt_undetected == 0


# -- reports ---------------------------------------------------------------------------------

def test_report_text_baseline():
    trace, m = run(preset("baseline", count=10))
    text = report(trace, m, "text")
    for name in ("dropped_expired", "dropped_integrity", "dropped_storage_full"):
        line = next(ln for ln in text.splitlines() if ln.strip().startswith(name))
        assert line.split()[-1] == "0"
    assert "conservation" in text


def test_report_json_echoes_conservation():
    trace, m = run(preset("baseline", count=10))
    doc = json.loads(report(trace, m, "json"))
    assert doc["totals"]["created"] == 10
    assert doc["conservation"] == {"created": 10, "accounted": 10, "ok": True}
    assert set(doc["nodes"]) == {"a", "b", "c"}


def test_report_csv_one_row_per_node():
    trace, m = run(preset("tamper_relay", count=5))
    rows = list(csv.reader(io.StringIO(report(trace, m, "csv"))))
    assert rows[0][0] == "node" and len(rows) == 1 + 4
    assert [r[0] for r in rows[1:]] == ["a", "b", "c", "d"]


def test_report_unknown_format():
    trace, m = run(preset("baseline", count=1))
    with pytest.raises(ValueError):
        report(trace, m, "xml")


def test_suite_cost_reports_both():
    from dtnlab.harness import suite_cost
    c = suite_cost(4096, 200)
    assert c.crc32_s >= 0 and c.hmac_sha256_s > 0 and c.ratio > 0
    assert "hmac-sha256" in str(c)


def _with_clocks(sc, offsets):
    nodes = []
    for cfg, off in zip(sc.nodes, offsets):
        d = cfg.to_dict()
        d["clock"] = {"offset_s": off, "drift": 0.0}
        nodes.append(type(cfg).from_dict(d))
    sc.nodes = nodes
    return sc


def test_age_blocks_make_dispositions_offset_invariant():
    rng = random.Random(31)
    reference = final_dispositions(run(preset("age_fix", count=30, offset=0.0))[0])
    for _ in range(10):
        offsets = [rng.uniform(-1e6, 1e6) for _ in range(3)]
        sc = _with_clocks(preset("age_fix", count=30, offset=0.0), offsets)
        assert final_dispositions(run(sc)[0]) == reference


def test_true_clocks_deliver_everything():
    rng = random.Random(32)
    for _ in range(10):
        hops = rng.randint(1, 5)
        names = [chr(ord("a") + i) for i in range(hops + 1)]
        dest = names[-1]
        nodes = [_node(n, {dest: names[i + 1]} if i < hops else {}) for i, n in enumerate(names)]
        owlt = rng.randint(0, 2000)
        contacts = [{"from": names[i], "to": names[i + 1], "open_s": 0, "close_s": 100,
                     "owlt_ms": owlt} for i in range(hops)]
        count = rng.randint(1, 20)
        doc = {"seed": rng.getrandbits(32), "duration_s": 100, "nodes": nodes, "contacts": contacts,
               "traffic": [{"source": "dtn:a/app", "destination": f"dtn:{dest}/app",
                            "payload_size": rng.randint(0, 2000), "creation_s": 1,
                            "lifetime_s": 2 + hops * owlt // 1000 + 1, "count": count,
                            "interval_ms": 0, "suite": rng.choice([0, 1]),
                            "age_block": rng.choice([None, True])}]}
        _, m = run(scenario_from_dict(doc))
        assert m.delivered_clean == m.created == count
