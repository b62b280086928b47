"""Command-line entry points: bp-sim, bp-node, bp-send and bp-recv."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from .agent import NodeConfig
from .channel import DEFAULT_PORT, TcpLink, parse_addr
from .errors import DtnError
from .integrity import Coverage, Mode, VerificationPolicy, attach_integrity
from .model import EndpointId, new_bundle
from .wire import encode_bundle

_COVERAGE = {"payload": Coverage.PAYLOAD, "primary": Coverage.PRIMARY, "both": Coverage.BOTH}


def _setup_logging(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


# -- bp-sim --------------------------------------------------------------------------

def sim_main(argv=None) -> int:
    from .harness import PRESETS, load_scenario, preset, report, run

    ap = argparse.ArgumentParser(prog="bp-sim", description="Deterministic DTN disruption simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("--scenario", required=True, type=Path)
    p_pre = sub.add_parser("preset", help="run or emit a built-in scenario")
    p_pre.add_argument("name", choices=sorted(PRESETS))
    p_pre.add_argument("--emit", action="store_true", help="print the scenario JSON and exit")
    p_cost = sub.add_parser("suite-cost", help="relative CPU time of CRC-32 vs HMAC-SHA256")
    p_cost.add_argument("--size", type=int, default=10_240, help="payload bytes")
    p_cost.add_argument("--repeats", type=int, default=2000)
    for p in (p_run, p_pre):
        p.add_argument("--seed", type=int)
        p.add_argument("--report", choices=("text", "json", "csv"), default="text")
        p.add_argument("--trace", type=Path, help="write the event trace (JSON lines)")
    args = ap.parse_args(argv)

    if args.cmd == "suite-cost":
        from .harness.cost import suite_cost
        print(suite_cost(args.size, args.repeats))
        return 0
    try:
        sc = load_scenario(args.scenario) if args.cmd == "run" else preset(args.name)
    except DtnError as exc:
        return _fail(str(exc))
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    if args.cmd == "preset" and args.emit:
        sys.stdout.write(sc.to_json())
        return 0
    trace, metrics = run(sc)
    if args.trace:
        trace.write(args.trace)
    sys.stdout.write(report(trace, metrics, args.report))
    return 0


# -- bp-node -------------------------------------------------------------------------

def _load_config(path: Path) -> NodeConfig:
    return NodeConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), "")


def node_main(argv=None) -> int:
    from .live import LiveNode

    ap = argparse.ArgumentParser(prog="bp-node", description="Run a bundle agent over TCP")
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--listen", default=f"0.0.0.0:{DEFAULT_PORT}")
    ap.add_argument("--deliver-dir", type=Path, help="write payloads delivered to this node here")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = _load_config(args.config)
    except (OSError, ValueError, DtnError) as exc:
        return _fail(f"{args.config}: {exc}")

    def deliver(bundle):
        name = f"{bundle.source.node}-{bundle.creation_ts}-{bundle.creation_seq}.bin"
        if args.deliver_dir:
            args.deliver_dir.mkdir(parents=True, exist_ok=True)
            (args.deliver_dir / name).write_bytes(bundle.payload)
        print(f"delivered {name} {len(bundle.payload)} bytes", flush=True)

    node = LiveNode(cfg, parse_addr(args.listen), deliver)
    print(f"{cfg.node_id} listening on {node.address[0]}:{node.address[1]}", flush=True)
    node.serve_forever()
    return 0


# -- bp-send -------------------------------------------------------------------------

def send_main(argv=None) -> int:
    from .live import utc_now

    ap = argparse.ArgumentParser(prog="bp-send", description="Send one bundle to a node")
    ap.add_argument("--to", required=True, help="destination endpoint id, dtn:<node>/<app>")
    ap.add_argument("--node", required=True, help="address of the first-hop node, host:port")
    ap.add_argument("--lifetime", required=True, type=int, help="seconds")
    ap.add_argument("--suite", type=int, choices=(0, 1, 2), default=0)
    ap.add_argument("--coverage", choices=sorted(_COVERAGE), default="payload")
    ap.add_argument("--key-hex", help="HMAC key for suite 2")
    ap.add_argument("--age-block", action="store_true")
    ap.add_argument("--source", default="dtn:sender/app")
    ap.add_argument("payload_file", type=Path)
    args = ap.parse_args(argv)

    try:
        payload = args.payload_file.read_bytes()
        bundle = new_bundle(EndpointId(args.source), EndpointId(args.to), args.lifetime,
                            payload, utc_now(), args.age_block)
        if args.suite:
            key = bytes.fromhex(args.key_hex) if args.key_hex else None
            bundle = attach_integrity(bundle, args.suite, _COVERAGE[args.coverage], key)
        host, port = parse_addr(args.node)
        with TcpLink.connect(host, port) as link:
            n = link.send(encode_bundle(bundle))
    except (OSError, ValueError, DtnError) as exc:
        return _fail(str(exc))
    print(f"sent {':'.join(map(str, bundle.bundle_id))} ({n} bytes framed)")
    return 0


# -- bp-recv -------------------------------------------------------------------------

def recv_main(argv=None) -> int:
    from .live import LiveNode

    ap = argparse.ArgumentParser(
        prog="bp-recv",
        description="Act as a destination node: listen, verify and write delivered payloads")
    ap.add_argument("--node", required=True, help="address to listen on, host:port")
    ap.add_argument("--config", type=Path, help="node config (overrides --node-id/--policy)")
    ap.add_argument("--node-id", default="recv")
    ap.add_argument("--policy", choices=[m.value for m in Mode], default="reliability")
    ap.add_argument("--key-hex")
    ap.add_argument("--out", type=Path, help="payload output file (default: stdout)")
    ap.add_argument("--count", type=int, default=1, help="exit after this many deliveries")
    ap.add_argument("--timeout", type=float, help="give up after this many seconds")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    _setup_logging(args.verbose)

    try:
        if args.config:
            cfg = _load_config(args.config)
        else:
            key = bytes.fromhex(args.key_hex) if args.key_hex else None
            cfg = NodeConfig(args.node_id, policy=VerificationPolicy(Mode(args.policy), key))
    except (OSError, ValueError, DtnError) as exc:
        return _fail(str(exc))

    done = threading.Event()
    got = []

    def deliver(bundle):
        got.append(bundle)
        print(f"delivered {':'.join(map(str, bundle.bundle_id))} {len(bundle.payload)} bytes "
              f"policy={cfg.policy.mode.value} verdict=pass", file=sys.stderr, flush=True)
        if len(got) >= args.count:
            done.set()

    node = LiveNode(cfg, parse_addr(args.node), deliver).start()
    print(f"{cfg.node_id} listening on {node.address[0]}:{node.address[1]}",
          file=sys.stderr, flush=True)
    try:
        finished = done.wait(args.timeout)
    except KeyboardInterrupt:
        finished = False
    node.stop()
    data = b"".join(b.payload for b in got)
    if args.out:
        args.out.write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    if not finished:
        return _fail(f"timed out after {len(got)} of {args.count} bundles; "
                     f"dispositions {node.dispositions}")
    return 0


if __name__ == "__main__":
    cmds = {"sim": sim_main, "node": node_main, "send": send_main, "recv": recv_main}
    if len(sys.argv) < 2 or sys.argv[1] not in cmds:
        sys.exit(f"usage: python -m dtnlab.cli {{{','.join(cmds)}}} ...")
    sys.exit(cmds[sys.argv[1]](sys.argv[2:]))
