"""Command-line entry point.

Exit codes: 0 ok, 1 input error (missing file, parse error, bad trace or
config), 2 semantic diagnostics in the contract.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional

from . import bench, wire
from . import engine as en
from . import ledger as lg
from .chainsim import SimConfig
from .dsl import ParseError, parse, validate
from .trace import TraceError, load_trace

EXIT_OK, EXIT_INPUT, EXIT_DIAGNOSTICS = 0, 1, 2
BUNDLED = "@bundled"


class InputError(Exception):
    pass


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc


def _load_rules(path: str):
    """Parse and validate; returns (ruleset, diagnostics)."""
    source = bench.bundled_source() if path == BUNDLED else _read(path)
    try:
        rs = parse(source)
    except ParseError as exc:
        raise InputError(f"{path}:{exc.line}:{exc.column}: {exc.message}") from exc
    return rs, validate(rs)


def _emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> int:
    rs, diags = _load_rules(args.rules)
    for d in diags:
        print(f"{args.rules}: {d.code} [{d.rule}] {d.message}")
    if diags:
        return EXIT_DIAGNOSTICS
    print(f"{args.rules}: contract {rs.contract!r} ok ({len(rs.rules)} rules)")
    return EXIT_OK


def replay_lines(rs, trace, ledger_path: Optional[str] = None, fmt: str = "table") -> str:
    ledger = lg.Ledger(ledger_path) if ledger_path else None
    mgr = en.InstanceManager(ledger)
    mgr.load(rs)
    bindings = bench.default_bindings(rs, trace)
    start = min([0] + [r.at for r in trace.records])
    iid = mgr.create_instance(rs.contract, bindings, start)
    out = []
    try:
        for item in bench.replay_trace(mgr, iid, trace):
            if fmt == "records":
                if isinstance(item, en.Verdict):
                    rec = {"record": "verdict", **wire.verdict_to_record(item)}
                else:
                    rec = {"record": "violation", **wire.violation_record(item)}
                out.append(json.dumps(rec, sort_keys=True))
            else:
                out.append(bench.format_outcome(item))
        snap = mgr.query_state(iid)
        if fmt == "records":
            out.append(json.dumps({"record": "snapshot", **wire.snapshot_record(snap)},
                                  sort_keys=True))
        else:
            out += bench.format_snapshot(snap)
    finally:
        mgr.ledger.close()
    return "\n".join(out) + "\n"


def cmd_replay(args) -> int:
    rs, diags = _load_rules(args.rules)
    if diags:
        for d in diags:
            print(f"{args.rules}: {d.code} [{d.rule}] {d.message}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    try:
        trace = load_trace(args.trace)
    except OSError as exc:
        raise InputError(f"{args.trace}: {exc.strerror or exc}") from exc
    except TraceError as exc:
        raise InputError(f"{args.trace}: {exc}") from exc
    try:
        text = replay_lines(rs, trace, args.ledger, args.format)
    except (en.EngineError, lg.LedgerError) as exc:
        raise InputError(f"{args.trace}: {type(exc).__name__}: {exc}") from exc
    _emit(text, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    path = args.scenario or args.config
    try:
        scenario = bench.load_scenario(path) if path else bench.bundled_scenario()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    except (TraceError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: bad scenario: {exc}") from exc
    try:
        rs = parse(scenario.source)
    except ParseError as exc:
        raise InputError(f"contract:{exc.line}:{exc.column}: {exc.message}") from exc
    diags = validate(rs)
    if diags:
        for d in diags:
            print(f"contract: {d.code} [{d.rule}] {d.message}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    if args.seed is not None:
        scenario.seed = args.seed
    sim = scenario.sim.to_dict()
    for key in ("finality_depth", "block_interval_ms", "reorg_probability", "max_reorg_depth"):
        val = getattr(args, key)
        if val is not None:
            sim[key] = val
    try:
        scenario.sim = SimConfig.from_dict(sim)
    except (ValueError, TypeError) as exc:
        raise InputError(f"bad simulator settings: {exc}") from exc
    if args.targets:
        scenario.targets = tuple(t.strip() for t in args.targets.split(","))
        bad = set(scenario.targets) - {bench.TTP, bench.CHAIN}
        if bad or not scenario.targets:
            raise InputError(f"unknown targets {sorted(bad)}; use ttp and/or chain")
    report = bench.simulate(scenario)
    _emit(report.render_records() if args.format == "records" else report.render_table(),
          args.out)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .gateway import GatewayConfig, serve

    path = args.config_file or args.config
    try:
        config = GatewayConfig.from_file(
            path, host=args.host, port=args.port, ledger_path=args.ledger,
            wall_clock=True if args.wall_clock else None, tick_ms=args.tick_ms,
            contracts=args.contract or None)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: bad config: {exc}") from exc
    try:
        serve(config)
    except lg.LedgerError as exc:
        raise InputError(f"ledger {config.ledger_path}: {exc}") from exc
    except (OSError, ParseError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage mistakes are input errors; exit status 2 is reserved for diagnostics
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--format", choices=("table", "records"), default="table")
    common.add_argument("--out", default=None, help="write output to a file")
    common.add_argument("--config", default=None, help="scenario or gateway config file")

    p = _Parser(prog="contractwatch",
                description="Contract compliance engine and deployment bench.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="parse and check a rules file")
    v.add_argument("rules", help="rules file, or @bundled for the shipped contract")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("replay", parents=[common], help="run a trace through the engine")
    r.add_argument("rules")
    r.add_argument("trace")
    r.add_argument("--ledger", default=None, help="persist the audit ledger here")
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("simulate", parents=[common], help="compare TTP and chain deployments")
    s.add_argument("scenario", nargs="?", default=None,
                   help="scenario JSON (default: bundled car-insurance scenario)")
    s.add_argument("--targets", default=None, help="comma list of ttp,chain")
    s.add_argument("--finality-depth", dest="finality_depth", type=int, default=None)
    s.add_argument("--block-interval-ms", dest="block_interval_ms", type=int, default=None)
    s.add_argument("--reorg-probability", dest="reorg_probability", type=float, default=None)
    s.add_argument("--max-reorg-depth", dest="max_reorg_depth", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("serve", parents=[common], help="run the HTTP gateway")
    g.add_argument("config_file", nargs="?", default=None, help="gateway config JSON")
    g.add_argument("--host", default=None)
    g.add_argument("--port", type=int, default=None)
    g.add_argument("--ledger", default=None, help="ledger file path")
    g.add_argument("--wall-clock", action="store_true", help="stamp events with real time")
    g.add_argument("--tick-ms", dest="tick_ms", type=int, default=None)
    g.add_argument("--contract", action="append", help="rules file to deploy at start-up")
    g.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
