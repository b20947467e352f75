"""Command line: ``ccnlab {run,atomicity,unlink,cost}``.

Exit codes: 0 success, 1 configuration or usage error, 2 property violation found.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import atomicity, cost, unlink
from .config import ConfigError, ScenarioConfig, bundled
from .metrics import MetricsReport, report_from_trace, rows_to_csv, trace_lines, trace_text
from .orchestrator import PathError, run_payment

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None, help="rng seed (u64)")
    common.add_argument("--out", type=Path, default=None, help="directory for trace.jsonl, metrics.csv, report.json")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ccnlab", description="Cross-chain channel network laboratory.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", parents=[common], help="run one scenario and emit its trace and metrics")
    p.add_argument("--config", default="walkthrough", help="scenario JSON path or bundled name (walkthrough, multihop)")
    p.add_argument("--protocol", choices=("ccn", "htlc"), default=None)

    p = sub.add_parser("atomicity", parents=[common], help="exhaustive atomicity enumeration")
    p.add_argument("--max-hops", type=int, choices=(1, 2), default=1)
    p.add_argument("--watchers", type=int, default=1, help="watchers per chain; 0 disables appeals")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("unlink", parents=[common], help="unlinkability distinguishing game")
    p.add_argument("--trials", type=_positive, default=1000)
    p.add_argument("--adversary", choices=unlink.ADVERSARIES, default="combined")
    p.add_argument("--protocol", choices=("ccn", "htlc"), default="ccn")
    p.add_argument("--corruption", default="sender-side",
                   help="sender-side, both-sides, or comma-separated roles from I,H1,H2,J")
    p.add_argument("--traffic", choices=("default", "none"), default="default",
                   help="background intra-chain receipts per channel")
    p.add_argument("--config", default=None, help="take the traffic model from a scenario file")
    p.add_argument("--tolerance", type=float, default=0.05, help="advantage bound checked for ccn")

    p = sub.add_parser("cost", parents=[common], help="on-chain tx counts, one settlement vs N HTLCs")
    p.add_argument("--interactions", "-N", type=_positive, nargs="+", default=list(cost.DEFAULT_NS))
    p.add_argument("--hops", type=int, default=1, help="intermediaries on the path")
    return parser


def _load_config(spec: str) -> ScenarioConfig:
    path = Path(spec)
    if path.exists():
        return ScenarioConfig.load(path)
    if path.suffix == "" and "/" not in spec:
        return bundled(spec)
    raise ConfigError(f"no such config file: {spec}")


def _write(out: Optional[Path], name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _emit(args, report: dict, rows: list[dict]) -> None:
    _write(args.out, "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write(args.out, "metrics.csv", rows_to_csv(rows))
    if args.format == "csv":
        sys.stdout.write(rows_to_csv(rows))
    else:
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    cfg = _load_config(args.config).with_overrides(seed=args.seed, protocol=args.protocol)
    run = cfg.make_run()
    result = run_payment(run)
    text = trace_text(trace_lines(run, result, cfg.name))
    report: MetricsReport = report_from_trace(text)
    losses = atomicity.honest_losses(run, result)
    settled = run.settled()
    report.extra = {"settled": settled, "honest_losses": losses,
                    "net": {p: result.net(p) for p in cfg.path.parties}}
    _write(args.out, "trace.jsonl", text)
    _emit(args, report.to_dict(), report.csv_rows())
    return EXIT_OK if settled and not losses else EXIT_VIOLATION


def cmd_atomicity(args) -> int:
    rep = atomicity.enumerate_atomicity(args.max_hops, watchers=args.watchers, seed=args.seed or 0,
                                        workers=args.workers)
    data = rep.to_dict()
    data["complete"] = rep.schedules == rep.expected
    rows = [{"metric": "schedules", "scope": f"n={rep.n}", "key": "count", "value": rep.schedules},
            {"metric": "counterexamples", "scope": f"n={rep.n}", "key": "count", "value": len(rep.counterexamples)},
            {"metric": "excused", "scope": f"n={rep.n}", "key": "count", "value": rep.excused}]
    rows += [{"metric": "counterexample", "scope": r.leaf, "key": "losses", "value": "; ".join(r.losses)}
             for r in rep.counterexamples]
    _emit(args, data, rows)
    return EXIT_VIOLATION if rep.counterexamples or not data["complete"] else EXIT_OK


def cmd_unlink(args) -> int:
    traffic = unlink.Traffic.none() if args.traffic == "none" else unlink.Traffic()
    if args.config is not None:
        traffic = _load_config(args.config).traffic
    rep = unlink.run_game(args.trials, args.adversary, args.protocol, seed=args.seed or 0,
                          traffic=traffic, corruption=args.corruption)
    data = rep.to_dict()
    violated = args.protocol == "ccn" and rep.advantage > args.tolerance
    data["tolerance"] = args.tolerance
    data["within_tolerance"] = not violated
    rows = [{"metric": "advantage", "scope": name, "key": args.protocol, "value": v["advantage"]}
            for name, v in data["all_adversaries"].items()]
    _emit(args, data, rows)
    return EXIT_VIOLATION if violated else EXIT_OK


def cmd_cost(args) -> int:
    table = cost.cost_table(args.interactions, n=args.hops, seed=args.seed or 0)
    data = table.to_dict()
    rows = []
    for r in table.rows:
        rows.append({"metric": "tx_total", "scope": "ccn", "key": r.interactions, "value": r.ccn_total})
        rows.append({"metric": "tx_total", "scope": "htlc", "key": r.interactions, "value": r.htlc_total})
    _emit(args, data, rows)
    return EXIT_OK if table.ok() else EXIT_VIOLATION


COMMANDS = {"run": cmd_run, "atomicity": cmd_atomicity, "unlink": cmd_unlink, "cost": cmd_cost}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, PathError, unlink.GameError, cost.CostError) as exc:
        print(f"ccnlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
