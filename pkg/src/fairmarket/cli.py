"""Command-line front end.

    fairmarket run <scenario.json> [--seed N] [--out DIR]
    fairmarket graph <events.jsonl> [--out DIR]
    fairmarket audit <events.jsonl>

Exit codes: 0 success, 2 bad input, 3 corrupt log.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .adversim import MalformedScenario, assert_fairness, load_scenario, run_scenario
from .ledger import VALID_POM, CorruptLog, Ledger, LedgerError, LedgerEvent, load_events
from .tradegraph import export_dot, rebuild_from_log

log = logging.getLogger("fairmarket")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CORRUPT = 3


@dataclass
class CliConfig:
    subcommand: str
    input: Path
    out: Path = Path(".")
    seed: Optional[int] = None
    verbosity: int = 0


def _read_log(path: Path) -> list[LedgerEvent]:
    """Parse and replay a JSON-lines log; CorruptLog on any defect."""
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptLog(f"{path}: not UTF-8") from exc
    if text and not text.endswith("\n"):
        raise CorruptLog(f"{path}: last record is truncated")
    events = load_events(text)
    Ledger.replay(events)
    return events


def cmd_run(cfg: CliConfig) -> int:
    try:
        scenario = load_scenario(cfg.input, cfg.seed)
        report = run_scenario(scenario)
    except (MalformedScenario, LedgerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "report.json").write_text(report.dumps(), encoding="utf-8")
    (cfg.out / "events.jsonl").write_text(report.events_jsonl(), encoding="utf-8")
    verdict = assert_fairness(report)
    log.info("%s: %s, deltas %s", scenario.name, report.phase, report.deltas)
    print(f"{scenario.name}: {report.phase} fairness={'ok' if verdict else ','.join(verdict.failures)}")
    return EXIT_OK


def cmd_graph(cfg: CliConfig) -> int:
    events = _read_log(cfg.input)
    g = rebuild_from_log(events)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "graph.dot").write_text(export_dot(g), encoding="utf-8")
    (cfg.out / "graph.json").write_text(g.dumps(), encoding="utf-8")
    print(f"{len(g.vertices)} vertices, {len(g.edges)} edges, {len(g.tuples)} mediated")
    return EXIT_OK


def audit_rows(events: list[LedgerEvent]) -> list[dict]:
    """One row per closed trade (settled or upheld), with its rho digest."""
    agreements = {}
    cites = {}
    rows = []
    for ev in events:
        p = ev.payload
        if ev.kind == "AgreementRegistered" and p["agreement"]["kind"] == "trade":
            agreements[p["id"]] = p["agreement"]
        elif ev.kind == "ComplaintFiled":
            cites[p["trade"]] = p.get("cites", "phi")
        elif ev.kind in ("Settled", "VerdictIssued"):
            if ev.kind == "VerdictIssued" and p["basis"] != VALID_POM:
                continue
            a = agreements[p["trade"]]
            parties = a["parties"]
            upheld = ev.kind == "VerdictIssued"
            rows.append({
                "trade": p["trade"],
                "status": "upheld" if upheld else "settled",
                "rho_digest": a["rho_digest"],
                "rho_text": a["rho_text"],
                "seller": parties[0],
                "mediator": parties[1] if len(parties) == 3 else None,
                "buyer": parties[-1],
                "price": a["terms"]["price"],
                "tick": ev.tick,
                "flagged": upheld and cites.get(p["trade"]) == "rho",
            })
    return rows


def cmd_audit(cfg: CliConfig) -> int:
    rows = audit_rows(_read_log(cfg.input))
    print("trade\tstatus\trho_digest\tseller\tmediator\tbuyer\tprice\tflag")
    for r in rows:
        print("\t".join([r["trade"], r["status"], r["rho_digest"] or "-", r["seller"],
                         r["mediator"] or "-", r["buyer"], str(r["price"]),
                         "RHO-VIOLATION" if r["flagged"] else ""]).rstrip("\t"))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "graph": cmd_graph, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairmarket", description="Fair data-exchange simulator.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    run = sub.add_parser("run", help="run a scenario; writes report.json and events.jsonl")
    run.add_argument("input", type=Path)
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", type=Path, default=Path("."))

    graph = sub.add_parser("graph", help="rebuild the trade graph from a log")
    graph.add_argument("input", type=Path)
    graph.add_argument("--out", type=Path, default=Path("."))

    audit = sub.add_parser("audit", help="list closed trades with their regulation digests")
    audit.add_argument("input", type=Path)
    return ap


def parse_config(argv=None) -> CliConfig:
    ns = build_parser().parse_args(argv)
    return CliConfig(ns.subcommand, ns.input, getattr(ns, "out", Path(".")),
                     getattr(ns, "seed", None), ns.verbose)


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if cfg.verbosity > 1 else
                        logging.INFO if cfg.verbosity else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except CorruptLog as exc:
        print(f"corrupt log: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
