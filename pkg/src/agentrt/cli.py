"""Command-line front door.

Five subcommands: ``select`` turns a workload profile into a signed-off (or
loudly draft) decision record, ``simulate`` runs the 90-day renewal book,
``replay`` compares two model versions over a saved event log, ``diagnose``
classifies failure batches and matches trace signatures, and ``serve`` hosts
the operations console, either over a live demo run or a saved trace.

Exit codes: 0 success, 1 rejected input (bad flags, missing files, fewer than
two replay versions), 2 invariant violation. Invariant violations are never
silent and never exit 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, NoReturn

from agentrt.clock import LogicalClock
from agentrt.coordination import CompensationFailed, DelegationIncomplete, MergeConflict
from agentrt.diagnostics import (
    EXPECTED_DIAGNOSIS,
    INJECTION_MODES,
    DiagnosticConfig,
    FailureBatch,
    Functional,
    ReplayDivergence,
    ReplayUnavailable,
    Variance,
    diagnose,
    injected_failure_batch,
    match_signatures,
    signature_by_id,
)
from agentrt.eventlog import EventLog, detect_divergence, load_seed_schedule
from agentrt.observability import ConsoleServer
from agentrt.profiles import CONTRAST_ENTRIES, FIXTURES, load_profile
from agentrt.renewal import (
    BIAS_TABLE,
    ConsoleRequired,
    RenewalSimulation,
    SimulationConfig,
    impact_consumer,
)
from agentrt.sdb import ProposerConfig
from agentrt.selector import ProfileError, Signoff, contrast_table, emit_adr, select
from agentrt.statestore import IllegalTransition
from agentrt.trace import MissingRequestId, TraceStore

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INVARIANT = 2

# Overrides the packaged customer CSV for simulate/serve when --csv is absent.
DATASET_ENV = "AGENTRT_DATASET_CSV"

_INVARIANT_ERRORS = (
    ConsoleRequired,
    MissingRequestId,
    IllegalTransition,
    MergeConflict,
    DelegationIncomplete,
    CompensationFailed,
)
_INPUT_ERRORS = (ProfileError, ReplayUnavailable, ValueError, OSError)


class _Parser(argparse.ArgumentParser):
    """Usage problems are input failures: print the contract, exit 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _split_versions(raw: str, parser: argparse.ArgumentParser, flag: str) -> list[str]:
    versions = [v.strip() for v in raw.split(",") if v.strip()]
    if len(versions) != len(set(versions)):
        parser.error(f"{flag} must not repeat a version: {raw!r}")
    return versions


def _dataset_path(args: argparse.Namespace) -> str | None:
    return args.csv or os.environ.get(DATASET_ENV) or None


# ---------------------------------------------------------------------------
# select


def _cmd_select(args: argparse.Namespace) -> int:
    if args.contrast:
        table = contrast_table(CONTRAST_ENTRIES)
        if args.json:
            print(json.dumps(table, indent=2, sort_keys=True))
            return EXIT_OK
        columns = ("workload", "class", "spine", "coordination", "control", "status")
        rows = [columns] + [tuple(entry[c] for c in columns) for entry in table]
        widths = [max(len(row[i]) for row in rows) for i in range(len(columns))]
        print(" | ".join(h.ljust(widths[i]) for i, h in enumerate(columns)))
        print("-+-".join("-" * w for w in widths))
        for row in rows[1:]:
            print(" | ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
        return EXIT_OK

    if not args.profile:
        args.parser.error("--profile is required unless --contrast is given")
    profile = load_profile(args.profile)
    selection = select(profile)
    signoff = None
    if args.signoff_name or args.signoff_date:
        # Signoff rejects a half-filled pair itself.
        signoff = Signoff(args.signoff_name or "", args.signoff_date or "")
    record = emit_adr(selection, args.model_version, args.date, signoff)
    print(record.to_json() if args.json else record.render())
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = SimulationConfig(
        scenario_count=args.scenarios,
        seed=args.seed,
        csv_path=_dataset_path(args),
        model_version=args.model_version,
    )
    out_dir = Path(args.out) if args.out else None
    sim = RenewalSimulation(cfg, out_dir=out_dir)
    if args.no_console:
        sim.run(None)  # refuses: the console must be serving first
        raise AssertionError("unreachable: a console-less run must refuse")
    console = sim.build_console()
    console.start(args.port)
    try:
        print(f"console serving on {console.url}", flush=True)
        report = sim.run(console)
    finally:
        console.stop()
    print(report.render_text())
    if report.artifacts:
        print("artifacts:")
        for name in sorted(report.artifacts):
            print(f"  {name}: {report.artifacts[name]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay


def _cmd_replay(args: argparse.Namespace) -> int:
    versions = _split_versions(args.versions, args.parser, "--versions")
    if len(versions) < 2:
        args.parser.error("--versions needs two comma-separated model versions, e.g. v1,v2")
    log = EventLog.load(args.events)
    if args.seeds:
        schedule = load_seed_schedule(args.seeds)
    else:
        schedule = {offset: args.seed for offset in range(len(log))}
    proposer_cfg = ProposerConfig(
        sigma=args.sigma,
        divergence_rate_delta=args.delta,
        bias_table=BIAS_TABLE,
    )
    report = detect_divergence(
        log,
        impact_consumer(),
        versions[0],
        versions[1],
        schedule,
        proposer_cfg,
    )
    if report.diverged:
        fields = sorted(d["field"] for d in report.field_diff)
        print(f"diverged at offset {report.first_divergent_offset}: " + ", ".join(fields))
    else:
        print(f"projections identical across {versions[0]} and {versions[1]}")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose


def _require_two_versions(raw: str) -> list[str]:
    versions = [v.strip() for v in raw.split(",") if v.strip()]
    if len(versions) < 2:
        raise ReplayUnavailable(
            "need the pinned version plus at least one prior version to replay against"
        )
    return versions


def _diagnose_injected(args: argparse.Namespace, versions: list[str]) -> dict[str, Any]:
    batch, replay_fn, _ = injected_failure_batch(args.inject, args.run_seed)
    # The harness speaks v1/v2; map the caller's last two version names onto it.
    alias = {versions[-1]: "v2", versions[-2]: "v1"}

    def replay(unit_id: str, version: str, seed: int) -> bool:
        return replay_fn(unit_id, alias.get(version, version), seed)

    cfg = DiagnosticConfig(model_versions=tuple(versions))
    verdict = diagnose(FailureBatch(versions[-1], batch.unit_ids, batch.rows), replay, cfg)
    expected = EXPECTED_DIAGNOSIS[args.inject].__name__
    result: dict[str, Any] = {
        "mode": "injected",
        "injected_class": args.inject,
        "batch_size": len(batch.unit_ids),
        "diagnosis": type(verdict).__name__,
        "expected": expected,
        "correct": type(verdict).__name__ == expected,
        "still_failing_current": verdict.still_failing_current,
        "still_failing_prior": verdict.still_failing_prior,
    }
    if isinstance(verdict, Functional):
        result["signatures"] = [m.signature_id for m in verdict.signatures]
    elif isinstance(verdict, ReplayDivergence):
        result["advice"] = verdict.advice
        result["prior_version"] = verdict.prior_version
    elif isinstance(verdict, Variance):
        result["new_k"] = verdict.new_k
    return result


def _diagnose_trace(path: str) -> dict[str, Any]:
    store = TraceStore.load(path)
    matches = match_signatures(store.rows())
    entries = []
    for m in matches:
        signature = signature_by_id(m.signature_id)
        entries.append(
            {
                "signature_id": m.signature_id,
                "pattern": m.pattern,
                "symptom": signature.symptom,
                "cause": signature.cause,
                "correction": signature.correction,
                "evidence": m.evidence,
            }
        )
    return {"mode": "trace", "rows": len(store.rows()), "matches": entries}


def _cmd_diagnose(args: argparse.Namespace) -> int:
    versions = _require_two_versions(args.replay_versions)
    if not args.trace and not args.inject:
        args.parser.error("give --trace FILE, --inject MODE, or both")

    reports: list[dict[str, Any]] = []
    if args.inject:
        reports.append(_diagnose_injected(args, versions))
    if args.trace:
        reports.append(_diagnose_trace(args.trace))

    if args.json:
        print(json.dumps(reports, indent=2, sort_keys=True))
        return EXIT_OK

    for report in reports:
        if report["mode"] == "injected":
            flag = "as expected" if report["correct"] else "MISCLASSIFIED"
            print(
                f"injected {report['injected_class']} batch of {report['batch_size']} "
                f"-> {report['diagnosis']} ({flag})"
            )
            print(
                f"  still failing: {report['still_failing_current']:.2f} pinned, "
                f"{report['still_failing_prior']:.2f} prior"
            )
            if "advice" in report:
                print(f"  advice: {report['advice']}")
            if "new_k" in report:
                print(f"  verification exponent doubled to k={report['new_k']}")
        else:
            if not report["matches"]:
                print(f"no failure signatures matched across {report['rows']} trace rows")
            for entry in report["matches"]:
                print(f"{entry['signature_id']} [{entry['pattern']}] {entry['symptom']}")
                print(f"  cause: {entry['cause']}")
                print(f"  correction: {entry['correction']}")
                print(f"  evidence: {json.dumps(entry['evidence'], sort_keys=True)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve


def _cmd_serve(args: argparse.Namespace) -> int:
    if args.demo and args.trace:
        args.parser.error("--demo and --trace are mutually exclusive")
    if not args.demo and not args.trace:
        args.parser.error("give --demo for a live run or --trace FILE for saved lenses")

    if args.trace:
        store = TraceStore.load(args.trace)
        clock = LogicalClock()
        rows = store.rows()
        if rows:
            clock.advance_to(max(r.logical_time for r in rows))
        console = ConsoleServer(store, clock)
        console.start(args.port)
        print(f"console serving on {console.url} (read-only trace, ctrl-c to stop)", flush=True)
        try:
            deadline = time.monotonic() + args.hold_seconds if args.hold_seconds > 0 else None
            while deadline is None or time.monotonic() < deadline:
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            console.stop()
        return EXIT_OK

    cfg = SimulationConfig(
        scenario_count=args.scenarios,
        seed=args.seed,
        csv_path=_dataset_path(args),
        pace_ms=args.pace_ms,
        pause_days=tuple(args.pause_day) if args.pause_day else (45, 62),
        pause_wall_seconds=args.pause_seconds,
    )
    out_dir = Path(args.out) if args.out else None
    sim = RenewalSimulation(cfg, out_dir=out_dir)
    console = sim.build_console()
    console.start(args.port)
    try:
        print(f"console serving on {console.url}", flush=True)
        report = sim.run(console)
        print(report.render_text(), flush=True)
        if args.hold_seconds > 0:
            # Keep the surface up so a browser can inspect the finished book.
            deadline = time.monotonic() + args.hold_seconds
            while time.monotonic() < deadline:
                console.apply_commands()
                time.sleep(0.1)
    except KeyboardInterrupt:
        pass
    finally:
        console.stop()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="agentrt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p_select = sub.add_parser(
        "select",
        help="derive runtime class, spine, coordination, and control for a workload profile",
        description=(
            "Reads a workload profile (a fixture name or a JSON file), walks the "
            "decision predicates, and prints the six-row decision record. "
            f"Fixtures: {', '.join(sorted(FIXTURES))}."
        ),
    )
    p_select.add_argument("--profile", help="fixture name or path to a profile JSON file")
    p_select.add_argument("--model-version", default="Claude Sonnet 4.6", help="model version tag recorded on the decision")
    p_select.add_argument("--date", default="2026 Q2", help="date tag recorded on the decision")
    p_select.add_argument("--signoff-name", help="spine sign-off: reviewer name")
    p_select.add_argument("--signoff-date", help="spine sign-off: review date")
    p_select.add_argument("--json", action="store_true", help="emit structured output instead of the table")
    p_select.add_argument("--contrast", action="store_true", help="print the cross-workload contrast table and exit")
    p_select.set_defaults(func=_cmd_select)

    p_sim = sub.add_parser(
        "simulate",
        help="run the 90-day renewal book over sampled customers",
        description=(
            "Samples customers from the packaged CSV (override with --csv or "
            f"{DATASET_ENV}), serves the console, runs the book, and prints the report."
        ),
    )
    p_sim.add_argument("--scenarios", type=int, default=100, help="number of renewal scenarios (default 100)")
    p_sim.add_argument("--seed", type=int, default=7, help="run seed (default 7)")
    p_sim.add_argument("--csv", help="customer CSV path (default: packaged dataset)")
    p_sim.add_argument("--out", help="directory for trace, event logs, seeds, and report artifacts")
    p_sim.add_argument("--port", type=int, default=0, help="console port (default: ephemeral)")
    p_sim.add_argument("--model-version", default="m-1", help="model version tag for the run")
    p_sim.add_argument(
        "--no-console",
        action="store_true",
        help="skip serving the console; the run refuses to start and exits 2",
    )
    p_sim.set_defaults(func=_cmd_simulate)

    p_replay = sub.add_parser(
        "replay",
        help="replay one event log under two model versions and report divergence",
        description=(
            "Folds the saved event log under each version with identical seeds and "
            "reports the first divergent offset and differing projection fields."
        ),
    )
    p_replay.add_argument("--events", required=True, help="event log file (one scenario, JSON lines)")
    p_replay.add_argument("--versions", required=True, help="two comma-separated model versions, e.g. v1,v2")
    p_replay.add_argument("--seeds", help="saved per-offset seed schedule (JSON)")
    p_replay.add_argument("--seed", type=int, default=0, help="constant seed when --seeds is absent")
    p_replay.add_argument("--sigma", type=float, default=0.1, help="proposer score noise")
    p_replay.add_argument("--delta", type=float, default=0.1, help="per-version interpretation shift rate")
    p_replay.set_defaults(func=_cmd_replay)

    p_diag = sub.add_parser(
        "diagnose",
        help="triage failures by replaying against a prior model version",
        description=(
            "Classifies a failing batch as functional, replay divergence, or variance. "
            "--inject builds a synthetic batch with known ground truth; --trace matches "
            "failure signatures over saved trace rows. Needs at least two versions."
        ),
    )
    p_diag.add_argument("--trace", help="trace file to scan for failure signatures")
    p_diag.add_argument(
        "--replay-versions",
        required=True,
        help="comma-separated model versions, oldest to newest; the batch pins the newest",
    )
    p_diag.add_argument("--inject", choices=INJECTION_MODES, help="build a synthetic batch of this true class")
    p_diag.add_argument("--run-seed", type=int, default=0, help="seed for the injected batch")
    p_diag.add_argument("--json", action="store_true", help="emit the structured report instead of the summary")
    p_diag.set_defaults(func=_cmd_diagnose)

    p_serve = sub.add_parser(
        "serve",
        help="host the operations console",
        description=(
            "--demo runs the renewal book with wall-clock pacing and holds at review "
            "days so a human (or a scripted session) can approve, resolve, and kill. "
            "--trace serves read-only lenses over a saved trace file."
        ),
    )
    p_serve.add_argument("--demo", action="store_true", help="run the paced demo book")
    p_serve.add_argument("--trace", help="serve lenses over this saved trace instead of a live run")
    p_serve.add_argument("--port", type=int, default=0, help="console port (default: ephemeral)")
    p_serve.add_argument("--scenarios", type=int, default=100, help="demo scenario count")
    p_serve.add_argument("--seed", type=int, default=7, help="demo run seed")
    p_serve.add_argument("--csv", help="customer CSV path (default: packaged dataset)")
    p_serve.add_argument("--out", help="artifact directory for the demo run")
    p_serve.add_argument("--pace-ms", type=int, default=40, help="wall milliseconds per simulated day")
    p_serve.add_argument(
        "--pause-day",
        type=int,
        action="append",
        help="hold the clock at this day for --pause-seconds (repeatable; default 45 and 62)",
    )
    p_serve.add_argument("--pause-seconds", type=float, default=3.0, help="wall seconds per pause day")
    p_serve.add_argument("--hold-seconds", type=float, default=0.0, help="keep serving this long after the run")
    p_serve.set_defaults(func=_cmd_serve)

    for sub_parser in (p_select, p_sim, p_replay, p_diag, p_serve):
        sub_parser.set_defaults(parser=sub_parser)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _INVARIANT_ERRORS as exc:
        print(f"invariant violation: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except _INPUT_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
