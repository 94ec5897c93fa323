"""Command-line front end: run, baseline, compare, sweep, demo.

Outputs are pure functions of (scenario file, flags, seed): re-running a
command produces byte-identical artifacts. Exit codes: 0 all checks pass,
1 a check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from .engine import serialize_events
from .errors import HibernateFlowError
from .harness import baseline as run_baseline
from .harness import run_scenario, sweep
from .scenario import demo_scenario, load_scenario
from .store import StoreSnapshot

log = logging.getLogger("hibernate_flow")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _configure_logging() -> None:
    level = os.environ.get("HIBERNATE_FLOW_LOG", "").lower()
    if level in ("debug", "info"):
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.DEBUG if level == "debug" else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_bytes(payload: dict) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


def _load(args) -> "Scenario":
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    return scenario


def cmd_run(args) -> int:
    scenario = _load(args)
    report, findings = run_scenario(scenario)
    out = Path(args.out)
    _atomic_write(out / "events.log", serialize_events(report.events))
    _atomic_write(out / "final.snapshot", report.final_snapshot.data)
    _atomic_write(
        out / "report.json",
        _json_bytes(
            {
                "scenario": scenario.name,
                "run": report.to_json_dict(),
                "findings": findings.to_json_dict(),
            }
        ),
    )
    completed = sum(1 for a in report.activities if a.completed)
    verdict = "PASS" if findings.passed() else "FAIL"
    print(
        f"run {scenario.name}: {completed}/{len(report.activities)} activities, "
        f"phase {report.final_phase.value}, findings {verdict}"
    )
    return EXIT_OK if findings.passed() else EXIT_CHECK_FAILED


def cmd_baseline(args) -> int:
    scenario = _load(args)
    snapshot = run_baseline(scenario)
    out = Path(args.out)
    _atomic_write(out / "baseline.snapshot", snapshot.data)
    print(f"baseline {scenario.name}: {len(snapshot.lines())} lines")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        a = StoreSnapshot(Path(args.snapshot_a).read_bytes())
        b = StoreSnapshot(Path(args.snapshot_b).read_bytes())
    except OSError as exc:
        print(f"error: cannot read snapshot: {exc}", file=sys.stderr)
        return EXIT_USAGE
    diff = a.first_difference(b)
    if diff is None:
        print("snapshots identical")
        return EXIT_OK
    print(f"snapshots differ: {diff}")
    return EXIT_CHECK_FAILED


def cmd_sweep(args) -> int:
    scenario = _load(args)
    if args.recovery_offset is not None and args.recovery_offset < 0:
        print("error: --recovery-offset must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    if args.no_recovery:
        offsets: tuple[int, ...] = ()
        include_never = True
    else:
        offsets = (args.recovery_offset if args.recovery_offset is not None else 3,)
        include_never = True
    entries = sweep(
        scenario,
        recovery_offsets=offsets,
        include_no_recovery=include_never,
        exhaustive=args.exhaustive,
        jobs=args.jobs,
    )
    all_pass = all(entry.passed() for entry in entries)
    out = Path(args.out)
    _atomic_write(
        out / "sweep.json",
        _json_bytes(
            {
                "scenario": scenario.name,
                "seed": scenario.seed,
                "total_runs": len(entries),
                "pass": all_pass,
                "runs": [entry.to_json_dict() for entry in entries],
            }
        ),
    )
    failures = [entry for entry in entries if not entry.passed()]
    print(
        f"sweep {scenario.name}: {len(entries)} runs, "
        f"{len(entries) - len(failures)} passed, {len(failures)} failed"
    )
    for entry in failures[:10]:
        print(f"  FAIL intrusion={entry.intrusion} mode={entry.mode}")
    return EXIT_OK if all_pass else EXIT_CHECK_FAILED


def cmd_demo(args) -> int:
    data = _json_bytes(demo_scenario())
    if args.out:
        _atomic_write(Path(args.out), data)
        print(f"demo scenario written to {args.out}")
    else:
        sys.stdout.write(data.decode("utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hibernate-flow",
        description=(
            "Workflow engine drill harness: keep executing under intrusion "
            "by encrypting active data and hibernating the rest."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override scenario seed")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="force fully serialized execution (always on in this build)",
        )

    p_run = sub.add_parser("run", help="run a scenario and grade the findings")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_base = sub.add_parser("baseline", help="run with an empty schedule")
    add_common(p_base)
    p_base.set_defaults(func=cmd_baseline)

    p_cmp = sub.add_parser("compare", help="byte-compare two snapshot files")
    p_cmp.add_argument("snapshot_a")
    p_cmp.add_argument("snapshot_b")
    p_cmp.set_defaults(func=cmd_compare)

    p_sweep = sub.add_parser(
        "sweep", help="drill every intrusion point and grade every run"
    )
    add_common(p_sweep)
    p_sweep.add_argument(
        "--recovery-offset",
        type=int,
        default=None,
        help="recovery arrives this many steps after the intrusion (default 3)",
    )
    p_sweep.add_argument(
        "--no-recovery",
        action="store_true",
        help="only drill the never-recover case",
    )
    p_sweep.add_argument(
        "--exhaustive",
        action="store_true",
        help="drill every (intrusion, recovery) pair instead of a fixed offset",
    )
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel drill runs")
    p_sweep.set_defaults(func=cmd_sweep)

    p_demo = sub.add_parser("demo", help="emit the bundled demo scenario")
    p_demo.add_argument("--out", default=None, help="write to file instead of stdout")
    p_demo.set_defaults(func=cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return EXIT_USAGE if exc.code not in (0,) else 0
    try:
        return args.func(args)
    except HibernateFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
