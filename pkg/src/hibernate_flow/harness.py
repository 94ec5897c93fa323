"""Deterministic intrusion-drill harness: runs a workflow under injected
intrusion/recovery flags and attacker probes, then grades the outcome.

The correctness oracle is the baseline run: the same workflow and initial
data executed with an empty schedule. A drilled run must either end
byte-identical to the baseline (when recovery completed) or logically
identical after engine-side decryption and dimension fold-back (when the
system was still unsafe at the end).

Confidentiality is graded with sentinels: unique plaintext markers seeded
into the data. Any probe during an unsafe window that returns a sentinel
from a protected partition is a leak. The same probes in the safe phase
must match, proving the scan is live.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .engine import (
    Engine,
    ExternalRead,
    FlagKind,
    Phase,
    Probe,
    ReadRaw,
    RunReport,
    ScheduledEvent,
    WriteGarbage,
)
from .errors import InvalidScenario, ValidationError
from .hibernation import plan_dimensions
from .model import WorkflowProcess, step_positions, validate_workflow
from .store import Store, StoreSnapshot
from .chameleon import TRANSFORMS

GARBAGE = b"\xDE\xAD\xBE\xEF-dirty-data"


@dataclass(frozen=True)
class SeedRecord:
    partition: str
    table: str
    key: bytes
    value: bytes
    sentinel: bool = False


@dataclass
class Scenario:
    """A full drill: workflow, initial data, injected events, and probes."""

    name: str
    seed: int
    workflow: WorkflowProcess
    initial_data: list[SeedRecord]
    schedule: list[ScheduledEvent] = field(default_factory=list)
    probes: list[Probe] = field(default_factory=list)
    transform: str = "xor-keystream"

    def sentinels(self) -> list[bytes]:
        return [r.value for r in self.initial_data if r.sentinel]

    def sentinel_record(self, partition: str) -> SeedRecord | None:
        for record in self.initial_data:
            if record.sentinel and record.partition == partition:
                return record
        return None

    def partitions(self) -> list[str]:
        from .model import referenced_partitions

        out = set(referenced_partitions(self.workflow))
        out.update(r.partition for r in self.initial_data)
        return sorted(out)

    def validate(self) -> None:
        validate_workflow(self.workflow)
        if self.transform not in TRANSFORMS:
            raise InvalidScenario(f"unknown transform: {self.transform}")
        values = [r.value for r in self.initial_data]
        for record in self.initial_data:
            if not record.sentinel:
                continue
            if values.count(record.value) > 1:
                raise InvalidScenario(
                    f"sentinel {record.value!r} is not unique in initial data"
                )
            for other in self.initial_data:
                if other is record:
                    continue
                if record.value in other.value:
                    raise InvalidScenario(
                        f"sentinel {record.value!r} appears inside another value"
                    )
        # Schedule positions are checked against the workflow by the engine's
        # Schedule constructor; do it here so invalid scenarios fail early.
        from .engine import Schedule

        Schedule(self.schedule, self.workflow)
        for ev in self.schedule:
            if ev.kind is FlagKind.PROBE and ev.probe is None:
                raise InvalidScenario("probe event without a probe")


def build_store(scenario: Scenario) -> Store:
    store = Store(scenario.partitions(), transform=TRANSFORMS[scenario.transform])
    store.seed(
        (r.partition, r.table, r.key, r.value) for r in scenario.initial_data
    )
    return store


def baseline(scenario: Scenario) -> StoreSnapshot:
    """Final snapshot of the same workflow and data with no injected events."""
    scenario.validate()
    store = build_store(scenario)
    plan = plan_dimensions(scenario.workflow)
    report = Engine(scenario.workflow, store, plan, [], scenario.seed).run()
    return report.final_snapshot


@dataclass
class LeakFinding:
    probe_kind: str
    partition: str
    at: tuple[int, int]
    sentinel: bytes

    def to_json_dict(self) -> dict:
        return {
            "probe": self.probe_kind,
            "partition": self.partition,
            "at": list(self.at),
            "sentinel": self.sentinel.decode("utf-8", "replace"),
        }


@dataclass
class Findings:
    """What the drill proved, derived from the report and the baseline."""

    leaks: list[LeakFinding]
    safe_matches: int
    unprotected_matches: int
    rejected_writes: int
    accepted_external_writes_protected: int
    integrity_violations: int
    unsafe_completions: int
    wait_states: int
    all_completed: bool
    activities_in_order: bool
    recovery_completed: bool
    equivalence_mode: str  # "snapshot" | "logical"
    equivalence_pass: bool

    def passed(self) -> bool:
        return (
            not self.leaks
            and self.accepted_external_writes_protected == 0
            and self.integrity_violations == 0
            and self.equivalence_pass
            and self.wait_states == 0
            and self.all_completed
            and self.activities_in_order
        )

    def to_json_dict(self) -> dict:
        return {
            "leaks": [leak.to_json_dict() for leak in self.leaks],
            "safe_matches": self.safe_matches,
            "unprotected_matches": self.unprotected_matches,
            "rejected_writes": self.rejected_writes,
            "accepted_external_writes_protected": self.accepted_external_writes_protected,
            "integrity_violations": self.integrity_violations,
            "availability": {
                "unsafe_completions": self.unsafe_completions,
                "wait_states": self.wait_states,
            },
            "all_completed": self.all_completed,
            "activities_in_order": self.activities_in_order,
            "recovery_completed": self.recovery_completed,
            "equivalence": {
                "mode": self.equivalence_mode,
                "pass": self.equivalence_pass,
            },
            "pass": self.passed(),
        }


def evaluate(
    scenario: Scenario, report: RunReport, base: StoreSnapshot
) -> Findings:
    sentinels = scenario.sentinels()
    leaks: list[LeakFinding] = []
    safe_matches = 0
    unprotected_matches = 0
    rejected = 0
    accepted_protected = 0
    integrity_violations = 0

    for result in report.probe_results:
        if isinstance(result.probe, WriteGarbage):
            if result.outcome == "rejected":
                rejected += 1
                if result.snapshot_unchanged is False:
                    integrity_violations += 1
            elif result.protected:
                accepted_protected += 1
            continue
        if result.data is None:
            continue
        for sentinel in sentinels:
            if sentinel not in result.data:
                continue
            if result.phase is Phase.SAFE:
                safe_matches += 1
            elif result.protected:
                leaks.append(
                    LeakFinding(
                        probe_kind=result.probe.kind,
                        partition=result.probe.partition,
                        at=(result.activity, result.step),
                        sentinel=sentinel,
                    )
                )
            else:
                unprotected_matches += 1

    if report.final_phase is Phase.SAFE:
        mode = "snapshot"
        equal = report.final_snapshot.data == base.data
    else:
        mode = "logical"
        equal = report.final_logical.data == base.data

    order_ok = all(
        record.index == i for i, record in enumerate(report.activities)
    ) and all(record.completed for record in report.activities)

    return Findings(
        leaks=leaks,
        safe_matches=safe_matches,
        unprotected_matches=unprotected_matches,
        rejected_writes=rejected,
        accepted_external_writes_protected=accepted_protected,
        integrity_violations=integrity_violations,
        unsafe_completions=report.unsafe_completions,
        wait_states=report.wait_states,
        all_completed=all(r.completed for r in report.activities),
        activities_in_order=order_ok,
        recovery_completed=report.recovery_completed,
        equivalence_mode=mode,
        equivalence_pass=equal,
    )


def run_scenario(scenario: Scenario) -> tuple[RunReport, Findings]:
    """Run the drill and grade it against the baseline oracle."""
    scenario.validate()
    base = baseline(scenario)
    store = build_store(scenario)
    plan = plan_dimensions(scenario.workflow)
    report = Engine(
        scenario.workflow, store, plan, scenario.schedule, scenario.seed
    ).run()
    return report, evaluate(scenario, report, base)


# -- sweep -----------------------------------------------------------------------

@dataclass
class SweepEntry:
    intrusion: tuple[int, int]
    recovery: tuple[int, int] | None
    mode: str
    findings: Findings
    expected_unsafe_completions: int

    def passed(self) -> bool:
        return (
            self.findings.passed()
            and self.findings.safe_matches >= 1
            and self.findings.unsafe_completions == self.expected_unsafe_completions
        )

    def to_json_dict(self) -> dict:
        return {
            "intrusion": list(self.intrusion),
            "recovery": list(self.recovery) if self.recovery else None,
            "mode": self.mode,
            "expected_unsafe_completions": self.expected_unsafe_completions,
            "findings": self.findings.to_json_dict(),
            "pass": self.passed(),
        }


def _activity_end_steps(workflow: WorkflowProcess) -> list[int]:
    """Global index of each activity's last op."""
    ends = []
    total = 0
    for activity in workflow.activities:
        total += len(activity.script)
        ends.append(total - 1)
    return ends


def expected_unsafe_completions(
    workflow: WorkflowProcess, intrusion_global: int, recovery_global: int | None
) -> int:
    """How many activities a correct engine completes inside the unsafe
    window, derived from the workflow shape alone."""
    count = 0
    for end in _activity_end_steps(workflow):
        if end < intrusion_global:
            continue
        if recovery_global is not None and end >= recovery_global:
            continue
        count += 1
    return count


def _drill_probes(scenario: Scenario, protected: set[str]) -> list[Probe]:
    probes: list[Probe] = []
    for partition in scenario.partitions():
        probes.append(ReadRaw(partition))
        sentinel = scenario.sentinel_record(partition)
        if sentinel is not None:
            probes.append(ExternalRead(partition, sentinel.table, sentinel.key))
            if partition in protected:
                probes.append(
                    WriteGarbage(partition, sentinel.table, sentinel.key, GARBAGE)
                )
    return probes


def _sweep_schedule(
    scenario: Scenario,
    positions: list[tuple[int, int]],
    intrusion_global: int,
    recovery_global: int | None,
) -> list[ScheduledEvent]:
    """Intrusion at the given point, probes right after it, the same probes
    in the safe phase first, and recovery at the offset point if in range."""
    workflow = scenario.workflow
    ia, istep = positions[intrusion_global]
    # Partitions that will be protected right after the flag: the active
    # footprint (encrypted) plus everything any remaining activity needs
    # (hibernated).
    protected: set[str] = set()
    for activity in workflow.activities[ia:]:
        protected |= activity.footprint

    events: list[ScheduledEvent] = []
    first_a, first_s = positions[0]
    for probe in _drill_probes(scenario, set()):
        if not isinstance(probe, WriteGarbage):
            events.append(
                ScheduledEvent(first_a, first_s, FlagKind.PROBE, probe=probe)
            )
    events.append(ScheduledEvent(ia, istep, FlagKind.INTRUSION))
    for probe in _drill_probes(scenario, protected):
        events.append(ScheduledEvent(ia, istep, FlagKind.PROBE, probe=probe))
    if recovery_global is not None and recovery_global < len(positions):
        ra, rstep = positions[recovery_global]
        events.append(ScheduledEvent(ra, rstep, FlagKind.RECOVERY))
    return events


def sweep(
    scenario: Scenario,
    recovery_offsets: tuple[int, ...] = (3,),
    include_no_recovery: bool = True,
    exhaustive: bool = False,
    jobs: int = 1,
) -> list[SweepEntry]:
    """Run the drill for every (activity, step) intrusion point and the
    configured recovery modes; entries come back sorted by injection point."""
    scenario.validate()
    positions = step_positions(scenario.workflow)
    if not positions:
        raise InvalidScenario("workflow has no primitive ops to sweep")

    cases: list[tuple[int, int | None, str]] = []
    for g in range(len(positions)):
        if exhaustive:
            for rg in range(g, len(positions)):
                cases.append((g, rg, f"recovery@{rg - g:+d}"))
            cases.append((g, None, "never"))
        else:
            for offset in recovery_offsets:
                if offset < 0:
                    raise InvalidScenario(f"negative recovery offset: {offset}")
                cases.append((g, g + offset, f"offset:{offset}"))
            if include_no_recovery:
                cases.append((g, None, "never"))

    base = baseline(scenario)
    plan = plan_dimensions(scenario.workflow)

    def run_case(case: tuple[int, int | None, str]) -> SweepEntry:
        g, rg, mode = case
        schedule = _sweep_schedule(scenario, positions, g, rg)
        store = build_store(scenario)
        report = Engine(
            scenario.workflow, store, plan, schedule, scenario.seed
        ).run()
        findings = evaluate(scenario, report, base)
        effective_rg = rg if rg is not None and rg < len(positions) else None
        return SweepEntry(
            intrusion=positions[g],
            recovery=positions[effective_rg] if effective_rg is not None else None,
            mode=mode,
            findings=findings,
            expected_unsafe_completions=expected_unsafe_completions(
                scenario.workflow, g, effective_rg
            ),
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(run_case, cases))
    else:
        entries = [run_case(case) for case in cases]
    entries.sort(key=lambda e: (e.intrusion, e.mode, e.recovery or (-1, -1)))
    return entries
