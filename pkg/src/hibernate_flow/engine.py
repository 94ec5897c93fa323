"""Workflow engine: executes activities step by step and owns every
mode/location transition the protection mechanisms make.

The engine polls the injected-event schedule at primitive-op boundaries.
On an intrusion flag it encrypts the ongoing activity's partitions in
place, hibernates upcoming activities' partitions into their dimensions
(next activity first), and keeps executing — writes to encrypted
partitions land in an overlay cache that is merged into the activity's
dimension when it completes. On a recovery flag it reverses everything.
The engine never enters a wait state: every transition is bounded work
proportional to data size, performed synchronously at the boundary.

Recovery is observable: the flag moves the engine to the Recovering phase
immediately, and the data migration itself runs when the boundary's event
queue is exhausted. An intrusion flag arriving in between aborts the
recovery and the system stays protected.

Event log lines are ``seq<TAB>time<TAB>kind<TAB>k=v;k=v...`` with detail
keys sorted; ``time`` is the global primitive-op counter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from . import chameleon, hibernation
from .chameleon import ChameleonKey, OverlayCache, derive_key
from .errors import (
    ActivityFailure,
    NotFound,
    ScheduleOutOfRange,
    ValidationError,
)
from .hibernation import DimensionPlan
from .model import GetOp, Lit, PutOp, Reg, WorkflowProcess, footprint, referenced_partitions
from .store import Caller, Store, StoreSnapshot, WriteOutcome


class Phase(Enum):
    SAFE = "Safe"
    TRANSITIONING = "Transitioning"
    UNSAFE_STEADY = "UnsafeSteady"
    RECOVERING = "Recovering"


LEGAL_TRANSITIONS = frozenset(
    {
        (Phase.SAFE, Phase.TRANSITIONING),
        (Phase.TRANSITIONING, Phase.UNSAFE_STEADY),
        (Phase.UNSAFE_STEADY, Phase.RECOVERING),
        (Phase.RECOVERING, Phase.SAFE),
        (Phase.UNSAFE_STEADY, Phase.UNSAFE_STEADY),  # repeated intrusion flag
        (Phase.RECOVERING, Phase.UNSAFE_STEADY),  # intrusion during recovery
    }
)


# -- injected events ----------------------------------------------------------

@dataclass(frozen=True)
class ReadRaw:
    """Attacker probe: dump a partition's physical main-store bytes."""

    partition: str
    kind = "read_raw"


@dataclass(frozen=True)
class ExternalRead:
    """Attacker probe: read one record as an external client."""

    partition: str
    table: str
    key: bytes
    kind = "external_read"


@dataclass(frozen=True)
class WriteGarbage:
    """Attacker probe: attempt to overwrite a record with dirty bytes."""

    partition: str
    table: str
    key: bytes
    data: bytes
    kind = "write_garbage"


Probe = ReadRaw | ExternalRead | WriteGarbage


class FlagKind(Enum):
    INTRUSION = "intrusion"
    RECOVERY = "recovery"
    PROBE = "probe"


@dataclass(frozen=True)
class ScheduledEvent:
    activity: int
    step: int
    kind: FlagKind
    probe: Probe | None = None


class Schedule:
    """Injected events keyed by (activity index, step index); events at the
    same position fire in their listed order, before the op executes."""

    def __init__(self, events: list[ScheduledEvent], workflow: WorkflowProcess):
        self._by_position: dict[tuple[int, int], list[ScheduledEvent]] = {}
        for ev in events:
            if not 0 <= ev.activity < len(workflow.activities):
                raise ScheduleOutOfRange(
                    f"scheduled event at activity {ev.activity} outside workflow"
                )
            script_len = len(workflow.activities[ev.activity].script)
            if not 0 <= ev.step < script_len:
                raise ScheduleOutOfRange(
                    f"scheduled event at ({ev.activity}, {ev.step}) outside "
                    f"activity script of length {script_len}"
                )
            self._by_position.setdefault((ev.activity, ev.step), []).append(ev)

    def at(self, activity: int, step: int) -> list[ScheduledEvent]:
        return self._by_position.get((activity, step), [])

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_position.values())


# -- event log ----------------------------------------------------------------

@dataclass(frozen=True)
class Event:
    seq: int
    time: int
    kind: str
    details: dict[str, str]

    def line(self) -> str:
        detail = ";".join(f"{k}={self.details[k]}" for k in sorted(self.details))
        return f"{self.seq}\t{self.time}\t{self.kind}\t{detail}"


def parse_event_line(line: str) -> Event:
    seq, time, kind, detail = line.split("\t", 3)
    details = {}
    if detail:
        for pair in detail.split(";"):
            k, _, v = pair.partition("=")
            details[k] = v
    return Event(seq=int(seq), time=int(time), kind=kind, details=details)


def serialize_events(events: list[Event]) -> bytes:
    return "".join(e.line() + "\n" for e in events).encode("utf-8")


def parse_event_log(data: bytes) -> list[Event]:
    return [
        parse_event_line(line)
        for line in data.decode("utf-8").splitlines()
        if line
    ]


def validate_log(events: list[Event]) -> list[str]:
    """Check the structural invariants of a run's event log. Returns a list
    of problems; empty means valid.

    * seq numbers are gap-free from 0;
    * the STATE_CHANGE sequence is a path in the legal-transition graph
      starting from Safe;
    * ACTIVITY_START order matches increasing activity indexes.
    """
    problems = []
    for i, ev in enumerate(events):
        if ev.seq != i:
            problems.append(f"seq gap at position {i}: found {ev.seq}")
            break

    current = Phase.SAFE
    for ev in events:
        if ev.kind != "STATE_CHANGE":
            continue
        try:
            src = Phase(ev.details["from"])
            dst = Phase(ev.details["to"])
        except (KeyError, ValueError):
            problems.append(f"malformed STATE_CHANGE details: {ev.details}")
            continue
        if src != current:
            problems.append(
                f"STATE_CHANGE from {src.value} but engine was in {current.value}"
            )
        if (src, dst) not in LEGAL_TRANSITIONS:
            problems.append(f"illegal transition {src.value} -> {dst.value}")
        current = dst

    last_index = -1
    for ev in events:
        if ev.kind == "ACTIVITY_START":
            index = int(ev.details["index"])
            if index != last_index + 1:
                problems.append(
                    f"activity order violation: index {index} after {last_index}"
                )
            last_index = index
    return problems


# -- run results ----------------------------------------------------------------

@dataclass
class ActivityRecord:
    id: str
    index: int
    completed: bool = False
    ended_unsafe: bool = False


@dataclass
class ProbeResult:
    probe: Probe
    activity: int
    step: int
    phase: Phase
    protected: bool
    outcome: str
    data: bytes | None = None
    snapshot_unchanged: bool | None = None


@dataclass
class RunReport:
    workflow_id: str
    seed: int
    events: list[Event]
    activities: list[ActivityRecord]
    probe_results: list[ProbeResult]
    final_snapshot: StoreSnapshot
    final_logical: StoreSnapshot
    final_phase: Phase
    intrusion_flags: int
    recovery_flags: int
    recovery_completed: bool
    unsafe_completions: int
    wait_states: int = 0

    def to_json_dict(self) -> dict:
        """Serializable summary; raw probe bytes stay in memory only."""
        return {
            "workflow": self.workflow_id,
            "seed": self.seed,
            "final_phase": self.final_phase.value,
            "activities": [
                {
                    "id": a.id,
                    "index": a.index,
                    "completed": a.completed,
                    "ended_unsafe": a.ended_unsafe,
                }
                for a in self.activities
            ],
            "availability": {
                "unsafe_completions": self.unsafe_completions,
                "wait_states": self.wait_states,
            },
            "flags": {
                "intrusions": self.intrusion_flags,
                "recoveries": self.recovery_flags,
                "recovery_completed": self.recovery_completed,
            },
            "events": len(self.events),
            "snapshot_sha256": self.final_snapshot.sha256(),
            "logical_sha256": self.final_logical.sha256(),
            "probes": [
                {
                    "kind": p.probe.kind,
                    "partition": p.probe.partition,
                    "at": [p.activity, p.step],
                    "phase": p.phase.value,
                    "protected": p.protected,
                    "outcome": p.outcome,
                }
                for p in self.probe_results
            ],
        }

    def to_json_bytes(self) -> bytes:
        return (
            json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"
        ).encode("utf-8")


# -- the engine ----------------------------------------------------------------

class Engine:
    def __init__(
        self,
        workflow: WorkflowProcess,
        store: Store,
        plan: DimensionPlan,
        schedule: Schedule | list[ScheduledEvent],
        seed: int = 0,
    ):
        missing = referenced_partitions(workflow) - store.schema
        if missing:
            raise ValidationError(
                f"workflow references partitions not in store schema: "
                f"{sorted(missing)}"
            )
        self.workflow = workflow
        self.store = store
        self.plan = plan
        self.schedule = (
            schedule if isinstance(schedule, Schedule) else Schedule(schedule, workflow)
        )
        self.seed = seed
        for dim in plan.dimension_ids():
            store.register_dimension(dim)

        self.phase = Phase.SAFE
        self.events: list[Event] = []
        self.probe_results: list[ProbeResult] = []
        self._global_step = 0
        self._current_activity = 0
        self._registers: dict[str, bytes] = {}
        self._overlay: OverlayCache | None = None
        self._active_key: ChameleonKey | None = None
        self._next_key_id = 1
        self._pending_recovery = False
        self._intrusion_flags = 0
        self._recovery_flags = 0
        self._recovery_completed = False
        self._unsafe_completions = 0
        self._records = [
            ActivityRecord(id=a.id, index=i)
            for i, a in enumerate(workflow.activities)
        ]

    # -- event plumbing -----------------------------------------------------

    def _emit(self, kind: str, **details) -> None:
        self.events.append(
            Event(
                seq=len(self.events),
                time=self._global_step,
                kind=kind,
                details={k: str(v) for k, v in details.items()},
            )
        )

    def _state_change(self, dst: Phase) -> None:
        src = self.phase
        assert (src, dst) in LEGAL_TRANSITIONS, f"illegal {src} -> {dst}"
        self.phase = dst
        self._emit("STATE_CHANGE", **{"from": src.value, "to": dst.value})

    # -- main loop ------------------------------------------------------------

    def run(self) -> RunReport:
        for ai, activity in enumerate(self.workflow.activities):
            self._current_activity = ai
            self._registers = {}
            self._emit("ACTIVITY_START", activity=activity.id, index=ai)
            for si, op in enumerate(activity.script):
                self._process_boundary(ai, si)
                self._execute_step(activity, si, op)
            self._on_activity_complete(ai)
        return self._finalize()

    def _finalize(self) -> RunReport:
        return RunReport(
            workflow_id=self.workflow.id,
            seed=self.seed,
            events=self.events,
            activities=self._records,
            probe_results=self.probe_results,
            final_snapshot=self.store.snapshot(),
            final_logical=self.store.logical_snapshot(),
            final_phase=self.phase,
            intrusion_flags=self._intrusion_flags,
            recovery_flags=self._recovery_flags,
            recovery_completed=self._recovery_completed,
            unsafe_completions=self._unsafe_completions,
        )

    def _process_boundary(self, ai: int, si: int) -> None:
        for ev in self.schedule.at(ai, si):
            if ev.kind is FlagKind.INTRUSION:
                self._on_intrusion_flag()
            elif ev.kind is FlagKind.RECOVERY:
                self._on_recovery_flag()
            else:
                self._run_probe(ev.probe, ai, si)
        if self._pending_recovery:
            self._complete_recovery()

    # -- step execution ---------------------------------------------------------

    def _execute_step(self, activity, si: int, op) -> None:
        try:
            if isinstance(op, GetOp):
                value = self.store.read(op.partition, op.table, op.key, Caller.ENGINE)
                self._registers[op.register] = value
                self._emit(
                    "OP_EXEC",
                    op="get",
                    activity=activity.id,
                    step=si,
                    partition=op.partition,
                    table=op.table,
                )
            else:
                value = self._eval_value(op)
                outcome = self.store.write(
                    op.partition,
                    op.table,
                    op.key,
                    value,
                    Caller.ENGINE,
                    activity=activity.id,
                )
                self._emit(
                    "OP_EXEC",
                    op="put",
                    activity=activity.id,
                    step=si,
                    partition=op.partition,
                    table=op.table,
                    outcome=outcome.value,
                )
                if outcome is WriteOutcome.CACHED:
                    self._emit(
                        "CACHE_WRITE", partition=op.partition, table=op.table
                    )
        except NotFound as exc:
            raise ActivityFailure(
                f"activity {activity.id} step {si} failed: {exc}"
            ) from exc
        self._global_step += 1

    def _eval_value(self, op: PutOp) -> bytes:
        parts = []
        for part in op.value:
            if isinstance(part, Lit):
                parts.append(part.data)
            else:
                parts.append(self._registers[part.name])
        return b"".join(parts)

    # -- flag handling ------------------------------------------------------------

    def _on_intrusion_flag(self) -> None:
        self._intrusion_flags += 1
        if self.phase is Phase.UNSAFE_STEADY:
            self._emit("INTRUSION_FLAG", phase=self.phase.value, result="ignored")
            return
        if self.phase is Phase.RECOVERING:
            # Abort the pending recovery; nothing has been migrated back yet,
            # so the store is still fully protected.
            self._emit(
                "INTRUSION_FLAG", phase=self.phase.value, result="abort_recovery"
            )
            self._pending_recovery = False
            self._state_change(Phase.UNSAFE_STEADY)
            self._ensure_protection()
            return

        self._emit("INTRUSION_FLAG", phase=self.phase.value, result="protect")
        self._state_change(Phase.TRANSITIONING)
        key = derive_key(self.seed, self._next_key_id, self.store.transform)
        self._next_key_id += 1
        self._active_key = key

        ai = self._current_activity
        for partition in sorted(footprint(self.workflow, ai)):
            status = self.store.status(partition)
            if status.in_main and not status.encrypted:
                chameleon.encrypt_partition(self.store, partition, key)
                self._emit("ENCRYPT", partition=partition, key_id=key.key_id)

        self._overlay = OverlayCache(owner=self.workflow.activities[ai].id)
        self.store.attach_overlay(self._overlay)

        worklist = hibernation.hibernation_worklist(
            self.plan, self.workflow, ai, self.store
        )
        next_dim = (
            self.plan.dimension_for(self.workflow.activities[ai + 1].id)
            if ai + 1 < len(self.workflow.activities)
            else None
        )
        synchronous = [item for item in worklist if item[1] == next_dim]
        background = [item for item in worklist if item[1] != next_dim]
        for partition, dim in synchronous:
            moved = hibernation.hibernate_partition(self.store, partition, dim)
            self._emit(
                "HIBERNATE",
                partition=partition,
                dimension=dim,
                records=moved,
                background="no",
            )
        self._state_change(Phase.UNSAFE_STEADY)
        # Remaining dimensions populate while the current activity keeps
        # running; the deterministic engine does the work at this same sync
        # point, in worklist order.
        for partition, dim in background:
            moved = hibernation.hibernate_partition(self.store, partition, dim)
            self._emit(
                "HIBERNATE",
                partition=partition,
                dimension=dim,
                records=moved,
                background="yes",
            )

    def _ensure_protection(self) -> None:
        """Re-assert the unsafe layout after an aborted recovery. Normally a
        no-op: nothing was migrated back before the abort."""
        ai = self._current_activity
        key = self._active_key
        for partition in sorted(footprint(self.workflow, ai)):
            status = self.store.status(partition)
            if status.in_main and not status.encrypted:
                chameleon.encrypt_partition(self.store, partition, key)
                self._emit("ENCRYPT", partition=partition, key_id=key.key_id)
        for partition, dim in hibernation.hibernation_worklist(
            self.plan, self.workflow, ai, self.store
        ):
            moved = hibernation.hibernate_partition(self.store, partition, dim)
            self._emit(
                "HIBERNATE",
                partition=partition,
                dimension=dim,
                records=moved,
                background="no",
            )

    def _on_recovery_flag(self) -> None:
        self._recovery_flags += 1
        if self.phase is Phase.SAFE:
            self._emit("RECOVERY_FLAG", phase=self.phase.value, result="ignored")
            return
        if self.phase is Phase.RECOVERING:
            self._emit("RECOVERY_FLAG", phase=self.phase.value, result="ignored")
            return
        self._emit("RECOVERY_FLAG", phase=self.phase.value, result="begin")
        self._state_change(Phase.RECOVERING)
        self._pending_recovery = True

    def _complete_recovery(self) -> None:
        """Migrate everything home: dimensions back to the main store,
        encrypted partitions decrypted, pending overlay writes applied to
        the now-plain partitions."""
        self._pending_recovery = False
        restored = hibernation.dehibernate_all(self.store, self.plan)
        self._emit("DEHIBERNATE", records=restored)
        key = self._active_key
        for partition in self.store.partitions():
            if self.store.status(partition).encrypted:
                chameleon.decrypt_partition(self.store, partition, key)
                self._emit("DECRYPT", partition=partition, key_id=key.key_id)
        if self._overlay is not None:
            pending = self._overlay.drain()
            for (partition, table, rec_key) in sorted(pending):
                self.store.write(
                    partition,
                    table,
                    rec_key,
                    pending[(partition, table, rec_key)],
                    Caller.ENGINE,
                )
            self._emit(
                "FLUSH",
                activity=self._overlay.owner,
                target="main",
                records=len(pending),
            )
            self.store.detach_overlay()
            self._overlay = None
        self.store.purge_keys()
        self._active_key = None
        self._recovery_completed = True
        self._state_change(Phase.SAFE)

    # -- activity completion ---------------------------------------------------

    def _on_activity_complete(self, ai: int) -> None:
        activity = self.workflow.activities[ai]
        record = self._records[ai]
        record.completed = True
        if self.phase is not Phase.SAFE:
            record.ended_unsafe = True
            self._unsafe_completions += 1
            if self._overlay is not None and self._overlay.owner == activity.id:
                self._overlay.mark_owner_complete()
                dim = self.plan.dimension_for(activity.id)
                flushed = chameleon.flush_cache(
                    self._overlay, self.store, dim, self._active_key
                )
                self._emit(
                    "FLUSH", activity=activity.id, target=dim, records=flushed
                )
                self.store.detach_overlay()
                self._overlay = None
        self._emit(
            "ACTIVITY_END",
            activity=activity.id,
            index=ai,
            unsafe="yes" if record.ended_unsafe else "no",
        )

    # -- probes -------------------------------------------------------------------

    def _run_probe(self, probe: Probe, ai: int, si: int) -> None:
        status = self.store.status(probe.partition)
        result = ProbeResult(
            probe=probe,
            activity=ai,
            step=si,
            phase=self.phase,
            protected=status.protected,
            outcome="",
        )
        if isinstance(probe, ReadRaw):
            result.data = self.store.raw_dump(probe.partition)
            result.outcome = "dumped"
        elif isinstance(probe, ExternalRead):
            try:
                result.data = self.store.read(
                    probe.partition, probe.table, probe.key, Caller.EXTERNAL
                )
                result.outcome = "read"
            except NotFound:
                result.data = None
                result.outcome = "not_found"
        else:
            before = self.store.snapshot()
            outcome = self.store.write(
                probe.partition, probe.table, probe.key, probe.data, Caller.EXTERNAL
            )
            after = self.store.snapshot()
            result.outcome = outcome.value
            result.snapshot_unchanged = before.data == after.data
        self._emit(
            "PROBE",
            kind=probe.kind,
            partition=probe.partition,
            phase=self.phase.value,
            protected="yes" if result.protected else "no",
            outcome=result.outcome,
        )
        self.probe_results.append(result)


def run(
    workflow: WorkflowProcess,
    store: Store,
    plan: DimensionPlan,
    schedule: Schedule | list[ScheduledEvent],
    seed: int = 0,
) -> RunReport:
    """Execute the workflow under the injected-event schedule."""
    return Engine(workflow, store, plan, schedule, seed).run()
