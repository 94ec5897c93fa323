"""Workflow process model: ordered activities with declared data footprints
and deterministic scripts of primitive GET/PUT operations.

Workflows here are strictly sequential: activities run in list order, and
each activity declares up front which partitions it reads and writes. The
engine derives everything it needs to protect data under intrusion from
those declarations (see :func:`footprint` and :func:`upcoming_partitions`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import IndexOutOfRange, ParseError, ValidationError

# Identifiers end up in event logs and snapshot labels, so keep them to a
# charset that needs no escaping there.
_IDENT_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass(frozen=True)
class Lit:
    """Literal bytes inside a PUT value expression."""

    data: bytes


@dataclass(frozen=True)
class Reg:
    """Reference to an activity-local register inside a PUT value expression."""

    name: str


ValuePart = Lit | Reg


@dataclass(frozen=True)
class GetOp:
    """Read partition/table/key into an activity-local register."""

    partition: str
    table: str
    key: bytes
    register: str


@dataclass(frozen=True)
class PutOp:
    """Write the concatenation of value parts to partition/table/key."""

    partition: str
    table: str
    key: bytes
    value: tuple[ValuePart, ...]


PrimitiveOp = GetOp | PutOp


@dataclass(frozen=True)
class Activity:
    id: str
    reads: frozenset[str]
    writes: frozenset[str]
    script: tuple[PrimitiveOp, ...]

    @property
    def footprint(self) -> frozenset[str]:
        """Partitions this activity touches: reads | writes."""
        return self.reads | self.writes


@dataclass(frozen=True)
class WorkflowProcess:
    id: str
    activities: tuple[Activity, ...]

    def __len__(self) -> int:
        return len(self.activities)


def _check_ident(value, what: str) -> str:
    if not isinstance(value, str) or not _IDENT_RE.match(value):
        raise ValidationError(f"{what} must match [A-Za-z0-9_.-]+, got {value!r}")
    return value


def validate_workflow(workflow: WorkflowProcess) -> None:
    """Raise ValidationError if any workflow invariant is violated."""
    if not workflow.activities:
        raise ValidationError("workflow must contain at least one activity")
    _check_ident(workflow.id, "workflow id")

    seen: set[str] = set()
    for activity in workflow.activities:
        _check_ident(activity.id, "activity id")
        if activity.id in seen:
            raise ValidationError(f"duplicate activity id: {activity.id}")
        seen.add(activity.id)
        for pid in sorted(activity.reads | activity.writes):
            _check_ident(pid, "partition id")
        _validate_script(activity)


def _validate_script(activity: Activity) -> None:
    assigned: set[str] = set()
    for pos, op in enumerate(activity.script):
        where = f"activity {activity.id} step {pos}"
        _check_ident(op.table, f"{where}: table name")
        if not op.key:
            raise ValidationError(f"{where}: record key must be non-empty")
        if isinstance(op, GetOp):
            if op.partition not in activity.reads:
                raise ValidationError(
                    f"{where}: script references undeclared partition "
                    f"{op.partition} (not in reads)"
                )
            _check_ident(op.register, f"{where}: register name")
            assigned.add(op.register)
        elif isinstance(op, PutOp):
            if op.partition not in activity.writes:
                raise ValidationError(
                    f"{where}: script references undeclared partition "
                    f"{op.partition} (not in writes)"
                )
            if not op.value:
                raise ValidationError(f"{where}: PUT value expression is empty")
            for part in op.value:
                if isinstance(part, Reg) and part.name not in assigned:
                    raise ValidationError(
                        f"{where}: register {part.name} used before assignment"
                    )
        else:
            raise ValidationError(f"{where}: unknown primitive op {op!r}")


def footprint(workflow: WorkflowProcess, index: int) -> frozenset[str]:
    """Active partition set of the activity at ``index``: reads | writes."""
    if not 0 <= index < len(workflow.activities):
        raise IndexOutOfRange(
            f"activity index {index} out of range 0..{len(workflow.activities) - 1}"
        )
    return workflow.activities[index].footprint


def upcoming_partitions(
    workflow: WorkflowProcess, index: int
) -> list[tuple[str, frozenset[str]]]:
    """Footprints of the activities after ``index``, in workflow order,
    with the current activity's own footprint excluded from each.

    This is the hibernation work list and its priority order: the data of
    the next activity comes first, and partitions the ongoing activity is
    using are exempt (they get encrypted in place instead).
    """
    active = footprint(workflow, index)
    result = []
    for activity in workflow.activities[index + 1 :]:
        result.append((activity.id, activity.footprint - active))
    return result


# --- scenario-fragment (de)serialization -----------------------------------

def _decode_value_expr(raw, where: str) -> tuple[ValuePart, ...]:
    if isinstance(raw, str):
        return (Lit(raw.encode("utf-8")),)
    if isinstance(raw, list):
        parts: list[ValuePart] = []
        for item in raw:
            if not isinstance(item, dict) or len(item) != 1:
                raise ParseError(f"{where}: value part must be {{'lit': ...}} or {{'reg': ...}}")
            if "lit" in item:
                parts.append(Lit(str(item["lit"]).encode("utf-8")))
            elif "reg" in item:
                parts.append(Reg(str(item["reg"])))
            else:
                raise ParseError(f"{where}: unknown value part {item!r}")
        return tuple(parts)
    raise ParseError(f"{where}: PUT value must be a string or list of parts")


def _parse_op(raw: dict, where: str) -> PrimitiveOp:
    kind = raw.get("op")
    try:
        if kind == "GET":
            return GetOp(
                partition=raw["partition"],
                table=raw["table"],
                key=str(raw["key"]).encode("utf-8"),
                register=raw["reg"],
            )
        if kind == "PUT":
            return PutOp(
                partition=raw["partition"],
                table=raw["table"],
                key=str(raw["key"]).encode("utf-8"),
                value=_decode_value_expr(raw["value"], where),
            )
    except KeyError as exc:
        raise ParseError(f"{where}: missing field {exc.args[0]} in {kind} op") from exc
    raise ParseError(f"{where}: op kind must be GET or PUT, got {kind!r}")


def parse_workflow(fragment: dict) -> WorkflowProcess:
    """Build and validate a WorkflowProcess from a scenario-document fragment.

    Raises ParseError for structural problems and ValidationError when the
    structure is fine but an invariant is violated.
    """
    if not isinstance(fragment, dict):
        raise ParseError("workflow fragment must be an object")
    try:
        wf_id = fragment["id"]
        raw_activities = fragment["activities"]
    except KeyError as exc:
        raise ParseError(f"workflow fragment missing key {exc.args[0]}") from exc
    if not isinstance(raw_activities, list):
        raise ParseError("workflow activities must be a list")

    activities = []
    for i, raw in enumerate(raw_activities):
        if not isinstance(raw, dict):
            raise ParseError(f"activity #{i} must be an object")
        where = f"activity #{i}"
        try:
            act_id = raw["id"]
            reads = raw.get("reads", [])
            writes = raw.get("writes", [])
            script_raw = raw.get("script", [])
        except KeyError as exc:
            raise ParseError(f"{where} missing key {exc.args[0]}") from exc
        if not isinstance(reads, list) or not isinstance(writes, list):
            raise ParseError(f"{where}: reads/writes must be lists")
        script = tuple(
            _parse_op(op, f"{where} step {j}") for j, op in enumerate(script_raw)
        )
        activities.append(
            Activity(
                id=act_id,
                reads=frozenset(reads),
                writes=frozenset(writes),
                script=script,
            )
        )

    workflow = WorkflowProcess(id=wf_id, activities=tuple(activities))
    validate_workflow(workflow)
    return workflow


def _encode_value_expr(value: tuple[ValuePart, ...]):
    if len(value) == 1 and isinstance(value[0], Lit):
        return value[0].data.decode("utf-8")
    out = []
    for part in value:
        if isinstance(part, Lit):
            out.append({"lit": part.data.decode("utf-8")})
        else:
            out.append({"reg": part.name})
    return out


def serialize_workflow(workflow: WorkflowProcess) -> dict:
    """Inverse of parse_workflow: emit the scenario-document fragment."""
    activities = []
    for activity in workflow.activities:
        script = []
        for op in activity.script:
            if isinstance(op, GetOp):
                script.append(
                    {
                        "op": "GET",
                        "partition": op.partition,
                        "table": op.table,
                        "key": op.key.decode("utf-8"),
                        "reg": op.register,
                    }
                )
            else:
                script.append(
                    {
                        "op": "PUT",
                        "partition": op.partition,
                        "table": op.table,
                        "key": op.key.decode("utf-8"),
                        "value": _encode_value_expr(op.value),
                    }
                )
        activities.append(
            {
                "id": activity.id,
                "reads": sorted(activity.reads),
                "writes": sorted(activity.writes),
                "script": script,
            }
        )
    return {"id": workflow.id, "activities": activities}


def referenced_partitions(workflow: WorkflowProcess) -> frozenset[str]:
    """All partition ids any activity declares."""
    out: set[str] = set()
    for activity in workflow.activities:
        out |= activity.footprint
    return frozenset(out)


def step_positions(workflow: WorkflowProcess) -> list[tuple[int, int]]:
    """(activity index, step index) pairs in execution order."""
    return [
        (ai, si)
        for ai, activity in enumerate(workflow.activities)
        for si in range(len(activity.script))
    ]
