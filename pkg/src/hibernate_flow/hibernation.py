"""Data hibernation: plan one dimension per activity at load time, move
partitions into dimensions while the system is unsafe, and move everything
back when it recovers.

A dimension is a plaintext, activity-scoped replica area covering exactly
that activity's footprint. A record lives in the main store or in exactly
one dimension at any sync point, never both: hibernation moves data, it
does not copy it. When two upcoming activities share a partition it is
hibernated once, into the earlier activity's dimension, and later
activities route to it there.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConflictDetected, InvalidState
from .model import WorkflowProcess, footprint
from .store import PartitionStatus, Store


def dimension_id_for(activity_id: str) -> str:
    return f"dim_{activity_id}"


@dataclass(frozen=True)
class DimensionPlan:
    """Activity id -> (dimension id, partition footprint), plus workflow order."""

    dimensions: dict[str, tuple[str, frozenset[str]]]
    order: tuple[str, ...]

    def dimension_for(self, activity_id: str) -> str:
        return self.dimensions[activity_id][0]

    def partition_set(self, activity_id: str) -> frozenset[str]:
        return self.dimensions[activity_id][1]

    def dimension_ids(self) -> list[str]:
        """Dimension ids in workflow order."""
        return [self.dimensions[a][0] for a in self.order]


def plan_dimensions(workflow: WorkflowProcess) -> DimensionPlan:
    """One dimension per activity, covering its footprint. Deterministic."""
    dims: dict[str, tuple[str, frozenset[str]]] = {}
    for activity in workflow.activities:
        dims[activity.id] = (dimension_id_for(activity.id), activity.footprint)
    return DimensionPlan(
        dimensions=dims, order=tuple(a.id for a in workflow.activities)
    )


def hibernate_partition(store: Store, partition: str, dimension_id: str) -> int:
    """Move (not copy) a plain main-store partition into a dimension.

    Encrypted partitions are never hibernated: the active data is exempt and
    stays encrypted in place. Returns the number of records moved.
    """
    status = store.status(partition)
    if status.encrypted or not status.in_main:
        raise InvalidState(
            f"cannot hibernate partition {partition} in state "
            f"{status.location_label()}/{status.mode_label()}"
        )
    tables = store.take_partition_tables(partition)
    store.put_dimension_tables(dimension_id, partition, tables)
    store.set_status(partition, PartitionStatus(dimension=dimension_id, key_id=None))
    return sum(len(records) for records in tables.values())


def hibernation_worklist(
    plan: DimensionPlan,
    workflow: WorkflowProcess,
    current_index: int,
    store: Store,
) -> list[tuple[str, str]]:
    """(partition, dimension) work items in priority order: the next
    activity's partitions first, then later activities' in workflow order.

    Excludes the active footprint (encrypted in place, not hibernated),
    partitions that are already hibernated, and duplicates — a partition
    shared by several upcoming activities goes to the earliest one's
    dimension.
    """
    seen = set(footprint(workflow, current_index))
    items: list[tuple[str, str]] = []
    for activity in workflow.activities[current_index + 1 :]:
        dim = plan.dimension_for(activity.id)
        for partition in sorted(activity.footprint):
            if partition in seen:
                continue
            seen.add(partition)
            if not store.status(partition).in_main:
                continue  # already hibernated
            items.append((partition, dim))
    return items


def dehibernate_all(store: Store, plan: DimensionPlan) -> int:
    """Move every dimension's records back to their home partitions in the
    main store and empty the dimensions. Returns total records restored.

    A partition found in two dimensions means the single-location invariant
    broke somewhere; that is an engine bug, surfaced as ConflictDetected.
    """
    restored = 0
    owners: dict[str, str] = {}
    for dim in plan.dimension_ids():
        if dim not in store.dimension_ids():
            continue
        for partition in sorted(store.dimension_partitions(dim)):
            if partition in owners:
                raise ConflictDetected(
                    f"partition {partition} present in dimensions "
                    f"{owners[partition]} and {dim}"
                )
            owners[partition] = dim

    for dim in plan.dimension_ids():
        if dim not in store.dimension_ids():
            continue
        contents = store.dimension_partitions(dim)
        for partition in sorted(contents):
            tables = contents[partition]
            store.replace_partition_tables(partition, tables)
            store.set_status(partition, PartitionStatus())
            restored += sum(len(records) for records in tables.values())
        store.clear_dimension(dim)
    return restored
