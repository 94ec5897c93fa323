"""Partitioned in-memory key-value store with per-partition location and mode.

Every read and write routes through status-aware dispatch:

* location: the partition's records live in the main store or in a named
  dimension (while hibernated).
* mode: main-store records are plaintext, or encrypted read-only during an
  unsafe window.

Mode and location only change through the engine-facing transition helpers
in :mod:`hibernate_flow.chameleon` and :mod:`hibernate_flow.hibernation`;
normal callers use :meth:`Store.read` / :meth:`Store.write` and say who they
are (engine or external client). External callers are never handed
plaintext of a protected partition: encrypted partitions serve raw
ciphertext bytes, hibernated partitions serve nothing at all.

Snapshot format (one canonical byte serialization, used for files and for
byte-equality oracles)::

    #status\t<partition>\t<location>\t<mode>\n     sorted by partition
    <partition>\t<table>\t<key-hex>\t<value-hex>\n sorted record lines

Dimension records use the partition label ``dim:<dimension>/<partition>``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

from .errors import (
    DuplicateRecord,
    InvalidState,
    NotFound,
    UnknownDimension,
    UnknownPartition,
)

TransformFn = Callable[[bytes, bytes], bytes]

# Tables within a partition: table name -> record key -> value.
Tables = dict[str, dict[bytes, bytes]]

EMPTY_MARKER_PREFIX = b"#empty"


class Caller(Enum):
    ENGINE = "engine"
    EXTERNAL = "external"


class WriteOutcome(Enum):
    APPLIED = "applied"
    CACHED = "cached"
    REJECTED = "rejected"


@dataclass(frozen=True)
class PartitionStatus:
    """Location (main store vs a dimension) and mode (plain vs encrypted)."""

    dimension: str | None = None  # None => main store
    key_id: int | None = None  # None => plain; else encrypted read-only

    @property
    def in_main(self) -> bool:
        return self.dimension is None

    @property
    def encrypted(self) -> bool:
        return self.key_id is not None

    @property
    def protected(self) -> bool:
        """True while the partition is unreadable to external callers."""
        return self.encrypted or self.dimension is not None

    def location_label(self) -> str:
        return "main" if self.dimension is None else f"dim:{self.dimension}"

    def mode_label(self) -> str:
        return "plain" if self.key_id is None else f"enc:{self.key_id}"


@dataclass(frozen=True)
class StoreSnapshot:
    """Canonical, deterministic byte serialization of a whole store."""

    data: bytes

    def sha256(self) -> str:
        import hashlib

        return hashlib.sha256(self.data).hexdigest()

    def lines(self) -> list[bytes]:
        return self.data.split(b"\n")[:-1] if self.data else []

    def first_difference(self, other: "StoreSnapshot") -> str | None:
        """Human-readable description of the first differing line, or None."""
        if self.data == other.data:
            return None
        a, b = self.lines(), other.lines()
        for i in range(max(len(a), len(b))):
            left = a[i] if i < len(a) else b"<missing>"
            right = b[i] if i < len(b) else b"<missing>"
            if left != right:
                return (
                    f"line {i + 1}: "
                    f"{left.decode('utf-8', 'replace')!r} != "
                    f"{right.decode('utf-8', 'replace')!r}"
                )
        return "snapshots differ in length only"


def _record_lines(label: str, tables: Tables) -> list[bytes]:
    lines = []
    for table in sorted(tables):
        for key in sorted(tables[table]):
            lines.append(
                b"\t".join(
                    [
                        label.encode("utf-8"),
                        table.encode("utf-8"),
                        key.hex().encode("ascii"),
                        tables[table][key].hex().encode("ascii"),
                    ]
                )
                + b"\n"
            )
    return lines


class Store:
    """Embedded partitioned store shared by the engine and the drill harness.

    All mutations are serialized by a re-entrant lock; the deterministic
    engine is single-threaded, but the harness may snapshot concurrently.
    """

    def __init__(self, partitions: Iterable[str], transform: TransformFn | None = None):
        from .chameleon import xor_keystream  # default transform; avoids cycle at import

        self._lock = threading.RLock()
        self._tables: dict[str, Tables] = {}
        self._status: dict[str, PartitionStatus] = {}
        for pid in sorted(set(partitions)):
            self._tables[pid] = {}
            self._status[pid] = PartitionStatus()
        # dimension id -> partition id -> tables (plaintext)
        self._dimensions: dict[str, dict[str, Tables]] = {}
        self._keyring: dict[int, bytes] = {}
        self._overlay = None  # OverlayCache while a partition set is encrypted
        self.transform: TransformFn = transform or xor_keystream

    # -- schema / status ----------------------------------------------------

    @property
    def schema(self) -> frozenset[str]:
        return frozenset(self._status)

    def partitions(self) -> list[str]:
        return sorted(self._status)

    def status(self, partition: str) -> PartitionStatus:
        self._require_partition(partition)
        return self._status[partition]

    def _require_partition(self, partition: str) -> None:
        if partition not in self._status:
            raise UnknownPartition(f"unknown partition: {partition}")

    def register_dimension(self, dimension_id: str) -> None:
        with self._lock:
            self._dimensions.setdefault(dimension_id, {})

    def dimension_ids(self) -> list[str]:
        return sorted(self._dimensions)

    def _require_dimension(self, dimension_id: str) -> None:
        if dimension_id not in self._dimensions:
            raise UnknownDimension(f"unknown dimension: {dimension_id}")

    # -- seeding -------------------------------------------------------------

    def seed(self, records: Iterable[tuple[str, str, bytes, bytes]]) -> None:
        """Populate an empty store; all partitions end up main-store plaintext."""
        with self._lock:
            for partition, table, key, value in records:
                self._require_partition(partition)
                status = self._status[partition]
                if not status.in_main or status.encrypted:
                    raise InvalidState(f"cannot seed partition {partition} in state {status}")
                tables = self._tables[partition]
                bucket = tables.setdefault(table, {})
                if key in bucket:
                    raise DuplicateRecord(
                        f"duplicate record {partition}/{table}/{key.hex()}"
                    )
                bucket[key] = value

    # -- key material (installed by encrypt_partition, purged on recovery) ---

    def install_key(self, key_id: int, secret: bytes) -> None:
        with self._lock:
            self._keyring[key_id] = secret

    def purge_keys(self) -> None:
        with self._lock:
            self._keyring.clear()

    def _secret_for(self, key_id: int) -> bytes:
        try:
            return self._keyring[key_id]
        except KeyError:
            raise InvalidState(f"no key material for key id {key_id}") from None

    # -- overlay wiring (owned by the engine during unsafe windows) ----------

    def attach_overlay(self, overlay) -> None:
        with self._lock:
            self._overlay = overlay

    def detach_overlay(self) -> None:
        with self._lock:
            self._overlay = None

    @property
    def overlay(self):
        return self._overlay

    # -- routed access --------------------------------------------------------

    def read(self, partition: str, table: str, key: bytes, caller: Caller) -> bytes:
        """Status-aware read; external callers never receive plaintext of a
        protected partition."""
        with self._lock:
            status = self.status(partition)
            if status.dimension is not None:
                if caller is Caller.ENGINE:
                    tables = self._dimensions[status.dimension].get(partition, {})
                    return self._lookup(tables, partition, table, key)
                # Main store holds nothing for a hibernated partition, and the
                # dimension area is not reachable from outside the engine.
                raise NotFound(f"{partition}/{table}/{key.hex()} not found")
            if status.encrypted:
                secret = self._secret_for(status.key_id)
                if caller is Caller.ENGINE:
                    if self._overlay is not None:
                        pending = self._overlay.lookup(partition, table, key)
                        if pending is not None:
                            return pending
                    stored = self._lookup(
                        self._tables[partition], partition, table,
                        self.transform(secret, key),
                    )
                    return self.transform(secret, stored)
                # External: locate by the physically stored key, hand back the
                # raw ciphertext bytes untouched.
                return self._lookup(
                    self._tables[partition], partition, table,
                    self.transform(secret, key),
                )
            return self._lookup(self._tables[partition], partition, table, key)

    @staticmethod
    def _lookup(tables: Tables, partition: str, table: str, key: bytes) -> bytes:
        try:
            return tables[table][key]
        except KeyError:
            raise NotFound(f"{partition}/{table}/{key.hex()} not found") from None

    def write(
        self,
        partition: str,
        table: str,
        key: bytes,
        value: bytes,
        caller: Caller,
        activity: str | None = None,
    ) -> WriteOutcome:
        """Status-aware write. ``activity`` identifies the engine-side writer
        for overlay ownership checks; external callers leave it None."""
        with self._lock:
            status = self.status(partition)
            if status.dimension is not None:
                if caller is Caller.ENGINE:
                    tables = self._dimensions[status.dimension].setdefault(partition, {})
                    tables.setdefault(table, {})[key] = value
                    return WriteOutcome.APPLIED
                return WriteOutcome.REJECTED
            if status.encrypted:
                if caller is Caller.ENGINE:
                    if self._overlay is None:
                        raise InvalidState(
                            f"engine write to encrypted partition {partition} "
                            "with no overlay attached"
                        )
                    self._overlay.write(activity, partition, table, key, value)
                    return WriteOutcome.CACHED
                return WriteOutcome.REJECTED
            self._tables[partition].setdefault(table, {})[key] = value
            return WriteOutcome.APPLIED

    # -- physical views --------------------------------------------------------

    def raw_dump(self, partition: str) -> bytes:
        """Exactly what is physically stored for the partition in the main
        store, raw bytes included: plaintext records, ciphertext records, or
        the empty marker when the data has been hibernated away. This is the
        attacker's view; it never consults the overlay or key material."""
        with self._lock:
            status = self.status(partition)
            if status.dimension is not None:
                return EMPTY_MARKER_PREFIX + b"\t" + partition.encode("utf-8") + b"\n"
            tables = self._tables[partition]
            chunks = []
            for table in sorted(tables):
                for key in sorted(tables[table]):
                    chunks.append(
                        b"\t".join(
                            [
                                partition.encode("utf-8"),
                                table.encode("utf-8"),
                                key,
                                tables[table][key],
                            ]
                        )
                        + b"\n"
                    )
            return b"".join(chunks)

    def snapshot(self) -> StoreSnapshot:
        """Deterministic deep serialization of partitions, statuses, and
        dimension contents."""
        with self._lock:
            chunks: list[bytes] = []
            for pid in sorted(self._status):
                status = self._status[pid]
                chunks.append(
                    b"\t".join(
                        [
                            b"#status",
                            pid.encode("utf-8"),
                            status.location_label().encode("utf-8"),
                            status.mode_label().encode("utf-8"),
                        ]
                    )
                    + b"\n"
                )
            record_lines: list[bytes] = []
            for pid in sorted(self._tables):
                record_lines.extend(_record_lines(pid, self._tables[pid]))
            for dim in sorted(self._dimensions):
                for pid in sorted(self._dimensions[dim]):
                    record_lines.extend(
                        _record_lines(f"dim:{dim}/{pid}", self._dimensions[dim][pid])
                    )
            chunks.extend(sorted(record_lines))
            return StoreSnapshot(data=b"".join(chunks))

    def logical_snapshot(self, include_overlay: bool = True) -> StoreSnapshot:
        """Engine-eye plaintext view, normalized as if every partition were
        main-store plaintext: encrypted partitions are decrypted with the
        installed keys, dimension contents are folded back into their home
        partitions, and pending overlay writes are applied on top. Comparable
        byte-for-byte with a plain run's snapshot."""
        with self._lock:
            logical: dict[str, Tables] = {}
            for pid in sorted(self._status):
                status = self._status[pid]
                if status.dimension is not None:
                    source = self._dimensions[status.dimension].get(pid, {})
                    logical[pid] = {t: dict(kv) for t, kv in source.items()}
                elif status.encrypted:
                    secret = self._secret_for(status.key_id)
                    logical[pid] = {
                        t: {
                            self.transform(secret, k): self.transform(secret, v)
                            for k, v in kv.items()
                        }
                        for t, kv in self._tables[pid].items()
                    }
                else:
                    logical[pid] = {t: dict(kv) for t, kv in self._tables[pid].items()}
            if include_overlay and self._overlay is not None:
                for (pid, table, key), value in self._overlay.items():
                    logical[pid].setdefault(table, {})[key] = value

            chunks = [
                b"\t".join(
                    [b"#status", pid.encode("utf-8"), b"main", b"plain"]
                )
                + b"\n"
                for pid in sorted(logical)
            ]
            record_lines: list[bytes] = []
            for pid in sorted(logical):
                record_lines.extend(_record_lines(pid, logical[pid]))
            chunks.extend(sorted(record_lines))
            return StoreSnapshot(data=b"".join(chunks))

    # -- engine-facing transition plumbing -------------------------------------
    # Used only by chameleon/hibernation; these do not route and do not check
    # caller roles, they just move bytes and flip statuses atomically.

    def partition_tables(self, partition: str) -> Tables:
        self._require_partition(partition)
        return self._tables[partition]

    def replace_partition_tables(self, partition: str, tables: Tables) -> None:
        with self._lock:
            self._require_partition(partition)
            self._tables[partition] = tables

    def take_partition_tables(self, partition: str) -> Tables:
        """Remove and return the partition's main-store contents."""
        with self._lock:
            self._require_partition(partition)
            tables = self._tables[partition]
            self._tables[partition] = {}
            return tables

    def set_status(self, partition: str, status: PartitionStatus) -> None:
        with self._lock:
            self._require_partition(partition)
            self._status[partition] = status

    def dimension_partitions(self, dimension_id: str) -> dict[str, Tables]:
        self._require_dimension(dimension_id)
        return self._dimensions[dimension_id]

    def put_dimension_tables(self, dimension_id: str, partition: str, tables: Tables) -> None:
        with self._lock:
            self._require_dimension(dimension_id)
            self._dimensions[dimension_id][partition] = tables

    def clear_dimension(self, dimension_id: str) -> None:
        with self._lock:
            self._require_dimension(dimension_id)
            self._dimensions[dimension_id] = {}
