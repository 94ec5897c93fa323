"""Dynamic partition protection: reversible byte transform, encrypt/decrypt
transitions, and the overlay cache that absorbs writes while a partition is
encrypted read-only.

The reference transform is byte-wise XOR against a keystream generated by
SHA-256 in counter mode. It is deliberately *not* cryptographically strong;
it is deterministic, length-preserving, self-inverse, and dependency-free,
which is what the drill harness needs. The transform is pluggable
(``TRANSFORMS`` registry, selected by name in the scenario config) so a real
cipher can be dropped in behind the same contract: ``(secret, data) ->
data``, self-inverse and length-preserving.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import (
    ActivityStillRunning,
    InvalidState,
    KeyMismatch,
    NotOwner,
    UnknownDimension,
)
from .store import PartitionStatus, Store, Tables

SECRET_LEN = 32
# Ciphertext must differ from plaintext in every early byte so short values
# and record keys are always scrambled; derivation rejects keys whose
# keystream prefix contains a zero byte.
_NONZERO_PREFIX = 16

_KEYSTREAM_BLOCK = 32  # sha256 digest size


def _keystream(secret: bytes, length: int) -> bytes:
    blocks = []
    for counter in range((length + _KEYSTREAM_BLOCK - 1) // _KEYSTREAM_BLOCK):
        blocks.append(
            hashlib.sha256(secret + counter.to_bytes(8, "big")).digest()
        )
    return b"".join(blocks)[:length]


def xor_keystream(secret: bytes, data: bytes) -> bytes:
    """Reference transform: XOR with a secret-keyed deterministic keystream."""
    if not data:
        return b""
    stream = _keystream(secret, len(data))
    return bytes(a ^ b for a, b in zip(data, stream))


TRANSFORMS = {
    "xor-keystream": xor_keystream,
}


@dataclass(frozen=True)
class ChameleonKey:
    """Per-epoch key: id is loggable, the secret never leaves engine memory."""

    key_id: int
    secret: bytes = field(repr=False)

    def __repr__(self) -> str:  # never expose the secret, even in debug output
        return f"ChameleonKey(key_id={self.key_id}, secret=<redacted>)"


def derive_key(seed: int, key_id: int, transform=xor_keystream) -> ChameleonKey:
    """Derive the epoch secret from the run seed and key id.

    Degenerate secrets (keystream prefix containing a zero byte, which would
    leave plaintext bytes unchanged) are rejected and re-derived with an
    incremented nonce.
    """
    nonce = 0
    while True:
        secret = hashlib.sha256(
            b"hibernate-flow/key/"
            + seed.to_bytes(8, "big", signed=True)
            + key_id.to_bytes(4, "big")
            + nonce.to_bytes(4, "big")
        ).digest()
        probe = transform(secret, b"\x00" * _NONZERO_PREFIX)
        if all(probe):
            return ChameleonKey(key_id=key_id, secret=secret)
        nonce += 1


class OverlayCache:
    """Pending writes of the ongoing activity while its partitions are
    encrypted read-only. Flushed exactly once, when the owner completes."""

    def __init__(self, owner: str):
        self.owner = owner
        self.owner_complete = False
        self._pending: dict[tuple[str, str, bytes], bytes] = {}

    def write(self, activity: str | None, partition: str, table: str, key: bytes, value: bytes) -> None:
        if activity != self.owner or self.owner_complete:
            raise NotOwner(
                f"overlay owned by {self.owner} cannot accept writes from {activity}"
            )
        self._pending[(partition, table, key)] = value

    def lookup(self, partition: str, table: str, key: bytes) -> bytes | None:
        return self._pending.get((partition, table, key))

    def items(self):
        return list(self._pending.items())

    def mark_owner_complete(self) -> None:
        self.owner_complete = True

    def drain(self) -> dict[tuple[str, str, bytes], bytes]:
        """Remove and return all pending writes (recovery path)."""
        pending, self._pending = self._pending, {}
        return pending

    def __len__(self) -> int:
        return len(self._pending)


def cache_write(cache: OverlayCache, activity: str, partition: str, table: str, key: bytes, value: bytes) -> None:
    cache.write(activity, partition, table, key, value)


def encrypt_partition(store: Store, partition: str, key: ChameleonKey) -> None:
    """Transform every record key and value in place and flip the partition
    to encrypted read-only. Table and partition names stay plain so routing
    keeps working."""
    status = store.status(partition)
    if not status.in_main or status.encrypted:
        raise InvalidState(
            f"cannot encrypt partition {partition} in state "
            f"{status.location_label()}/{status.mode_label()}"
        )
    transform = store.transform
    plain = store.partition_tables(partition)
    scrambled: Tables = {
        table: {
            transform(key.secret, k): transform(key.secret, v)
            for k, v in records.items()
        }
        for table, records in plain.items()
    }
    store.replace_partition_tables(partition, scrambled)
    store.set_status(partition, PartitionStatus(dimension=None, key_id=key.key_id))
    store.install_key(key.key_id, key.secret)


def decrypt_partition(store: Store, partition: str, key: ChameleonKey) -> None:
    """Restore plaintext keys and values; the partition returns to plain mode."""
    status = store.status(partition)
    if not status.encrypted or not status.in_main:
        raise InvalidState(
            f"cannot decrypt partition {partition} in state "
            f"{status.location_label()}/{status.mode_label()}"
        )
    if status.key_id != key.key_id:
        raise KeyMismatch(
            f"partition {partition} is encrypted with key id {status.key_id}, "
            f"not {key.key_id}"
        )
    transform = store.transform
    scrambled = store.partition_tables(partition)
    plain: Tables = {
        table: {
            transform(key.secret, k): transform(key.secret, v)
            for k, v in records.items()
        }
        for table, records in scrambled.items()
    }
    store.replace_partition_tables(partition, plain)
    store.set_status(partition, PartitionStatus())


def flush_cache(cache: OverlayCache, store: Store, dimension_id: str, key: ChameleonKey) -> int:
    """Merge the decrypted contents of the owner's encrypted partitions with
    the overlay's pending values (overlay wins) and write the result, as
    plaintext, into the dimension. The main-store partitions are emptied to
    the hibernated marker. Returns the number of records written."""
    if not cache.owner_complete:
        raise ActivityStillRunning(
            f"overlay owner {cache.owner} has not completed; cannot flush"
        )
    if dimension_id not in store.dimension_ids():
        raise UnknownDimension(f"unknown dimension: {dimension_id}")

    transform = store.transform
    targets = [p for p in store.partitions() if store.status(p).encrypted]
    merged: dict[str, Tables] = {}
    for partition in targets:
        scrambled = store.take_partition_tables(partition)
        plain: Tables = {
            table: {
                transform(key.secret, k): transform(key.secret, v)
                for k, v in records.items()
            }
            for table, records in scrambled.items()
        }
        merged[partition] = plain
    for (partition, table, rec_key), value in cache.drain().items():
        # Overlay entries can only target the owner's encrypted partitions.
        if partition not in merged:
            raise InvalidState(
                f"overlay holds a write for non-encrypted partition {partition}"
            )
        merged[partition].setdefault(table, {})[rec_key] = value

    count = 0
    for partition in sorted(merged):
        store.put_dimension_tables(dimension_id, partition, merged[partition])
        store.set_status(
            partition, PartitionStatus(dimension=dimension_id, key_id=None)
        )
        count += sum(len(records) for records in merged[partition].values())
    return count
