"""Versioned task entries and version-vector arithmetic.

Entries stored in the overlay carry a version vector (node -> counter).  A
write that strictly dominates the stored vector replaces it; a dominated write
is stale; concurrent writes are resolved by a fixed priority chain so that
every replica converges to the same value regardless of arrival order.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Mapping


class TaskStatus(str, enum.Enum):
    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    MIGRATING = "migrating"
    DONE = "done"
    FAILED = "failed"


class Order(enum.Enum):
    EQUAL = "equal"
    BEFORE = "before"  # left < right
    AFTER = "after"  # left > right
    CONCURRENT = "concurrent"


VersionVector = Mapping[str, int]


def compare(a: VersionVector, b: VersionVector) -> Order:
    """Partial order of two version vectors (missing slots count as 0)."""
    le = ge = True
    for k in set(a) | set(b):
        x, y = a.get(k, 0), b.get(k, 0)
        if x < y:
            ge = False
        elif x > y:
            le = False
    if le and ge:
        return Order.EQUAL
    if le:
        return Order.BEFORE
    if ge:
        return Order.AFTER
    return Order.CONCURRENT


def merge(a: VersionVector, b: VersionVector) -> dict[str, int]:
    return {k: max(a.get(k, 0), b.get(k, 0)) for k in sorted(set(a) | set(b))}


def bump(v: VersionVector, node: str) -> dict[str, int]:
    out = dict(v)
    out[node] = out.get(node, 0) + 1
    return out


@dataclass(frozen=True)
class VersionedTaskEntry:
    task_key: int
    assigned_node: str
    status: TaskStatus = TaskStatus.PENDING
    containers_allocated: int = 0
    version: Mapping[str, int] = field(default_factory=dict)
    load_score: float = 0.0
    availability_score: float = 0.0

    def __post_init__(self):
        if any(c < 0 for c in self.version.values()):
            raise ValueError(f"negative version counter in {dict(self.version)}")
        object.__setattr__(self, "status", TaskStatus(self.status))
        object.__setattr__(self, "version", dict(sorted(self.version.items())))

    def payload_key(self):
        return (
            self.assigned_node,
            self.status.value,
            self.containers_allocated,
            self.load_score,
            self.availability_score,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "task_key": self.task_key,
                "assigned_node": self.assigned_node,
                "status": self.status.value,
                "containers_allocated": self.containers_allocated,
                "version": dict(self.version),
                "load_score": self.load_score,
                "availability_score": self.availability_score,
            },
            sort_keys=True,
        )


def _priority(e: VersionedTaskEntry):
    # Smaller tuple wins: higher availability, lower load, smaller node id.
    # The trailing payload fields only matter for otherwise-identical writers
    # and keep the order total.
    return (-e.availability_score, e.load_score, e.assigned_node, e.payload_key())


def resolve(a: VersionedTaskEntry, b: VersionedTaskEntry) -> VersionedTaskEntry:
    """Deterministic winner of two concurrent writes, carrying the merged vector."""
    winner = a if _priority(a) <= _priority(b) else b
    return replace(winner, version=merge(a.version, b.version))


@dataclass(frozen=True)
class PutResult:
    committed: bool
    entry: VersionedTaskEntry  # the value now stored in the slot
    conflict: bool = False  # concurrent write that needed resolution
    incoming_won: bool = True


def apply_write(
    stored: VersionedTaskEntry | None, incoming: VersionedTaskEntry
) -> PutResult:
    """Pure state transition for a single slot; used by every replica."""
    if stored is None:
        return PutResult(True, incoming)
    order = compare(incoming.version, stored.version)
    if order is Order.AFTER:
        return PutResult(True, incoming)
    if order is Order.BEFORE:
        return PutResult(False, stored, incoming_won=False)
    if order is Order.EQUAL and incoming.payload_key() == stored.payload_key():
        return PutResult(True, stored)
    merged = resolve(stored, incoming)
    won = merged.payload_key() == incoming.payload_key()
    return PutResult(True, merged, conflict=True, incoming_won=won)
