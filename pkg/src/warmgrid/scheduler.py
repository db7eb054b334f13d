"""Two-level scheduling and the request / fetch / find / commit migration protocol.

Coarse level: pick a dynamic group for a subtask.  Fine level: the group's
coordinator dispatches ready subtasks earliest-deadline-first onto members
with room.  Migration relocates a task's remaining work to a node holding
warm containers; the reassignment is committed through the overlay's
versioned entries, so concurrent attempts converge on one winner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .decomposer import Subtask, SubtaskDag
from .entries import TaskStatus, VersionedTaskEntry, bump
from .overlay import ChordRing

GROUP_WEIGHTS = (0.4, 0.3, 0.3)  # load, locality, warm match
TARGET_WEIGHTS = (0.4, 0.3, 0.2, 0.1)  # warm fit, load, proximity, history
OVERLOAD_UTILIZATION = 0.85
OVERLOAD_TICKS = 2


class SchedulingError(Exception):
    pass


class InfeasibleSubtaskError(SchedulingError):
    def __init__(self, subtask: Subtask):
        super().__init__(f"{subtask.subtask_id} exceeds every member's total capacity")
        self.subtask = subtask


class MigrationDeferred(SchedulingError):
    def __init__(self, retry_after: float):
        super().__init__(f"no migration target; retry in {retry_after}s")
        self.retry_after = retry_after


class MigrationAborted(SchedulingError):
    """Lost the commit race; ``entry`` is what the overlay holds now."""

    def __init__(self, entry: VersionedTaskEntry):
        super().__init__(f"commit lost to {entry.assigned_node}")
        self.entry = entry


@dataclass
class NodeView:
    """What a coordinator knows about one member, from the overlay registry."""

    name: str
    cpu_total: float
    mem_total: float
    cpu_free: float
    mem_free: float
    warm: Mapping[str, int] = field(default_factory=dict)
    volumes: frozenset[str] = frozenset()
    volume_distance: Mapping[str, float] = field(default_factory=dict)
    history: float = 1.0  # success rate; optimistic prior for unseen nodes
    slots_free: int = 1

    @property
    def load(self) -> float:
        return 1.0 - self.cpu_free / self.cpu_total if self.cpu_total > 0 else 1.0

    def distance(self, volumes: Iterable[str], far: float = 1.0) -> float:
        vols = list(volumes)
        if not vols:
            return 0.0
        return sum(0.0 if v in self.volumes else self.volume_distance.get(v, far) for v in vols) / len(vols)


@dataclass
class DynamicGroup:
    group_id: int
    root: str
    members: tuple[str, ...]
    load: float = 0.0
    warm_index: Mapping[str, int] = field(default_factory=dict)
    volumes: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.root not in self.members:
            raise ValueError("group root must be a member")


def form_groups(ring: ChordRing, views: Mapping[str, NodeView], size: int) -> list[DynamicGroup]:
    """One group per live node: the node plus its ``size - 1`` successors."""
    groups = []
    for gid, addr in enumerate(ring.live_addresses()):
        members = tuple(ring.successors(ring.position(addr), size, addr))
        vs = [views[m] for m in members if m in views]
        if not vs:
            continue
        warm: dict[str, int] = {}
        for v in vs:
            for img, n in v.warm.items():
                warm[img] = warm.get(img, 0) + n
        groups.append(
            DynamicGroup(
                gid,
                addr,
                members,
                load=sum(v.load for v in vs) / len(vs),
                warm_index=warm,
                volumes=frozenset().union(*(v.volumes for v in vs)),
            )
        )
    return groups


def group_score(st: Subtask, g: DynamicGroup, weights=GROUP_WEIGHTS) -> float:
    a, b, c = weights
    locality = len(st.volumes & g.volumes) / len(st.volumes) if st.volumes else 1.0
    warm = 1.0 if g.warm_index.get(st.image, 0) > 0 else 0.0
    return a * (1 - g.load) + b * locality + c * warm


def select_group(st: Subtask, groups: Sequence[DynamicGroup], weights=GROUP_WEIGHTS) -> DynamicGroup:
    if not groups:
        raise SchedulingError("no live group")
    return min(groups, key=lambda g: (-group_score(st, g, weights), g.group_id))


def _edf_key(item: tuple[int, Subtask]):
    idx, st = item
    return (st.deadline is None, st.deadline if st.deadline is not None else 0.0, idx)


def coordinator_schedule(
    group: DynamicGroup, ready: Sequence[Subtask], views: Mapping[str, NodeView]
) -> tuple[list[tuple[Subtask, str]], list[Subtask]]:
    """EDF dispatch within a group.  Returns (dispatched (subtask, node), still queued).

    ``views`` is not mutated; free capacity is tracked on copies.
    """
    members = [views[m] for m in group.members if m in views]
    for st in ready:
        if not any(st.cpu <= v.cpu_total and st.mem_mib <= v.mem_total for v in members):
            raise InfeasibleSubtaskError(st)
    free = {v.name: [v.cpu_free, v.mem_free] for v in members}
    dispatched, queued = [], []
    for _, st in sorted(enumerate(ready), key=_edf_key):
        fits = [v for v in members if free[v.name][0] >= st.cpu - 1e-9 and free[v.name][1] >= st.mem_mib - 1e-9]
        if not fits:
            queued.append(st)
            continue
        best = min(
            fits,
            key=lambda v: (
                v.warm.get(st.image, 0) == 0,
                1 - free[v.name][0] / v.cpu_total,
                v.name,
            ),
        )
        free[best.name][0] -= st.cpu
        free[best.name][1] -= st.mem_mib
        dispatched.append((st, best.name))
    return dispatched, queued


# -- migration ---------------------------------------------------------------


@dataclass(frozen=True)
class MigrationRequest:
    reason: str  # overload | failure | rebalance
    current_node: str
    task_key: int
    num_containers: int = 1
    operation: str = "relocate"
    image: str | None = None
    volumes: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.num_containers < 1:
            raise ValueError("num_containers must be >= 1")
        if self.reason not in ("overload", "failure", "rebalance"):
            raise ValueError(f"unknown migration reason {self.reason!r}")


@dataclass(frozen=True)
class Checkpoint:
    task_key: int
    completed: frozenset[str] = frozenset()
    partial_results_size: float = 0.0
    taken_at: float = 0.0

    def validate(self, dag: SubtaskDag) -> None:
        ids = {n.subtask_id for n in dag.nodes}
        extra = self.completed - ids
        if extra:
            raise ValueError(f"checkpoint names unknown subtasks {sorted(extra)}")
        for sid in self.completed:
            missing = [p for p in dag.predecessors(sid) if p not in self.completed]
            if missing:
                raise ValueError(f"checkpoint not dependency-closed: {sid} done before {missing}")


def resume_frontier(dag: SubtaskDag, completed: Iterable[str]) -> list[str]:
    done = set(completed)
    return [
        sid
        for sid in dag.topological_order()
        if sid not in done and all(p in done for p in dag.predecessors(sid))
    ]


def target_scores(
    req: MigrationRequest, candidates: Sequence[NodeView], weights=TARGET_WEIGHTS
) -> dict[str, tuple[float, float]]:
    """node -> (criteria score, warm fit)."""
    wf, wl, wp, wh = weights
    dist = {v.name: v.distance(req.volumes) for v in candidates}
    far = max(dist.values(), default=0.0)
    out = {}
    for v in candidates:
        fit = min(1.0, v.warm.get(req.image, 0) / req.num_containers) if req.image else 0.0
        proximity = 1.0 - dist[v.name] / far if far > 0 else 1.0
        out[v.name] = (wf * fit + wl * (1 - v.load) + wp * proximity + wh * v.history, fit)
    return out


def request_migration(
    req: MigrationRequest,
    ring: ChordRing,
    views: Mapping[str, NodeView],
    *,
    k: int = 5,
    weights=TARGET_WEIGHTS,
    retry_after: float = 0.5,
    require_warm: bool = True,
    audit: list | None = None,
) -> str:
    """Steps 1-3: route the request by task key, gather candidates, pick the target."""
    if audit is not None:
        audit.append({"step": "request", "reason": req.reason, "node": req.current_node, "task_key": req.task_key})
    owner = ring.lookup(req.task_key, req.current_node)
    names = ring.successors(req.task_key, k, req.current_node)
    if audit is not None:
        audit.append({"step": "fetch", "owner": owner, "candidates": names})
    cands = [views[n] for n in names if n != req.current_node and n in views]
    scores = target_scores(req, cands, weights)
    eligible = [
        v.name
        for v in cands
        if v.slots_free > 0 and v.cpu_free > 0 and (scores[v.name][1] > 0 or not require_warm)
    ]
    if not eligible:
        if audit is not None:
            audit.append({"step": "find", "target": None})
        raise MigrationDeferred(retry_after)
    target = min(eligible, key=lambda n: (-scores[n][0], n))
    if audit is not None:
        audit.append({"step": "find", "target": target, "score": scores[target][0]})
    return target


@dataclass(frozen=True)
class MigrationCommit:
    entry: VersionedTaskEntry
    transfer_latency: float
    frontier: list[str]


def commit_migration(
    ring: ChordRing,
    task_key: int,
    target: str,
    checkpoint: Checkpoint,
    dag: SubtaskDag,
    requester: str,
    *,
    num_containers: int = 1,
    load_score: float = 0.0,
    availability_score: float = 0.0,
    bandwidth: float = 100.0,
    serialize_overhead: float = 0.2,
    base: VersionedTaskEntry | None = None,
    audit: list | None = None,
) -> MigrationCommit:
    """Step 4: write the new assignment and hand over the checkpoint.

    ``base`` is the entry the requester read before deciding; by default the
    current overlay value is read now.
    """
    checkpoint.validate(dag)
    if ring.lookup(ring.position(target)) != target:
        raise SchedulingError(f"target {target} unreachable")
    if base is None:
        base = ring.get_entry(task_key)
    version = bump(base.version if base else {}, requester)
    entry = VersionedTaskEntry(
        task_key, target, TaskStatus.IN_PROGRESS, num_containers, version, load_score, availability_score
    )
    res = ring.put_entry(entry, requester)
    if not res.committed or not res.incoming_won:
        if audit is not None:
            audit.append({"step": "commit", "target": target, "won": False})
        raise MigrationAborted(res.entry)
    latency = checkpoint.partial_results_size / bandwidth + serialize_overhead
    if audit is not None:
        audit.append({"step": "commit", "target": target, "won": True, "transfer_s": latency})
    return MigrationCommit(res.entry, latency, resume_frontier(dag, checkpoint.completed))


def confirm_assignment(ring: ChordRing, task_key: int, node: str) -> bool:
    """Optimistic validation before executing: does the overlay still name us?"""
    e = ring.get_entry(task_key)
    return e is not None and e.assigned_node == node


class OverloadDetector:
    def __init__(self, threshold: float = OVERLOAD_UTILIZATION, ticks: int = OVERLOAD_TICKS):
        self.threshold = threshold
        self.ticks = ticks
        self._streak: dict[str, int] = {}
        self._outstanding: set[str] = set()

    def observe(
        self,
        node: str,
        utilization: float,
        now: float,
        *,
        queued_infeasible: bool = False,
        task_key: int = 0,
        image: str | None = None,
        num_containers: int = 1,
    ) -> MigrationRequest | None:
        streak = self._streak.get(node, 0) + 1 if utilization > self.threshold else 0
        self._streak[node] = streak
        if node in self._outstanding:
            return None
        if streak >= self.ticks or queued_infeasible:
            self._outstanding.add(node)
            return MigrationRequest("overload", node, task_key, num_containers, image=image)
        return None

    def resolve(self, node: str) -> None:
        self._outstanding.discard(node)
        self._streak[node] = 0
