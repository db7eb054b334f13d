"""Cluster simulation: decompose, schedule, select, execute, feed back.

One ``ClusterSim`` runs one (config, policy) pair on a fresh event loop.
Policies differ only in what the allocation path may do:

* ``swiftbot``: two-level scheduler picks the node; all three selection
  phases; predictive pre-warming; overload migration.
* ``local_warm``: subtasks run at the task's origin; keep-alive reuse of
  local containers (Phase 1) or a cold start.  No cross-node coordination.
* ``cold_start``: origin node, every container started cold and discarded.

Startup latency of a subtask is the time from becoming runnable until its
container can execute it: queueing wait + allocation latency.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..decomposer import RULES, Decomposer, Subtask, SubtaskDag
from ..entries import TaskStatus, VersionedTaskEntry, bump
from ..overlay import ChordRing, ring_hash
from ..pool import ContainerRecord, PoolConfig, PoolError, Status, TransitionError, WarmPool
from ..scheduler import (
    Checkpoint,
    DynamicGroup,
    MigrationAborted,
    MigrationDeferred,
    MigrationRequest,
    NodeView,
    OverloadDetector,
    coordinator_schedule,
    commit_migration,
    form_groups,
    request_migration,
    select_group,
)
from ..selector import COLD_START, LOCAL_WARM, MIGRATED_WARM, AllocationOutcome, ConfigError, SelectorConfig, select
from .config import POLICIES, SimConfig
from .engine import EventLoop
from .metrics import MetricSample
from .workload import NOISE_SLOTS, TaskArrival, poisson_workload, trace_workload

def image_shapes() -> dict[str, tuple[float, float, frozenset[str]]]:
    """Resource shape a pre-started container of each image is sized for:
    the largest stage using the image, with every volume those stages mount."""
    shapes: dict[str, tuple[float, float, frozenset[str]]] = {}
    for rules in RULES.values():
        for r in rules:
            cpu, mem, vols = shapes.get(r.image, (0.0, 0.0, frozenset()))
            shapes[r.image] = (max(cpu, r.cpu), max(mem, r.mem_mib), vols | frozenset(r.volumes))
    return shapes


SHAPES = image_shapes()
PHASES = {"swiftbot": (1, 2, 3), "local_warm": (1, 3), "cold_start": (3,)}
EPS = 1e-9


class InvariantViolation(RuntimeError):
    def __init__(self, invariant: str, detail: str):
        super().__init__(f"{invariant}: {detail}")
        self.invariant = invariant
        self.detail = detail


@dataclass
class Job:
    task: "TaskRun"
    st: Subtask
    index: int  # position in the DAG, picks the noise slot
    ready_at: float
    attempt: int = 0
    node: str | None = None
    container: str | None = None
    epoch: int = 0
    ephemeral: bool = False

    def noise_slot(self) -> int:
        return (self.index + 5 * self.attempt) % NOISE_SLOTS


@dataclass
class TaskRun:
    arrival: TaskArrival
    key: int
    dag: SubtaskDag
    origin: str
    pending_deps: dict[str, int]
    index: dict[str, int]
    done: set[str] = field(default_factory=set)
    running: dict[str, Job] = field(default_factory=dict)
    completions: Counter = field(default_factory=Counter)
    observed: dict[str, float] = field(default_factory=dict)
    status: str = "pending"
    recovering_since: float | None = None

    @property
    def task_id(self) -> str:
        return self.arrival.spec.task_id


@dataclass
class NodeState:
    name: str
    cpu: float
    speed: float
    pool: WarmPool
    cpu_free: float
    mem: float
    mem_free: float
    queue: deque = field(default_factory=deque)
    alive: bool = True
    epoch: int = 0
    hits: int = 0
    migrations: int = 0
    colds: int = 0


@dataclass
class RunResult:
    policy: str
    config: SimConfig
    samples: list[MetricSample]
    audit: list[dict]
    pool_snapshots: list[dict]
    pool_logs: dict[str, list[tuple]]
    capacities: dict[str, int]
    injected: int
    completed: int
    failed: int
    pending: int
    completions: dict[str, int]
    rejoin_times: list[float]
    task_recovery: list[float]
    events: int

    def latencies(self) -> list[float]:
        return [s.value for s in self.samples if s.kind == "startup_latency"]


class ClusterSim:
    def __init__(self, config: SimConfig, policy: str):
        if policy not in POLICIES:
            raise ConfigError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        self.cfg = config
        self.policy = policy
        self.cal = config.calibration
        self.costs = self.cal.costs(policy)
        self.loop = EventLoop()
        self.selector = SelectorConfig(
            theta_match=config.theta_match,
            gamma=config.gamma,
            k=config.k,
            serialize_overhead=self.cal.serialize_overhead_s,
            bandwidth_map=config.bandwidth_map(),
            default_bandwidth=self.cal.bandwidth_mib_s,
            phases=PHASES[policy],
        )
        self.decomposer = Decomposer(self.cal.durations())
        names = [n.name for n in config.nodes]
        self.ring = ChordRing.build(
            names, replicas=config.replicas, heartbeat_interval=config.heartbeat_s, timeout_beats=config.timeout_beats
        )
        self.nodes: dict[str, NodeState] = {}
        self.capacities: dict[str, int] = {}
        for prof in config.nodes:
            cap = config.capacity_of(prof)
            self.capacities[prof.name] = cap
            self.nodes[prof.name] = NodeState(
                prof.name, prof.cpu, prof.speed, self._new_pool(prof.name, cap), prof.cpu, prof.mem_mib, prof.mem_mib
            )
        self.order = names
        self.samples: list[MetricSample] = []
        self.audit: list[dict] = []
        self.snapshots: list[dict] = []
        self.retired_logs: dict[str, list[tuple]] = {n: [] for n in names}
        self.tasks: list[TaskRun] = []
        self.groups: list[DynamicGroup] = []
        self.detector = OverloadDetector()
        self.ring_dirty = False
        self.failed_at: dict[str, float] = {}
        self.rejoining: dict[str, float] = {}
        self.rejoin_times: list[float] = []
        self.task_recovery: list[float] = []
        self.outstanding = 0
        self.arrivals_left = 0
        self.completion_log: Counter = Counter()
        self._beating = False
        self._lost: dict[str, list[Job]] = {}
        self.registry: dict[str, NodeView] = {}
        self._ephemeral = itertools.count()

    # -- setup -------------------------------------------------------------------

    def _new_pool(self, name: str, capacity: int) -> WarmPool:
        c = self.cfg
        return WarmPool(
            PoolConfig(
                capacity=capacity,
                ttl=c.ttl_s,
                probe_interval=c.probe_interval_s,
                prewarm_horizon=c.prewarm_horizon_s,
                resume_ratio=self.cal.images[next(iter(self.cal.images))].resume_ratio,
            ),
            node=name,
        )

    def _workload(self) -> list[TaskArrival]:
        c = self.cfg
        if c.arrival == "trace":
            return trace_workload(c.trace, c.seed)
        return poisson_workload(c.seed, c.rate, c.tasks, c.mix)

    def _origin(self, u: float) -> str:
        """Origins are spread in proportion to node cores."""
        weights = np.array([self.nodes[n].cpu for n in self.order], dtype=float)
        cum = np.cumsum(weights / weights.sum())
        return self.order[min(int(np.searchsorted(cum, u, side="right")), len(self.order) - 1)]

    # -- helpers -------------------------------------------------------------------

    def _live(self) -> list[str]:
        return [n for n in self.order if self.nodes[n].alive]

    def _jitter(self, job: Job) -> float:
        return math.exp(self.cal.jitter_sigma * job.task.arrival.startup_noise[job.noise_slot()])

    def _duration(self, job: Job, node: NodeState) -> float:
        base = self.cal.image(job.st.image).duration_s
        z = job.task.arrival.duration_noise[job.noise_slot()]
        return base * math.exp(self.cal.duration_sigma * z) / node.speed

    def _view(self, n: NodeState) -> NodeView:
        return NodeView(
            n.name,
            n.cpu,
            n.mem,
            n.cpu_free,
            n.mem_free,
            n.pool.warm_counts(),
            slots_free=n.pool.free_slots() + len(n.pool.ready()),
        )

    def _views(self) -> dict[str, NodeView]:
        return {n: self._view(self.nodes[n]) for n in self._live()}

    def _emit(self, kind: str, value: float, node: str | None = None, time_s: float | None = None) -> None:
        rate = self.cfg.rate if self.cfg.arrival == "poisson" else None
        self.samples.append(MetricSample(kind, value, self.policy, rate, None, node, time_s))

    # -- arrivals and dispatch -----------------------------------------------------

    def _arrive(self, arrival: TaskArrival) -> None:
        now = self.loop.now
        self.arrivals_left -= 1
        origin = self._origin_for(arrival)
        dag = self.decomposer.decompose(arrival.spec)
        key = ring_hash(arrival.spec.task_id, self.ring.bits)
        run = TaskRun(
            arrival, key, dag, origin,
            {s.subtask_id: len(dag.predecessors(s.subtask_id)) for s in dag.nodes},
            {s.subtask_id: i for i, s in enumerate(dag.nodes)},
        )
        self.tasks.append(run)
        if not self._live():
            run.status = "failed"
            return
        self.outstanding += 1
        self.ring.put_entry(VersionedTaskEntry(key, origin, TaskStatus.PENDING, 0, {origin: 1}), origin)
        for sid in dag.roots():
            self._make_ready(run, sid, now)

    def _origin_for(self, arrival: TaskArrival) -> str:
        origin = self._origin(arrival.origin)
        if self.nodes[origin].alive:
            return origin
        live = self._live()
        i = self.order.index(origin)
        for k in range(1, len(self.order)):
            cand = self.order[(i + k) % len(self.order)]
            if cand in live:
                return cand
        return origin

    def _make_ready(self, run: TaskRun, sid: str, now: float, attempt: int = 0, node: str | None = None) -> None:
        st = run.dag.by_id(sid)
        job = Job(run, st, run.index[sid], now, attempt)
        if self.policy == "swiftbot":
            for n in self._live():
                self.nodes[n].pool.observe_arrival(st.image)
        target = node or self._place(job)
        if target is None:
            if run.status == "pending":
                run.status = "failed"
                self.outstanding -= 1
            return
        job.node = target
        self.nodes[target].queue.append(job)
        self._try_start(target)

    def _fallback(self, origin: str) -> str | None:
        if self.nodes[origin].alive:
            return origin
        live = self._live()
        if not live:
            return None
        return self.ring.lookup(self.ring.position(origin), live[0])

    def _place(self, job: Job) -> str | None:
        if self.policy != "swiftbot":
            return self._fallback(job.task.origin)
        live = self._live()
        if not live:
            return None
        groups = [g for g in self.groups if all(self.nodes[m].alive for m in g.members)]
        if not groups:
            self._regroup()
            groups = self.groups
        group = select_group(job.st, groups)
        views = {n: self.registry.get(n) or self._view(self.nodes[n]) for n in live}
        dispatched, _ = coordinator_schedule(group, [job.st], views)
        if dispatched:
            target = dispatched[0][1]
        else:
            # nothing fits right now: queue at the least-backlogged member
            members = [m for m in group.members if m in views]
            target = min(members, key=lambda m: (len(self.nodes[m].queue), views[m].load, m))
        self._note_dispatch(views[target], job.st)
        return target

    def _note_dispatch(self, view: NodeView, st: Subtask) -> None:
        """The coordinator books its own placements against the cached registry
        entry; completions elsewhere only show up at the next refresh."""
        view.cpu_free -= st.cpu
        view.mem_free -= st.mem_mib
        warm = dict(view.warm)
        if warm.get(st.image, 0) > 0:
            warm[st.image] -= 1
        view.warm = warm
        self.registry[view.name] = view

    def _refresh_registry(self) -> None:
        self.registry = self._views()
        for name, view in self.registry.items():
            self.ring.publish(name, cpu_free=view.cpu_free, warm=dict(view.warm))

    def _regroup(self) -> None:
        self.groups = form_groups(self.ring, self._views(), self.cfg.group_size)

    # -- execution -----------------------------------------------------------------

    def _try_start(self, name: str) -> None:
        node = self.nodes[name]
        while node.alive and node.queue:
            job = node.queue[0]
            if node.cpu_free < job.st.cpu - EPS:
                return
            if not self._start(node, job):
                return
            node.queue.popleft()

    def _pools(self) -> dict[str, list]:
        return {n: list(self.nodes[n].pool.records.values()) for n in self._live()}

    def _start(self, node: NodeState, job: Job) -> bool:
        now = self.loop.now
        st = job.st
        outcome = select(st, node.name, self._pools(), self.ring, self.selector, self.costs)
        jit = self._jitter(job)
        img = self.cal.image(st.image)
        pool = node.pool
        if outcome.kind == LOCAL_WARM:
            rec = pool.acquire(outcome.container_id, now)
            alloc = outcome.startup_latency * jit
            node.hits += 1
        elif outcome.kind == MIGRATED_WARM and (pool.free_slots() > 0 or pool.evict_candidates(1, now)):
            src = self.nodes[outcome.source_node].pool
            rec = src.detach(outcome.container_id, now)
            pool.attach(rec, now)
            pool.acquire(rec.container_id, now)
            alloc = outcome.startup_latency * jit + self.cfg.latency(outcome.source_node, node.name)
            node.migrations += 1
        else:
            if outcome.kind != COLD_START:
                # the migrated container has nowhere to land: start cold instead
                outcome = AllocationOutcome(COLD_START, None, outcome.cold_cost, cold_cost=outcome.cold_cost)
            startup = outcome.startup_latency * jit
            if pool.make_room(now):
                rec = pool.launch(
                    st.image, st.cpu, st.mem_mib, now, startup,
                    volumes=st.volumes, state_size=img.state_mib, stateful=img.stateful,
                )
            else:
                # pool full of busy containers: run a throwaway container outside it
                rec = ContainerRecord(
                    f"{node.name}/{st.image}-x{next(self._ephemeral):05d}", st.image, st.cpu, st.mem_mib,
                    st.volumes, Status.IN_USE, img.state_mib, now, 1, startup, ready_at=now + startup, node=node.name,
                )
                job.ephemeral = True
            alloc = rec.ready_at - now
            node.colds += 1
        entry = outcome.audit(st.subtask_id)
        entry.update(
            {"policy": self.policy, "node": node.name, "time_s": round(now, 9), "gamma": self.selector.gamma}
        )
        self.audit.append(entry)
        wait = now - job.ready_at
        dispatch = self.cfg.latency(job.task.origin, node.name)
        self._emit("startup_latency", wait + alloc + dispatch, node.name, now)
        node.cpu_free -= st.cpu
        node.mem_free -= st.mem_mib
        job.container = rec.container_id
        job.epoch = node.epoch
        job.node = node.name
        run = job.task
        run.running[st.subtask_id] = job
        if run.recovering_since is not None:
            rec_t = now - run.recovering_since
            self.task_recovery.append(rec_t)
            self._emit("recovery_time", rec_t, node.name, now)
            run.recovering_since = None
        duration = self._duration(job, node)
        self.loop.after(alloc + dispatch + duration, self._finish, job, duration)
        return True

    def _finish(self, job: Job, duration: float) -> None:
        node = self.nodes[job.node]
        if not node.alive or node.epoch != job.epoch:
            return  # the node died under this job; recovery re-runs it
        now = self.loop.now
        node.cpu_free += job.st.cpu
        node.mem_free += job.st.mem_mib
        pool = node.pool
        if not job.ephemeral:
            pool.release(job.container, now)
            if self.policy == "cold_start":
                pool.evict(job.container, now, reason="oneshot")
        run = job.task
        sid = job.st.subtask_id
        run.running.pop(sid, None)
        run.completions[sid] += 1
        self.completion_log[sid] += 1
        if sid in run.done:
            raise InvariantViolation("exactly_once", f"{sid} completed twice")
        run.done.add(sid)
        run.observed[job.st.stage] = duration * node.speed
        for nxt in run.dag.successors(sid):
            run.pending_deps[nxt] -= 1
            if run.pending_deps[nxt] == 0:
                self._make_ready(run, nxt, now)
        if len(run.done) == len(run.dag.nodes) and run.status == "pending":
            run.status = "completed"
            self.outstanding -= 1
            owner = self.ring.lookup(run.key, job.node)
            prev = self.ring.get_entry(run.key, owner)
            self.ring.put_entry(
                VersionedTaskEntry(run.key, job.node, TaskStatus.DONE, 0, bump(prev.version if prev else {}, owner)),
                owner,
            )
            self.decomposer.record_feedback(run.task_id, "success", run.observed)
        self._try_start(node.name)

    # -- maintenance ------------------------------------------------------------------

    def _maintain(self) -> None:
        now = self.loop.now
        if self.ring_dirty:
            self.ring.stabilize_round()
            if self.ring.is_consistent():
                self.ring_dirty = False
                for name, t0 in sorted(self.rejoining.items()):
                    self.rejoin_times.append(now - t0)
                    self._emit("recovery_time", now - t0, name, now)
                self.rejoining.clear()
        for name in self._live():
            node = self.nodes[name]
            pool = node.pool
            pool.update_rates(now)
            pool.tick(now)
            pool.probe_health(now)
            if self.policy == "swiftbot":
                self._prewarm(node, now)
                self._check_overload(node, now)
            self._try_start(name)
        if self.policy == "swiftbot":
            self._refresh_registry()
            self._regroup()
        self.loop.after(self.cfg.stabilize_s, self._maintain)

    def _prewarm(self, node: NodeState, now: float) -> None:
        pool = node.pool
        pool.trim_surplus(pool.rates, now)
        for image, count in pool.prewarm_plan(pool.rates, now):
            img = self.cal.image(image)
            cpu, mem, vols = SHAPES[image]
            for _ in range(count):
                rec = pool.admit_warm(
                    image, cpu, mem, now, img.cold_s, volumes=vols, state_size=img.state_mib, stateful=img.stateful
                )
                self.loop.at(rec.ready_at, self._warmed, node.name, rec.container_id, node.epoch)

    def _warmed(self, name: str, cid: str, epoch: int) -> None:
        node = self.nodes[name]
        if not node.alive or node.epoch != epoch:
            return
        rec = node.pool.records.get(cid)
        if rec is not None and rec.status is Status.WARMING:
            node.pool.promote(cid, self.loop.now)
            self._try_start(name)

    def _check_overload(self, node: NodeState, now: float) -> None:
        util = 1.0 - node.cpu_free / node.cpu
        blocked = bool(node.queue) and node.cpu_free >= node.queue[0].st.cpu - EPS
        req = self.detector.observe(
            node.name,
            util,
            now,
            queued_infeasible=blocked,
            task_key=node.queue[0].task.key if node.queue else 0,
            image=node.queue[0].st.image if node.queue else None,
        )
        if req is None:
            return
        if not node.queue:
            self.detector.resolve(node.name)
            return
        try:
            target = request_migration(req, self.ring, self._views(), k=self.cfg.k, audit=self.audit)
        except MigrationDeferred:
            self.detector.resolve(node.name)
            return
        moved = [j for j in node.queue if self.nodes[target].cpu_free >= j.st.cpu - EPS][:1]
        for job in moved:
            node.queue.remove(job)
            job.node = target
            self.nodes[target].queue.append(job)
            self._emit("migration_count", 1, target, now)
        self.detector.resolve(node.name)
        self._try_start(target)

    # -- failures ------------------------------------------------------------------------

    def _beat(self) -> None:
        now = self.loop.now
        self.ring.heartbeat(now)
        for name in sorted(self.ring.detect_failures(now)):
            self._on_detected(name, now)
        if any(not self.nodes[n].alive and n not in self._detected for n in self.nodes):
            self.loop.after(self.cfg.heartbeat_s, self._beat)
        else:
            self._beating = False

    def _crash(self, name: str, rejoin_after: float | None) -> None:
        now = self.loop.now
        node = self.nodes[name]
        if not node.alive:
            return
        hb = self.cfg.heartbeat_s
        last = math.floor(now / hb + EPS) * hb
        self.ring.heartbeat(last)
        self.ring.crash(name)
        node.alive = False
        node.epoch += 1
        self.failed_at[name] = now
        self._detected.discard(name)
        lost = list(node.queue) + [j for r in self.tasks for j in r.running.values() if j.node == name]
        node.queue.clear()
        for j in lost:
            j.task.running.pop(j.st.subtask_id, None)
        self._lost[name] = lost
        # the crashed pool's containers are gone; its history is retired
        self.retired_logs[name].extend(node.pool.log)
        self.retired_logs[name].append((now, "crash", "*", "lost"))
        node.pool = self._new_pool(name, self.capacities[name])
        if not self._beating:
            self._beating = True
            self.loop.at(last + hb, self._beat)
        if rejoin_after is not None:
            self.loop.after(rejoin_after, self._rejoin, name)

    def _on_detected(self, name: str, now: float) -> None:
        self._detected.add(name)
        self.ring_dirty = True
        t_fail = self.failed_at[name]
        by_task: dict[int, list[Job]] = {}
        order: list[TaskRun] = []
        for j in self._lost.pop(name, []):
            if j.task.status != "pending":
                continue
            if id(j.task) not in by_task:
                order.append(j.task)
            by_task.setdefault(id(j.task), []).append(j)
        for run in order:
            run.recovering_since = t_fail
            self._recover(run, by_task[id(run)], name)

    def _recover(self, run: TaskRun, jobs: list[Job], failed: str) -> None:
        if run.status != "pending":
            return
        now = self.loop.now
        live = self._live()
        if not live:
            run.status = "failed"
            self.outstanding -= 1
            return
        target = None
        if self.policy == "swiftbot":
            st = jobs[0].st
            req = MigrationRequest("failure", failed, run.key, len(jobs), image=st.image, volumes=st.volumes)
            try:
                target = request_migration(
                    req, self.ring, self._views(), k=self.cfg.k, require_warm=False, audit=self.audit
                )
            except MigrationDeferred as exc:
                self.loop.after(exc.retry_after, self._recover, run, jobs, failed)
                return
            requester = self.ring.lookup(run.key, target)
            ckpt = Checkpoint(run.key, frozenset(run.done), 0.0, now)
            try:
                commit = commit_migration(
                    self.ring, run.key, target, ckpt, run.dag, requester,
                    num_containers=len(jobs), bandwidth=self.cal.bandwidth_mib_s,
                    serialize_overhead=self.cal.serialize_overhead_s, audit=self.audit,
                )
                delay = commit.transfer_latency
            except MigrationAborted:
                delay = 0.0
            self._emit("migration_count", 1, target, now)
        else:
            delay = 0.0
        for j in jobs:
            node = target or self._fallback(run.origin)
            if node is None:
                run.status = "failed"
                self.outstanding -= 1
                return
            self.loop.after(delay, self._make_ready, run, j.st.subtask_id, now + delay, j.attempt + 1, node)

    def _rejoin(self, name: str) -> None:
        now = self.loop.now
        live = self._live()
        self.ring.join(name, live[0] if live else None, now)
        node = self.nodes[name]
        self.retired_logs[name].extend(node.pool.log)
        node.pool = self._new_pool(name, self.capacities[name])
        node.cpu_free = node.cpu
        node.mem_free = node.mem
        node.alive = True
        self.rejoining[name] = now
        self.ring_dirty = True

    def _seed_pools(self, arrivals: list[TaskArrival]) -> None:
        """Keep-alive policies start from a warmed pool: ``initial_warm`` ready
        containers per image of the workload on every node."""
        if self.policy == "cold_start" or self.cfg.initial_warm <= 0:
            return
        images = sorted({r.image for a in arrivals for r in RULES[a.spec.task_class]})
        for name in self.order:
            pool = self.nodes[name].pool
            for image in images:
                img = self.cal.image(image)
                cpu, mem, vols = SHAPES[image]
                for _ in range(self.cfg.initial_warm):
                    if pool.free_slots() <= 0:
                        break
                    rec = pool.admit_warm(
                        image, cpu, mem, 0.0, 0.0, volumes=vols, state_size=img.state_mib, stateful=img.stateful
                    )
                    pool.promote(rec.container_id, 0.0)

    def _schedule_failures(self) -> None:
        for ev in self.cfg.failure_schedule:
            if ev.at is None:
                continue  # round-indexed events belong to the FL model
            for name in ev.nodes:
                self.loop.at(ev.at, self._crash, name, ev.rejoin_after)

    # -- driver -------------------------------------------------------------------------

    def run(self) -> RunResult:
        self._detected: set[str] = set()
        arrivals = self._workload()
        self.arrivals_left = len(arrivals)
        for a in arrivals:
            if a.spec.task_class not in RULES:
                raise ConfigError(f"task {a.spec.task_id}: unsupported task class {a.spec.task_class!r}")
            self.loop.at(a.time, self._arrive, a)
        self._schedule_failures()
        self._seed_pools(arrivals)
        self.loop.at(0.0, self._maintain)
        last = arrivals[-1].time if arrivals else 0.0
        horizon = self.cfg.duration if self.cfg.duration is not None else last + 600.0
        try:
            self.loop.run(until=horizon, stop=lambda: self.arrivals_left == 0 and self.outstanding == 0)
        except (PoolError, TransitionError) as exc:
            raise InvariantViolation("pool_safety", str(exc)) from None
        return self._result(len(arrivals))


    def _result(self, injected: int) -> RunResult:
        now = self.loop.now
        for name in self.order:
            n = self.nodes[name]
            self._emit("pool_hit", n.hits, name, now)
            self._emit("migration_count", n.migrations, name, now)
            self.snapshots.extend(dict(r, time_s=round(now, 9)) for r in n.pool.snapshot(now))
        completed = sum(1 for r in self.tasks if r.status == "completed")
        failed = sum(1 for r in self.tasks if r.status == "failed")
        pending = injected - completed - failed
        logs = {name: self.retired_logs[name] + self.nodes[name].pool.log for name in self.order}
        return RunResult(
            self.policy, self.cfg, self.samples, self.audit, self.snapshots, logs, dict(self.capacities),
            injected, completed, failed, pending, dict(self.completion_log), list(self.rejoin_times),
            list(self.task_recovery), self.loop.processed,
        )


def run(config: SimConfig, policy: str) -> RunResult:
    """Run one simulation and verify its invariants."""
    result = ClusterSim(config, policy).run()
    problems = check_invariants(result)
    if problems:
        name, detail = problems[0]
        raise InvariantViolation(name, detail)
    return result


def check_invariants(result: RunResult) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    for node, log in result.pool_logs.items():
        cap = result.capacities[node]
        live: set[str] = set()
        status: dict[str, str] = {}
        for _, event, cid, after in log:
            if event in ("admit", "attach"):
                live.add(cid)
                if len(live) > cap:
                    out.append(("pool_capacity", f"{node} holds {len(live)} > {cap}"))
            elif event == "crash":
                live.clear()
            elif event.startswith("evict") or event == "detach":
                if event.startswith("evict") and status.get(cid) == Status.IN_USE.value:
                    out.append(("in_use_eviction", f"{cid} evicted while in use"))
                live.discard(cid)
            status[cid] = after
    for rec in result.audit:
        if rec.get("phase_taken") == 2 and not rec["eta"] < rec["gamma"] * rec["cold_cost"]:
            out.append(("migration_gate", f"{rec['task']}: eta {rec['eta']} >= gamma * {rec['cold_cost']}"))
    for sid, n in result.completions.items():
        if n != 1:
            out.append(("exactly_once", f"{sid} completed {n} times"))
    if result.injected != result.completed + result.failed + result.pending or result.pending < 0:
        out.append(("conservation", f"{result.injected} != {result.completed}+{result.failed}+{result.pending}"))
    return out


def sweep(config: SimConfig, policies: Iterable[str], rates: Iterable[float]) -> list[RunResult]:
    return [run(config.with_(rate=r), p) for p in policies for r in rates]
