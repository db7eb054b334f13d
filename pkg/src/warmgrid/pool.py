"""Per-node inventory of pre-initialized containers.

Covers admission (with eviction under capacity pressure), TTL expiry,
predictive pre-warming from per-image arrival rates, health probing and
persistent-volume backed resume for stateful images.  Every mutation is
appended to ``WarmPool.log`` so invariants can be checked after the fact.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping


class Status(str, enum.Enum):
    WARMING = "warming"
    READY = "ready"
    IN_USE = "in_use"
    DEGRADED = "degraded"
    EVICTED = "evicted"


_ALLOWED = {
    Status.WARMING: {Status.READY},
    Status.READY: {Status.IN_USE, Status.DEGRADED, Status.EVICTED},
    Status.IN_USE: {Status.READY},
    Status.DEGRADED: {Status.EVICTED},
    Status.EVICTED: set(),
}


class PoolError(Exception):
    pass


class PoolFullError(PoolError):
    """Capacity reached and nothing is evictable."""


class TransitionError(PoolError):
    pass


@dataclass
class ContainerRecord:
    container_id: str
    image: str
    cpu: float
    mem_mib: float
    volumes: frozenset[str] = frozenset()
    status: Status = Status.WARMING
    state_size: float = 0.0
    last_access: float = 0.0
    access_count: int = 0
    init_cost: float = 0.0
    stateful: bool = False
    ready_at: float = 0.0
    node: str | None = None

    def move(self, new: Status) -> None:
        if new not in _ALLOWED[self.status]:
            raise TransitionError(f"{self.container_id}: {self.status.value} -> {new.value}")
        self.status = new


@dataclass
class PoolConfig:
    capacity: int = 8
    ttl: float = 600.0
    probe_interval: float = 5.0
    prewarm_horizon: float = 10.0
    resume_ratio: float = 0.25
    eviction_weights: tuple[float, float, float] = (0.4, 0.4, 0.2)
    rate_alpha: float = 0.3

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.ttl <= 0:
            raise ValueError("ttl must be > 0")


def _normalized(values: list[float]) -> list[float]:
    top = max(values, default=0.0)
    return [v / top if top > 0 else 0.0 for v in values]


def retention_scores(records: list[ContainerRecord], weights=(0.4, 0.4, 0.2)) -> list[float]:
    """Higher means more worth keeping; each factor is max-normalized over the set."""
    wf, wi, wr = weights
    freq = _normalized([r.access_count for r in records])
    init = _normalized([r.init_cost for r in records])
    mem = _normalized([r.mem_mib for r in records])
    return [wf * f + wi * i - wr * m for f, i, m in zip(freq, init, mem)]


class WarmPool:
    def __init__(self, config: PoolConfig | None = None, node: str | None = None):
        self.config = config or PoolConfig()
        self.node = node
        self.records: dict[str, ContainerRecord] = {}
        self.log: list[tuple[float, str, str, str]] = []
        self.preserved: Counter[str] = Counter()
        self.rates: dict[str, float] = {}
        self._arrivals: Counter[str] = Counter()
        self._rates_at: float | None = None
        self._last_probe = 0.0
        self._faulty: set[str] = set()
        self.max_occupancy = 0
        self._seq = itertools.count()

    # -- bookkeeping --------------------------------------------------------

    def _record(self, now: float, event: str, rec: ContainerRecord) -> None:
        self.log.append((now, event, rec.container_id, rec.status.value))

    def occupancy(self) -> int:
        return len(self.records)

    def free_slots(self) -> int:
        return self.config.capacity - self.occupancy()

    def by_status(self, *statuses: Status) -> list[ContainerRecord]:
        return [r for r in self.records.values() if r.status in statuses]

    def ready(self) -> list[ContainerRecord]:
        return self.by_status(Status.READY)

    def count(self, image: str, *statuses: Status) -> int:
        statuses = statuses or (Status.READY,)
        return sum(1 for r in self.records.values() if r.image == image and r.status in statuses)

    def warm_counts(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for r in self.ready():
            out[r.image] += 1
        return dict(sorted(out.items()))

    def _insert(self, rec: ContainerRecord, now: float, event: str) -> None:
        rec.node = self.node
        self.records[rec.container_id] = rec
        self.max_occupancy = max(self.max_occupancy, self.occupancy())
        if self.occupancy() > self.config.capacity:
            raise PoolError(f"occupancy {self.occupancy()} exceeds capacity {self.config.capacity}")
        self._record(now, event, rec)

    def make_room(self, now: float) -> bool:
        """Evict one idle record if the pool is full; False if that is impossible."""
        if self.free_slots() > 0:
            return True
        victims = self.evict_candidates(1, now)
        if not victims:
            return False
        self.evict(victims[0].container_id, now)
        return True

    # -- lifecycle ----------------------------------------------------------

    def admit_warm(
        self,
        image: str,
        cpu: float,
        mem_mib: float,
        now: float,
        init_cost: float,
        *,
        volumes: Iterable[str] = (),
        state_size: float = 0.0,
        stateful: bool = False,
    ) -> ContainerRecord:
        if not self.make_room(now):
            raise PoolFullError(f"{self.node}: {self.occupancy()} records, none evictable")
        cost = init_cost
        if stateful and self.preserved[image] > 0:
            self.preserved[image] -= 1
            cost = init_cost * self.config.resume_ratio
        rec = ContainerRecord(
            container_id=f"{self.node or 'pool'}/{image}-{next(self._seq):05d}",
            image=image,
            cpu=cpu,
            mem_mib=mem_mib,
            volumes=frozenset(volumes),
            state_size=state_size,
            last_access=now,
            init_cost=init_cost,
            stateful=stateful,
            ready_at=now + cost,
        )
        self._insert(rec, now, "admit")
        return rec

    def launch(
        self,
        image: str,
        cpu: float,
        mem_mib: float,
        now: float,
        startup: float,
        **kw,
    ) -> ContainerRecord:
        """Start a container on demand for an immediate consumer.

        The record is bound to its consumer from the start (in_use) so nothing
        else can claim or evict it while it boots; ``ready_at`` marks when the
        consumer can actually run.
        """
        rec = self.admit_warm(image, cpu, mem_mib, now, startup, **kw)
        self.promote(rec.container_id, now)
        return self.acquire(rec.container_id, now)

    def promote(self, container_id: str, now: float) -> ContainerRecord:
        rec = self.records[container_id]
        rec.move(Status.READY)
        self._record(now, "ready", rec)
        return rec

    def tick(self, now: float) -> list[ContainerRecord]:
        """Finish warm-ups and expire idle records; returns records evicted by TTL."""
        expired = []
        for rec in list(self.records.values()):
            if rec.status is Status.WARMING and rec.ready_at <= now + 1e-12:
                rec.move(Status.READY)
                self._record(now, "ready", rec)
            elif rec.status is Status.READY and now - rec.last_access > self.config.ttl:
                self.evict(rec.container_id, now, reason="ttl")
                expired.append(rec)
        return expired

    def acquire(self, container_id: str, now: float) -> ContainerRecord:
        rec = self.records[container_id]
        rec.move(Status.IN_USE)
        rec.access_count += 1
        rec.last_access = now
        self._record(now, "acquire", rec)
        return rec

    def release(self, container_id: str, now: float) -> ContainerRecord:
        rec = self.records[container_id]
        rec.move(Status.READY)
        rec.last_access = now
        self._record(now, "release", rec)
        return rec

    def evict(self, container_id: str, now: float, reason: str = "capacity") -> ContainerRecord:
        rec = self.records[container_id]
        if rec.status is Status.IN_USE:
            raise TransitionError(f"{container_id} is in use and cannot be evicted")
        rec.move(Status.EVICTED)
        del self.records[container_id]
        if rec.stateful:
            self.preserved[rec.image] += 1
        self._record(now, f"evict:{reason}", rec)
        return rec

    def detach(self, container_id: str, now: float) -> ContainerRecord:
        """Hand a ready record over to another node (migration source side)."""
        rec = self.records[container_id]
        if rec.status is not Status.READY:
            raise TransitionError(f"{container_id} is {rec.status.value}, only ready records migrate")
        del self.records[container_id]
        self._record(now, "detach", rec)
        return rec

    def attach(self, rec: ContainerRecord, now: float) -> ContainerRecord:
        """Receive a migrated record (destination side)."""
        if not self.make_room(now):
            raise PoolFullError(f"{self.node}: cannot receive {rec.container_id}")
        rec.last_access = now
        self._insert(rec, now, "attach")
        return rec

    # -- eviction -----------------------------------------------------------

    def evict_candidates(self, needed: int, now: float) -> list[ContainerRecord]:
        if needed < 1:
            raise ValueError("needed must be >= 1")
        cands = self.ready()
        scores = retention_scores(cands, self.config.eviction_weights)
        order = sorted(range(len(cands)), key=lambda i: (scores[i], cands[i].last_access, cands[i].container_id))
        return [cands[i] for i in order[:needed]]

    # -- health -------------------------------------------------------------

    def inject_degradation(self, container_id: str) -> None:
        self._faulty.add(container_id)

    def probe_health(self, now: float) -> set[str]:
        """Move faulty ready records to degraded and replace them."""
        if now - self._last_probe < self.config.probe_interval:
            return set()
        self._last_probe = now
        degraded = set()
        for cid in sorted(self._faulty):
            rec = self.records.get(cid)
            if rec is None or rec.status is not Status.READY:
                continue
            rec.move(Status.DEGRADED)
            self._record(now, "degraded", rec)
            degraded.add(cid)
            self._faulty.discard(cid)
            self.evict(cid, now, reason="degraded")
            self.admit_warm(
                rec.image, rec.cpu, rec.mem_mib, now, rec.init_cost,
                volumes=rec.volumes, state_size=rec.state_size, stateful=rec.stateful,
            )
        return degraded

    # -- pre-warming --------------------------------------------------------

    def observe_arrival(self, image: str) -> None:
        self._arrivals[image] += 1

    def update_rates(self, now: float) -> dict[str, float]:
        """Fold arrivals since the last call into per-image EWMA rates (1/s)."""
        if self._rates_at is None:
            self._rates_at = now
            return dict(self.rates)
        dt = now - self._rates_at
        if dt <= 0:
            return dict(self.rates)
        a = self.config.rate_alpha
        for image in set(self.rates) | set(self._arrivals):
            sample = self._arrivals[image] / dt
            prior = self.rates.get(image)
            self.rates[image] = sample if prior is None else a * sample + (1 - a) * prior
        self._arrivals.clear()
        self._rates_at = now
        return dict(self.rates)

    def prewarm_targets(self, arrival_stats: Mapping[str, float]) -> dict[str, int]:
        """Containers worth holding per image: enough for the horizon's expected
        arrivals, capped by the image's share of the pool."""
        rates = {k: v for k, v in arrival_stats.items() if v > 0}
        total = sum(rates.values())
        out = {}
        for image in sorted(rates):
            share = math.ceil(self.config.capacity * rates[image] / total)
            out[image] = min(math.ceil(rates[image] * self.config.prewarm_horizon - 1e-9), share)
        return out

    def prewarm_plan(self, arrival_stats: Mapping[str, float], now: float) -> list[tuple[str, int]]:
        rates = {k: v for k, v in arrival_stats.items() if v > 0}
        targets = self.prewarm_targets(rates)
        budget = max(0, self.free_slots())
        plan = []
        for image in sorted(rates, key=lambda k: (-rates[k], k)):
            have = self.count(image, Status.READY, Status.WARMING)
            want = min(max(0, targets[image] - have), budget)
            if want > 0:
                plan.append((image, want))
                budget -= want
        return plan

    def trim_surplus(self, arrival_stats: Mapping[str, float], now: float) -> list[ContainerRecord]:
        """Free slots held by idle containers beyond their image's target when
        other images are short; evicts the least valuable surplus first."""
        targets = self.prewarm_targets(arrival_stats)
        deficit = sum(
            max(0, t - self.count(img, Status.READY, Status.WARMING)) for img, t in targets.items()
        )
        need = deficit - max(0, self.free_slots())
        if need <= 0:
            return []
        # images with no rate estimate yet are left alone; TTL retires them if idle
        surplus = {img: self.count(img) - t for img, t in targets.items()}
        cands = [r for r in self.ready() if surplus.get(r.image, 0) > 0]
        scores = retention_scores(cands, self.config.eviction_weights)
        order = sorted(range(len(cands)), key=lambda i: (scores[i], cands[i].last_access, cands[i].container_id))
        evicted = []
        for i in order:
            if need <= 0:
                break
            rec = cands[i]
            if surplus[rec.image] <= 0:
                continue
            surplus[rec.image] -= 1
            need -= 1
            evicted.append(self.evict(rec.container_id, now, reason="rebalance"))
        return evicted

    def snapshot(self, now: float) -> list[dict]:
        return [
            {
                "node": self.node,
                "image": r.image,
                "status": r.status.value,
                "state_size": r.state_size,
                "access_count": r.access_count,
                "last_access": r.last_access,
            }
            for r in sorted(self.records.values(), key=lambda r: r.container_id)
        ]
