"""Timing model for synchronous federated-training rounds.

Each client trains on one shard per round; its compute time is lognormal
around the profile median.  Two aggregation modes:

* ``central_sync``: the aggregator waits for every client, so a round costs
  the slowest client's compute plus the upload.
* ``dht_pooled``: shards are split into chunks registered in the overlay.
  A client that runs out of its own chunks steals unstarted chunks from the
  client expected to finish last, paying the checkpoint transfer; chunks of a
  crashed client are re-assigned once the failure is detected.  Every
  reassignment is committed through the overlay's versioned entries, and a
  chunk result only counts if the overlay still names its finisher.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..decomposer import Subtask, SubtaskDag
from ..entries import TaskStatus, VersionedTaskEntry
from ..overlay import ChordRing, ring_hash
from ..scheduler import Checkpoint, MigrationAborted, commit_migration, confirm_assignment
from .config import Calibration, FailureEvent, FLProfile
from .engine import EventLoop
from .metrics import MetricSample

SUPPORTED_CLIENTS = (8, 16, 24, 32)
MODES = ("central_sync", "dht_pooled")
MODE_POLICY = {"central_sync": "fedavg_baseline", "dht_pooled": "swiftbot"}
DEFAULT_FAIL_OFFSET = 0.25  # fraction of the median compute time into the round


class FLConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FLRoundModel:
    num_clients: int
    profile: FLProfile
    mode: str = "dht_pooled"

    def __post_init__(self):
        if self.num_clients not in SUPPORTED_CLIENTS:
            raise FLConfigError(f"num_clients must be one of {SUPPORTED_CLIENTS}, got {self.num_clients}")
        if self.mode not in MODES:
            raise FLConfigError(f"unknown aggregation mode {self.mode!r}")
        p = self.profile
        if p.median_s <= 0 or p.sigma < 0 or p.upload_s < 0 or p.chunks < 1:
            raise FLConfigError("profile needs median > 0, sigma >= 0, upload >= 0, chunks >= 1")


@dataclass
class RoundRecord:
    round: int
    time: float
    max_compute: float
    failed: tuple[str, ...] = ()
    steals: int = 0
    reassigned: int = 0
    completions: Counter = field(default_factory=Counter)
    rejoin_times: dict[str, float] = field(default_factory=dict)


@dataclass
class FLResult:
    model: FLRoundModel
    rounds: list[RoundRecord]
    samples: list[MetricSample]

    def times(self) -> list[float]:
        return [r.time for r in self.rounds]

    def median(self) -> float:
        return float(np.median(self.times()))


def client_names(n: int) -> list[str]:
    return [f"c{i:02d}" for i in range(n)]


def compute_times(profile: FLProfile, num_clients: int, rounds: int, seed: int) -> np.ndarray:
    """(rounds, clients) compute times; both modes draw the same matrix."""
    z = np.random.default_rng([seed, 0xF1]).standard_normal((rounds, num_clients))
    return profile.median_s * np.exp(profile.sigma * z)


def _chunk_dag(key: str) -> SubtaskDag:
    return SubtaskDag([Subtask(key, "trainer", 1.0, 1.0)], [])


@dataclass
class _Client:
    name: str
    slowness: float
    own: deque
    alive: bool = True
    busy: bool = False
    epoch: int = 0
    integrating: bool = False


class _PooledRound:
    def __init__(self, r, model, times, ring, failures, cal, hb, stabilize_s):
        self.r = r
        self.model = model
        self.p = model.profile
        self.ring = ring
        self.loop = EventLoop()
        self.C = self.p.chunks
        self.unit = self.p.median_s / self.C  # base work per chunk
        names = client_names(model.num_clients)
        self.times = dict(zip(names, times))
        self.clients = {
            n: _Client(n, self.times[n] / self.p.median_s if self.p.median_s else 1.0, deque(range(self.C)))
            for n in names
        }
        self.mig = self.p.chunk_state_mib / cal.bandwidth_mib_s + cal.serialize_overhead_s
        self.failures = failures
        self.hb = hb
        self.stabilize_s = stabilize_s
        self.orphans: deque = deque()
        self.done_at: dict[tuple[str, int], float] = {}
        self.rec = RoundRecord(r, 0.0, float(max(times)))
        self.dirty = False
        self.beating = False
        self.rejoining: dict[str, float] = {}
        self.crashed: dict[str, list] = {}
        self.running: dict[str, tuple] = {}
        for n in names:
            for j in range(self.C):
                key = self._key(n, j)
                self.ring.put_entry(VersionedTaskEntry(key, n, TaskStatus.IN_PROGRESS, 1, {n: 1}), n)

    def _key(self, shard: str, j: int) -> int:
        return ring_hash(f"r{self.r}/{shard}/{j}", self.ring.bits)

    def _chunk_time(self, client: _Client) -> float:
        return self.unit * client.slowness

    # -- work loop ----------------------------------------------------------------

    def _next(self, name: str) -> None:
        c = self.clients[name]
        if not c.alive or c.busy or c.integrating:
            return
        now = self.loop.now
        if c.own:
            j = c.own.popleft()
            # own chunks run back to back from the round start
            end = self.times[name] * (j + 1) / self.C if j + 1 < self.C else self.times[name]
            self._run(c, (name, j), end)
            return
        if self.orphans:
            shard, j = self.orphans.popleft()
            if self._claim(c, shard, j, "failure"):
                self.rec.reassigned += 1
                self._run(c, (shard, j), now + self.mig + self._chunk_time(c))
            else:
                self._next(name)
            return
        victim = self._victim()
        if victim is None:
            return
        v = self.clients[victim]
        j = v.own[-1]
        finish_there = self.times[victim] * (j + 1) / self.C
        finish_here = now + self.mig + self._chunk_time(c)
        if finish_here < finish_there - 1e-9 and self._claim(c, victim, j, "steal"):
            v.own.pop()
            self.rec.steals += 1
            self._run(c, (victim, j), finish_here)

    def _victim(self) -> str | None:
        best, when = None, -math.inf
        for n in sorted(self.clients):
            v = self.clients[n]
            if v.alive and v.own:
                t = self.times[n] * (v.own[-1] + 1) / self.C
                if t > when:
                    best, when = n, t
        return best

    def _claim(self, c: _Client, shard: str, j: int, why: str) -> bool:
        key = self._key(shard, j)
        ckpt = Checkpoint(key, frozenset(), 0.0, self.loop.now)
        try:
            commit_migration(
                self.ring, key, c.name, ckpt, _chunk_dag(f"{shard}/{j}"), c.name,
                num_containers=1, load_score=0.0, availability_score=1.0,
            )
        except MigrationAborted:
            return False
        return True

    def _run(self, c: _Client, chunk: tuple[str, int], end: float) -> None:
        c.busy = True
        self.running[c.name] = chunk
        self.loop.at(end, self._finish, c.name, chunk, c.epoch)

    def _finish(self, name: str, chunk: tuple[str, int], epoch: int) -> None:
        c = self.clients[name]
        if not c.alive or c.epoch != epoch:
            return
        c.busy = False
        self.running.pop(name, None)
        if confirm_assignment(self.ring, self._key(*chunk), name):
            self.rec.completions[chunk] += 1
            self.done_at.setdefault(chunk, self.loop.now)
        self._next(name)

    # -- failures -------------------------------------------------------------------

    def _crash(self, name: str, rejoin_after: float | None) -> None:
        c = self.clients[name]
        if not c.alive:
            return
        now = self.loop.now
        last = math.floor(now / self.hb + 1e-9) * self.hb
        self.ring.heartbeat(last)
        self.ring.crash(name)
        c.alive = False
        c.epoch += 1
        lost = [(name, j) for j in c.own]
        c.own.clear()
        if name in self.running:
            lost.insert(0, self.running.pop(name))
        c.busy = False
        self.crashed[name] = lost
        self.rec.failed += (name,)
        if not self.beating:
            self.beating = True
            self.loop.at(last + self.hb, self._beat)
        if rejoin_after is not None:
            self.loop.after(rejoin_after, self._rejoin, name)

    def _beat(self) -> None:
        now = self.loop.now
        self.ring.heartbeat(now)
        for name in sorted(self.ring.detect_failures(now)):
            self.dirty = True
            self.orphans.extend(self.crashed.pop(name, []))
            self.loop.at(now, self._maintain)
            for n in sorted(self.clients):
                self._next(n)
        if self.crashed:
            self.loop.after(self.hb, self._beat)
        else:
            self.beating = False

    def _rejoin(self, name: str) -> None:
        now = self.loop.now
        live = self.ring.live_addresses()
        self.ring.join(name, live[0] if live else None, now)
        c = self.clients[name]
        c.alive = True
        c.busy = False
        c.integrating = True  # takes work once the ring has absorbed it
        self.rejoining[name] = now
        self.dirty = True
        self.loop.after(self.stabilize_s, self._maintain)

    def _maintain(self) -> None:
        if not self.dirty:
            return
        self.ring.stabilize_round()
        if self.ring.is_consistent():
            self.dirty = False
            for name, t0 in sorted(self.rejoining.items()):
                self.rec.rejoin_times[name] = self.loop.now - t0
                self.clients[name].integrating = False
                self._next(name)
            self.rejoining.clear()
        else:
            self.loop.after(self.stabilize_s, self._maintain)

    # -- driver ---------------------------------------------------------------------

    def run(self) -> RoundRecord:
        self.ring.heartbeat(0.0)
        for ev in self.failures:
            at = ev.at if ev.at is not None else DEFAULT_FAIL_OFFSET * self.p.median_s
            for name in ev.nodes:
                self.loop.at(at, self._crash, name, ev.rejoin_after)
        for n in sorted(self.clients):
            self.loop.at(0.0, self._next, n)
        self.loop.run()
        expected = {(n, j) for n in self.clients for j in range(self.C)}
        missing = expected - set(self.done_at)
        if missing:
            raise RuntimeError(f"round {self.r}: {len(missing)} chunks never completed")
        self.rec.time = max(self.done_at.values()) + self.p.upload_s
        return self.rec


def _central_round(r: int, times: np.ndarray, names: list[str], profile: FLProfile, failures) -> RoundRecord:
    """Failed clients' updates are dropped for the round (partial participation)."""
    failed = {n for ev in failures for n in ev.nodes}
    kept = [t for n, t in zip(names, times) if n not in failed]
    rec = RoundRecord(r, float(max(kept)) + profile.upload_s, float(max(times)), tuple(sorted(failed)))
    for n in names:
        if n not in failed:
            rec.completions[(n, 0)] = 1
    return rec


def run_fl_rounds(
    model: FLRoundModel,
    *,
    rounds: int = 20,
    seed: int = 7,
    failures: Sequence[FailureEvent] = (),
    calibration: Calibration | None = None,
    heartbeat_s: float = 0.1,
    timeout_beats: int = 3,
    stabilize_s: float = 0.5,
) -> FLResult:
    """Per-round times for ``rounds`` rounds (numbered from 1).

    ``failures`` holds round-indexed events; ``at`` is the offset into the
    round (default a quarter of the median compute time).
    """
    if rounds < 1:
        raise FLConfigError("rounds must be >= 1")
    cal = calibration or Calibration.load()
    names = client_names(model.num_clients)
    for ev in failures:
        if ev.round is None:
            raise FLConfigError("federated failure events need a round number")
        unknown = set(ev.nodes) - set(names)
        if unknown:
            raise FLConfigError(f"failure names unknown clients {sorted(unknown)}")
    matrix = compute_times(model.profile, model.num_clients, rounds, seed)
    ring = ChordRing.build(names, heartbeat_interval=heartbeat_s, timeout_beats=timeout_beats)
    policy = MODE_POLICY[model.mode]
    records, samples = [], []
    for r in range(1, rounds + 1):
        evs = [ev for ev in failures if ev.round == r]
        times = matrix[r - 1]
        if model.mode == "central_sync":
            rec = _central_round(r, times, names, model.profile, evs)
        else:
            rec = _PooledRound(r, model, times, ring, evs, cal, heartbeat_s, stabilize_s).run()
        records.append(rec)
        samples.append(MetricSample("round_time", rec.time, policy, None, r))
        for name, t in sorted(rec.rejoin_times.items()):
            samples.append(MetricSample("recovery_time", t, policy, None, r, name))
    return FLResult(model, records, samples)


def staggered_failures(nodes: Sequence[str], rejoin_after: float = 2.0) -> tuple[FailureEvent, ...]:
    """Failures at rounds 2, 4, 8 and 16 taking ``nodes`` offline."""
    return tuple(FailureEvent(tuple(nodes), None, r, rejoin_after) for r in (2, 4, 8, 16))
