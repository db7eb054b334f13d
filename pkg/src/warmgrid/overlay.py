"""Chord-style DHT ring.

Every node keeps only local routing state (predecessor, successor list,
finger table) and all routing goes through those tables, one hop at a time.
The ring object owns the nodes and plays the role of the network: a method
call on another node stands for a message to it.  Nothing here knows about
wall-clock time; callers pass simulated timestamps in.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable

from .entries import PutResult, VersionedTaskEntry, apply_write

log = logging.getLogger(__name__)

M_BITS = 32
REPLICAS = 5
HEARTBEAT_INTERVAL = 0.1
TIMEOUT_BEATS = 3
STABILIZE_INTERVAL = 0.5


class OverlayError(Exception):
    pass


class NoOwnerError(OverlayError):
    """No live node can own a key."""


class JoinError(OverlayError):
    """Join could not proceed; safe to retry with another bootstrap."""

    retriable = True


def ring_hash(name: str, bits: int = M_BITS) -> int:
    digest = hashlib.sha1(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (1 << bits)


def in_half_open(x: int, a: int, b: int) -> bool:
    """x in (a, b] on the circle.  a == b means the whole circle."""
    if a < b:
        return a < x <= b
    return x > a or x <= b


def in_open(x: int, a: int, b: int) -> bool:
    """x in (a, b) on the circle.  a == b means everything except a."""
    if a < b:
        return a < x < b
    return x != a and (x > a or x < b)


@dataclass
class RingNode:
    id: int
    address: str
    successor_list: list[int] = field(default_factory=list)
    finger_table: list[int] = field(default_factory=list)
    predecessor: int | None = None
    alive: bool = True
    last_heartbeat: float = 0.0
    store: dict[int, VersionedTaskEntry] = field(default_factory=dict)
    # local resource registry: per-image warm counts, load and availability
    registry: dict = field(default_factory=dict)

    @property
    def successor(self) -> int:
        return self.successor_list[0]


class ChordRing:
    def __init__(
        self,
        bits: int = M_BITS,
        replicas: int = REPLICAS,
        heartbeat_interval: float = HEARTBEAT_INTERVAL,
        timeout_beats: int = TIMEOUT_BEATS,
    ):
        self.bits = bits
        self.space = 1 << bits
        self.replicas = replicas
        self.heartbeat_interval = heartbeat_interval
        self.timeout = heartbeat_interval * timeout_beats
        self.nodes: dict[int, RingNode] = {}
        self._by_address: dict[str, int] = {}
        self._declared_dead: set[int] = set()

    # -- identity ---------------------------------------------------------

    def position(self, name: str) -> int:
        return ring_hash(name, self.bits)

    def node(self, address: str) -> RingNode:
        return self.nodes[self._by_address[address]]

    def live_positions(self) -> list[int]:
        return sorted(p for p, n in self.nodes.items() if n.alive)

    def live_addresses(self) -> list[str]:
        return [self.nodes[p].address for p in self.live_positions()]

    def __len__(self) -> int:
        return len(self.live_positions())

    def _alive(self, pos: int | None) -> bool:
        return pos is not None and pos in self.nodes and self.nodes[pos].alive

    # -- bulk construction -------------------------------------------------

    @classmethod
    def build(cls, addresses: Iterable[str], **kwargs) -> "ChordRing":
        """A ring in its fully stabilized state, without running the protocol."""
        ring = cls(**kwargs)
        for a in addresses:
            pos = ring.position(a)
            if pos in ring.nodes:
                raise OverlayError(f"position collision for {a!r}")
            ring.nodes[pos] = RingNode(pos, a)
            ring._by_address[a] = pos
        ring._rebuild_tables()
        return ring

    @classmethod
    def from_positions(cls, positions: Iterable[int], **kwargs) -> "ChordRing":
        """Ring with explicit positions; addresses are ``n<pos>``."""
        ring = cls(**kwargs)
        for pos in positions:
            if not 0 <= pos < ring.space:
                raise ValueError(f"position {pos} outside [0, 2^{ring.bits})")
            a = f"n{pos}"
            ring.nodes[pos] = RingNode(pos, a)
            ring._by_address[a] = pos
        ring._rebuild_tables()
        return ring

    def _rebuild_tables(self) -> None:
        live = self.live_positions()
        n = len(live)
        for i, pos in enumerate(live):
            node = self.nodes[pos]
            node.predecessor = live[i - 1]
            node.successor_list = [live[(i + j) % n] for j in range(1, min(self.replicas, n - 1) + 1)] or [pos]
            node.finger_table = [
                live[bisect.bisect_left(live, (pos + (1 << b)) % self.space) % n] for b in range(self.bits)
            ]

    # -- routing -------------------------------------------------------------

    def _first_live_successor(self, node: RingNode) -> int:
        for s in node.successor_list:
            if self._alive(s):
                return s
        return node.id

    def _closest_preceding(self, node: RingNode, key: int) -> int:
        best = node.id
        for c in node.finger_table + node.successor_list:
            if c == node.id or not self._alive(c):
                continue
            if in_open(c, node.id, key) and (best == node.id or in_open(c, best, key)):
                best = c
        return best

    def find_successor(self, key: int, start: int) -> tuple[int, int]:
        """Route from ``start``; returns (owner position, hop count)."""
        cur = self.nodes[start]
        hops = 0
        for _ in range(4 * self.bits + len(self.nodes)):
            if self._alive(cur.predecessor) and in_half_open(key, cur.predecessor, cur.id):
                return cur.id, hops
            succ = self._first_live_successor(cur)
            if succ == cur.id:
                return cur.id, hops
            if in_half_open(key, cur.id, succ):
                return succ, hops + 1
            nxt = self._closest_preceding(cur, key)
            if nxt == cur.id:
                return succ, hops + 1
            cur = self.nodes[nxt]
            hops += 1
        raise OverlayError(f"routing loop looking up {key}")

    def _entry_point(self, start: str | None) -> int:
        if start is not None:
            pos = self._by_address.get(start)
            if self._alive(pos):
                return pos
        live = self.live_positions()
        if not live:
            raise NoOwnerError("no live nodes in the ring")
        return live[0]

    def lookup(self, key: int, start: str | None = None) -> str:
        return self.lookup_with_hops(key, start)[0]

    def lookup_with_hops(self, key: int, start: str | None = None) -> tuple[str, int]:
        if not 0 <= key < self.space:
            raise ValueError(f"key {key} outside identifier space")
        pos, hops = self.find_successor(key, self._entry_point(start))
        return self.nodes[pos].address, hops

    def successors(self, key: int, k: int, start: str | None = None) -> list[str]:
        """First ``min(k, live)`` distinct live nodes clockwise from ``key``."""
        if k < 1:
            raise ValueError("k must be >= 1")
        owner = self._by_address[self.lookup(key, start)]
        out = [owner]
        cur = self.nodes[owner]
        live_count = len(self)
        while len(out) < min(k, live_count):
            nxt = None
            for s in cur.successor_list:
                if self._alive(s) and s not in out:
                    nxt = s
                    break
            if nxt is None:
                # successor list exhausted; route past the last collected node
                nxt, _ = self.find_successor((cur.id + 1) % self.space, cur.id)
                if nxt in out:
                    break
            out.append(nxt)
            cur = self.nodes[nxt]
        return [self.nodes[p].address for p in out]

    # -- membership ------------------------------------------------------------

    def join(self, address: str, bootstrap: str | None = None, now: float = 0.0) -> RingNode:
        pos = self.position(address)
        existing = self.nodes.get(pos)
        if existing is not None and existing.alive:
            raise OverlayError(f"{address!r} already present at {pos}")
        if existing is not None and existing.address != address:
            raise OverlayError(f"position collision for {address!r}")
        node = existing or RingNode(pos, address)
        node.alive = True
        node.last_heartbeat = now
        node.predecessor = None
        node.store = {}
        live = [p for p in self.live_positions() if p != pos]
        if not live:
            node.successor_list = [pos]
            node.finger_table = [pos] * self.bits
            node.predecessor = pos
        else:
            if bootstrap is None:
                raise JoinError("ring not empty: a bootstrap node is required")
            bpos = self._by_address.get(bootstrap)
            if not self._alive(bpos):
                raise JoinError(f"bootstrap {bootstrap!r} unreachable")
            succ, _ = self.find_successor(pos, bpos)
            snode = self.nodes[succ]
            node.successor_list = self._successor_chain(pos, succ, snode.successor_list)
            node.finger_table = [succ] * self.bits
        self.nodes[pos] = node
        self._by_address[address] = pos
        self._declared_dead.discard(pos)
        if len(live):
            self._notify(self.nodes[node.successor], node)
        log.debug("join %s at %d", address, pos)
        return node

    def _notify(self, succ: RingNode, cand: RingNode) -> None:
        """``cand`` thinks it may be ``succ``'s predecessor."""
        if not self._alive(succ.predecessor) or in_open(cand.id, succ.predecessor, succ.id):
            old = succ.predecessor
            succ.predecessor = cand.id
            # hand over keys in (old, cand]; succ keeps its copies as replicas
            lo = old if old is not None else succ.id
            for key, entry in succ.store.items():
                if in_half_open(key, lo, cand.id) and key != succ.id:
                    self._write_local(cand, entry)

    def leave(self, address: str) -> None:
        """Graceful departure: hand entries to the successor first."""
        node = self.node(address)
        succ = self._first_live_successor(node)
        if succ != node.id:
            for entry in node.store.values():
                self._write_local(self.nodes[succ], entry)
        node.alive = False
        self._declared_dead.add(node.id)
        if succ != node.id:
            s = self.nodes[succ]
            if s.predecessor == node.id:
                s.predecessor = node.predecessor if self._alive(node.predecessor) else None

    def crash(self, address: str) -> None:
        """Abrupt failure: the process stops, nobody is told."""
        self.node(address).alive = False

    # -- maintenance -------------------------------------------------------------

    def heartbeat(self, now: float) -> None:
        for node in self.nodes.values():
            if node.alive:
                node.last_heartbeat = now

    def detect_failures(self, now: float) -> set[str]:
        """Declare dead every member silent for longer than the timeout (once)."""
        newly = set()
        for pos, node in self.nodes.items():
            if pos in self._declared_dead:
                continue
            if now - node.last_heartbeat > self.timeout + 1e-12:
                node.alive = False
                self._declared_dead.add(pos)
                newly.add(node.address)
        return newly

    def stabilize_round(self) -> bool:
        """One Chord maintenance round on every live node; True if anything changed."""
        changed = False
        for pos in self.live_positions():
            node = self.nodes[pos]
            before = (list(node.successor_list), node.predecessor, list(node.finger_table))
            if not self._alive(node.predecessor):
                node.predecessor = None
            succ = self._first_live_successor(node)
            if succ == node.id:
                # lost every successor: recover through any live finger
                for f in node.finger_table:
                    if f != node.id and self._alive(f):
                        succ = f
                        break
            x = self.nodes[succ].predecessor
            if self._alive(x) and x != node.id and in_open(x, node.id, succ):
                succ = x
            if succ != node.id:
                snode = self.nodes[succ]
                self._notify(snode, node)
                node.successor_list = self._successor_chain(node.id, succ, snode.successor_list)
            else:
                node.successor_list = [node.id]
                node.predecessor = node.id
            self._fix_fingers(node)
            self._replicate_owned(node)
            changed |= before != (list(node.successor_list), node.predecessor, list(node.finger_table))
        return changed

    def _successor_chain(self, me: int, succ: int, tail: list[int]) -> list[int]:
        out = [succ]
        for s in tail:
            if len(out) >= self.replicas:
                break
            if s != me and s not in out and self._alive(s):
                out.append(s)
        return out

    def _fix_fingers(self, node: RingNode) -> None:
        fingers = []
        prev = None
        for b in range(self.bits):
            target = (node.id + (1 << b)) % self.space
            if prev is not None and prev != node.id and in_half_open(target, node.id, prev):
                fingers.append(prev)
                continue
            prev, _ = self.find_successor(target, node.id)
            fingers.append(prev)
        node.finger_table = fingers

    def settle(self, max_rounds: int = 200) -> int:
        """Run maintenance rounds until nothing changes; returns rounds used."""
        for i in range(1, max_rounds + 1):
            if not self.stabilize_round():
                return i
        raise OverlayError("ring did not stabilize")

    def is_consistent(self) -> bool:
        """Every live node's successor and predecessor match the sorted live set."""
        live = self.live_positions()
        n = len(live)
        for i, pos in enumerate(live):
            node = self.nodes[pos]
            if node.successor != live[(i + 1) % n] or node.predecessor != live[i - 1]:
                return False
        return True

    # -- entries ----------------------------------------------------------------

    def _write_local(self, node: RingNode, entry: VersionedTaskEntry) -> PutResult:
        res = apply_write(node.store.get(entry.task_key), entry)
        if res.committed:
            node.store[entry.task_key] = res.entry
        return res

    def replica_set(self, key: int, start: str | None = None) -> list[str]:
        return self.successors(key, self.replicas + 1, start)

    def put_entry(self, entry: VersionedTaskEntry, start: str | None = None) -> PutResult:
        holders = self.replica_set(entry.task_key, start)
        res = self._write_local(self.node(holders[0]), entry)
        if res.committed:
            for a in holders[1:]:
                self._write_local(self.node(a), res.entry)
        return res

    def get_entry(self, key: int, start: str | None = None) -> VersionedTaskEntry | None:
        for a in self.replica_set(key, start):
            e = self.node(a).store.get(key)
            if e is not None:
                return e
        return None

    def _replicate_owned(self, node: RingNode) -> None:
        if node.predecessor is None:
            return
        targets = [s for s in node.successor_list if s != node.id and self._alive(s)]
        for key, entry in list(node.store.items()):
            if in_half_open(key, node.predecessor, node.id) or node.predecessor == node.id:
                for s in targets:
                    self._write_local(self.nodes[s], entry)

    # -- registry / export -----------------------------------------------------

    def publish(self, address: str, **registry) -> None:
        self.node(address).registry.update(registry)

    def snapshot(self) -> list[dict]:
        rows = []
        for pos in sorted(self.nodes):
            n = self.nodes[pos]
            rows.append(
                {
                    "id": n.address,
                    "position": n.id,
                    "successors": [self.nodes[s].address for s in n.successor_list],
                    "predecessor": self.nodes[n.predecessor].address if n.predecessor in self.nodes else None,
                    "alive": n.alive,
                }
            )
        return rows

    def export_snapshot(self, fh: IO[str]) -> None:
        for row in self.snapshot():
            fh.write(json.dumps(row, sort_keys=True) + "\n")
