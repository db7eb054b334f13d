"""Walk through the overlay and container selection on a toy cluster.

Run with ``python3 notebooks/01_overlay_and_selection.py``.
"""

from warmgrid.decomposer import Decomposer, TaskSpec
from warmgrid.overlay import ChordRing
from warmgrid.pool import PoolConfig, WarmPool
from warmgrid.selector import SelectorConfig, select
from warmgrid.sim.config import Calibration

# A six-node ring, built through the join protocol rather than in one shot.
names = [f"edge{i}" for i in range(6)]
ring = ChordRing()
ring.join(names[0])
for n in names[1:]:
    ring.join(n, bootstrap=names[0])
    ring.settle()
print("consistent after joins:", ring.is_consistent())
for row in ring.snapshot():
    print(f"  {row['id']:>6} @ {row['position']:>10}  successors {row['successors'][:3]}")

# Who owns a key, and how many hops does it take to find out?
key = ring.position("encode3d")
owner, hops = ring.lookup_with_hops(key, "edge0")
print(f"\nkey for image 'encode3d' -> {owner} in {hops} hops")
print("candidate holders (k=5):", ring.successors(key, 5, "edge0"))

# Decompose a video task into its three stages.
cal = Calibration.load()
dag = Decomposer(cal.durations()).decompose(TaskSpec("demo", task_class="media_video"))
for st in dag.nodes:
    print(f"  {st.subtask_id:<16} image={st.image:<9} cpu={st.cpu} mem={st.mem_mib:.0f}MiB")
encode = dag.by_id("demo/encode")

# One warm encode3d container on a remote candidate; nothing local.
pools = {n: WarmPool(PoolConfig(capacity=4), node=n) for n in names}
remote = next(n for n in ring.successors(key, 5, "edge0") if n != "edge0")
rec = pools[remote].admit_warm("encode3d", 1.0, 4096, 0.0, 0.0, volumes={"ucf101"}, state_size=10.0)
pools[remote].tick(0.0)

cfg = SelectorConfig(default_bandwidth=cal.bandwidth_mib_s, serialize_overhead=cal.serialize_overhead_s)
costs = cal.costs()
snap = {n: list(p.records.values()) for n, p in pools.items()}
out = select(encode, "edge0", snap, ring, cfg, costs)
print(f"\nselection on edge0: {out.kind}, latency {out.startup_latency * 1000:.0f} ms"
      f" (eta {out.eta * 1000:.0f} ms vs gate {cfg.gamma * out.cold_cost * 1000:.0f} ms)")

# A heavier container state pushes the transfer past the gate: cold start.
rec.state_size = 40.0
snap = {n: list(p.records.values()) for n, p in pools.items()}
out = select(encode, "edge0", snap, ring, cfg, costs)
print(f"with 40 MiB of state: {out.kind}, latency {out.startup_latency * 1000:.0f} ms")
