"""Startup latency of the three policies on the bundled 4-node testbed.

Prints P50/P99 per policy and arrival rate, then a coarse text CDF at 5 tasks/s.
Run with ``python3 notebooks/02_latency_under_load.py`` (about 10 s).
"""

import numpy as np

from warmgrid.sim.cluster import run
from warmgrid.sim.config import default_config
from warmgrid.sim.metrics import nearest_rank

POLICIES = ("swiftbot", "local_warm", "cold_start")
RATES = (1.0, 5.0, 10.0, 15.0, 20.0)

cfg = default_config()
print(f"{len(cfg.nodes)} nodes, {cfg.tasks} tasks per run, seed {cfg.seed}\n")
print(f"{'rate':>6}" + "".join(f"{p:>22}" for p in POLICIES))
results = {}
for rate in RATES:
    row = f"{rate:>6g}"
    for p in POLICIES:
        res = run(cfg.with_(rate=rate), p)
        results[(p, rate)] = res
        lat = res.latencies()
        row += f"{nearest_rank(lat, 0.5) * 1000:>10.0f} /{nearest_rank(lat, 0.99) * 1000:>6.0f} ms"
    print(row)
print("(each cell is P50 / P99)")

print("\nfraction started within x ms at 5 tasks/s")
grid = np.arange(100, 1001, 100)
print(f"{'x':>6}" + "".join(f"{p:>12}" for p in POLICIES))
for x in grid:
    cells = []
    for p in POLICIES:
        lat = np.array(results[(p, 5.0)].latencies()) * 1000
        cells.append(f"{np.mean(lat <= x):>12.2f}")
    print(f"{x:>6}" + "".join(cells))

res = results[("swiftbot", 20.0)]
phases = np.bincount([a["phase_taken"] for a in res.audit if "phase_taken" in a], minlength=4)[1:]
print(f"\nswiftbot at 20/s: local warm {phases[0]}, migrated warm {phases[1]}, cold {phases[2]}")
