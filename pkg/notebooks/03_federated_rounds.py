"""Federated round times: central synchronous aggregation against pooled
chunk execution with work stealing, with and without node failures.

Run with ``python3 notebooks/03_federated_rounds.py``.
"""

import numpy as np

from warmgrid.sim.config import Calibration
from warmgrid.sim.fl import FLRoundModel, run_fl_rounds, staggered_failures

cal = Calibration.load()
for name in ("ucf101", "librispeech"):
    prof = cal.fl_profiles[name]
    central = run_fl_rounds(FLRoundModel(16, prof, "central_sync"), calibration=cal)
    pooled = run_fl_rounds(FLRoundModel(16, prof, "dht_pooled"), calibration=cal)
    c, p = central.median(), pooled.median()
    print(f"{name:<12} central {c:7.1f} s  pooled {p:7.1f} s  ratio {p / c:.3f}")
    q = np.percentile(pooled.times(), [25, 75])
    print(f"{'':<12} pooled IQR {q[1] - q[0]:.1f} s, steals per round {np.mean([r.steals for r in pooled.rounds]):.1f}")

# Two clients crash a quarter of the way into rounds 2, 4, 8 and 16 and come back 2 s later.
prof = cal.fl_profiles["ucf101"]
model = FLRoundModel(16, prof, "dht_pooled")
clean = run_fl_rounds(model, calibration=cal)
hit = run_fl_rounds(model, calibration=cal, failures=staggered_failures(["c03", "c11"]))
print("\nround  clean   failed  reassigned  rejoin(s)")
for a, b in zip(clean.rounds, hit.rounds):
    if b.failed:
        rj = ", ".join(f"{k}:{v:.2f}" for k, v in sorted(b.rejoin_times.items()))
        print(f"{b.round:>5} {a.time:7.1f} {b.time:8.1f} {b.reassigned:>11}  {rj}")
dup = max(max(r.completions.values()) for r in hit.rounds)
print(f"max completions of any chunk: {dup}")
