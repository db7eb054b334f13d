"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed together in the
terminal summary (see conftest.py) and also echoed with ``pytest -s``.
"""

import math
import random
import time

import pytest
from conftest import VERDICTS

from test_entries import state
from test_overlay import oracle_owner, oracle_successors
from test_selector import COSTS, RINGS, brute_force, random_instance
from warmgrid.entries import TaskStatus, VersionedTaskEntry, apply_write, bump
from warmgrid.overlay import ChordRing
from warmgrid.selector import select
from warmgrid.sim.cluster import check_invariants, run
from warmgrid.sim.config import Calibration, default_config
from warmgrid.sim.fl import FLRoundModel, run_fl_rounds, staggered_failures
from warmgrid.sim.metrics import csv_text, nearest_rank

POLICIES = ("swiftbot", "local_warm", "cold_start")
RATES = (1.0, 5.0, 10.0, 15.0, 20.0)
ALL_RUNS = []  # every cluster result produced here, for the pool-safety sweep


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def within(x, target, rel):
    return abs(x - target) <= rel * target


@pytest.fixture(scope="module")
def rate5_runs():
    cfg = default_config()
    t0 = time.perf_counter()
    runs = {p: run(cfg, p) for p in POLICIES}
    elapsed = time.perf_counter() - t0
    ALL_RUNS.extend(runs.values())
    return runs, elapsed


@pytest.fixture(scope="module")
def sweep_runs():
    cfg = default_config()
    t0 = time.perf_counter()
    runs = {(p, r): run(cfg.with_(rate=r), p) for p in POLICIES for r in RATES}
    elapsed = time.perf_counter() - t0
    ALL_RUNS.extend(runs.values())
    return runs, elapsed


def test_criterion_1_startup_latency_ratios(rate5_runs):
    runs, elapsed = rate5_runs
    p50 = {p: nearest_rank(r.latencies(), 0.5) for p, r in runs.items()}
    cold, local = p50["cold_start"] / p50["swiftbot"], p50["local_warm"] / p50["swiftbot"]
    ok = within(cold, 5.4, 0.15) and within(local, 1.5, 0.15) and elapsed < 10.0
    ok = ok and all(r.injected == 1000 for r in runs.values())
    verdict(
        1, ok,
        f"P50 cold/swift {cold:.2f} (5.4 +-15%), local/swift {local:.2f} (1.5 +-15%), "
        f"3 x 1000 tasks in {elapsed:.1f}s (< 10s)",
    )


def test_criterion_2_load_scaling(sweep_runs):
    runs, elapsed = sweep_runs
    p99 = {k: nearest_rank(r.latencies(), 0.99) for k, r in runs.items()}
    targets = {"swiftbot": 0.520, "local_warm": 1.100, "cold_start": 1.400}
    at20 = all(within(p99[(p, 20.0)], t, 0.25) for p, t in targets.items())
    ordered = all(p99[("swiftbot", r)] < p99[("local_warm", r)] < p99[("cold_start", r)] for r in RATES)
    monotone = all(p99[(p, a)] <= p99[(p, b)] for p in POLICIES for a, b in zip(RATES, RATES[1:]))
    ok = at20 and ordered and monotone and elapsed < 60.0
    table = ", ".join(f"{p} {p99[(p, 20.0)] * 1000:.0f}ms" for p in POLICIES)
    verdict(
        2, ok,
        f"P99 at 20/s: {table} (520/1100/1400 +-25%); ordered={ordered} monotone={monotone}; "
        f"sweep {elapsed:.1f}s (< 60s)",
    )


def test_criterion_3_fl_round_timing():
    cal = Calibration.load()
    ratios = {}
    for prof in ("ucf101", "librispeech"):
        med = {
            m: run_fl_rounds(FLRoundModel(16, cal.fl_profiles[prof], m), calibration=cal).median()
            for m in ("central_sync", "dht_pooled")
        }
        ratios[prof] = med["dht_pooled"] / med["central_sync"]
    # decrement 60.1% +-10 points and 50% +-10 points
    ucf_ok = ratios["ucf101"] <= 0.50 and abs((1 - ratios["ucf101"]) - 0.601) <= 0.10
    libri_ok = abs((1 - ratios["librispeech"]) - 0.50) <= 0.10
    verdict(
        3, ucf_ok and libri_ok,
        f"pooled/central median: ucf101 {ratios['ucf101']:.3f} (decrement {1 - ratios['ucf101']:.1%}), "
        f"librispeech {ratios['librispeech']:.3f} (decrement {1 - ratios['librispeech']:.1%})",
    )


def test_criterion_4_failure_resilience():
    cal = Calibration.load()
    prof = cal.fl_profiles["ucf101"]
    model = FLRoundModel(16, prof, "dht_pooled")
    failed = run_fl_rounds(model, calibration=cal, failures=staggered_failures(["c03", "c11"]))
    clean = run_fl_rounds(model, calibration=cal)
    exactly_once = all(
        len(r.completions) == 16 * prof.chunks and set(r.completions.values()) == {1} for r in failed.rounds
    )
    rejoins = [t for r in failed.rounds for t in r.rejoin_times.values()]
    rejoin_ok = len(rejoins) == 8 and max(rejoins) < 1.0
    regress = [f.time - c.time - f.max_compute for f, c in zip(failed.rounds, clean.rounds)]
    timing_ok = max(regress) <= 0.0
    ok = exactly_once and rejoin_ok and timing_ok
    verdict(
        4, ok,
        f"failures at rounds 2,4,8,16: exactly-once={exactly_once}, max rejoin {max(rejoins):.2f}s (< 1s), "
        f"worst (round - clean - straggler) {max(regress):.1f}s (<= 0)",
    )


def test_criterion_5_selector_oracle():
    rng = random.Random(5)
    mismatches = 0
    for _ in range(10_000):
        t, local, pools, n, cfg = random_instance(rng)
        out = select(t, local, pools, RINGS[n], cfg, COSTS)
        want = brute_force(t, local, pools, n, cfg, 0.65, 0.12)
        if (out.kind, out.container_id) != want[:2] or abs(out.startup_latency - want[2]) > 1e-12:
            mismatches += 1
    verdict(5, mismatches == 0, f"10000 instances, {mismatches} mismatches")


def test_criterion_6_dht_oracle():
    rng = random.Random(6)
    bad_lookup = bad_succ = worst_excess = 0
    for n in range(1, 65):
        positions = rng.sample(range(1 << 32), n)
        ring = ChordRing.from_positions(positions)
        bound = max(1, math.ceil(math.log2(n)) + 1)
        for _ in range(100):
            key = rng.randrange(1 << 32)
            owner, hops = ring.lookup_with_hops(key, f"n{rng.choice(positions)}")
            bad_lookup += owner != f"n{oracle_owner(positions, key)}"
            want = [f"n{p}" for p in oracle_successors(positions, key, 5)]
            bad_succ += ring.successors(key, 5) != want
            worst_excess = max(worst_excess, hops - bound)
    ok = bad_lookup == 0 and bad_succ == 0 and worst_excess <= 0
    verdict(
        6, ok,
        f"N=1..64 x 100 keys: {bad_lookup} lookup and {bad_succ} successor mismatches; "
        f"hop bound exceeded by at most {worst_excess}",
    )


def test_criterion_7_confluence():
    rng = random.Random(7)
    nodes = ["a", "b", "c", "d"]
    diverged = 0
    for _ in range(1000):
        base_v = {x: rng.randint(0, 3) for x in rng.sample(nodes, rng.randint(0, 4))}
        stored = VersionedTaskEntry(1, rng.choice(nodes), version=base_v)
        pair = []
        for w in rng.sample(nodes, 2):
            v = bump(base_v, w)
            pair.append(
                VersionedTaskEntry(
                    1, rng.choice(nodes), TaskStatus.IN_PROGRESS, rng.randint(0, 2), v,
                    rng.choice([0.0, 0.5]), rng.choice([0.0, 0.5]),
                )
            )
        a, b = pair
        ab = apply_write(apply_write(stored, a).entry, b).entry
        ba = apply_write(apply_write(stored, b).entry, a).entry
        diverged += state(ab) != state(ba)
    verdict(7, diverged == 0, f"1000 concurrent pairs, {diverged} diverged")


def test_criterion_8_determinism():
    cfg = default_config(tasks=300, rate=10.0)
    same = []
    for p in POLICIES:
        a, b = run(cfg, p), run(cfg, p)
        ALL_RUNS.extend((a, b))
        same.append(csv_text(a.samples).encode() == csv_text(b.samples).encode())
    verdict(8, all(same), f"byte-identical metrics CSV for {dict(zip(POLICIES, same))}")


def test_criterion_9_pool_safety(rate5_runs, sweep_runs):
    assert ALL_RUNS
    problems = [p for r in ALL_RUNS for p in check_invariants(r)]
    migrated = sum(1 for r in ALL_RUNS for a in r.audit if a.get("phase_taken") == 2)
    verdict(
        9, not problems,
        f"{len(ALL_RUNS)} runs audited, {migrated} migrated_warm allocations gated, "
        f"{len(problems)} violations" + (f" (first: {problems[0]})" if problems else ""),
    )
