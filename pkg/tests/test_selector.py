import bisect
import random

import pytest

from warmgrid.decomposer import ContainerHint, Subtask
from warmgrid.overlay import ChordRing, ring_hash
from warmgrid.pool import ContainerRecord, Status
from warmgrid.selector import (
    COLD_START,
    LOCAL_WARM,
    MIGRATED_WARM,
    ConfigError,
    CostTable,
    ImageCost,
    ScoreWeights,
    SelectorConfig,
    select,
)

IMAGES = ["img0", "img1", "img2", "img3"]
VOLS = ["v0", "v1", "v2"]
COSTS = CostTable({i: ImageCost(0.45, 0.20, 0.12) for i in IMAGES})
RINGS = {n: ChordRing.build([f"node{i}" for i in range(n)]) for n in range(1, 9)}


def brute_force(t, local, pools, n_nodes, cfg, cold, handoff):
    """Enumerate every candidate with the scoring rule written out longhand."""

    def match(c):
        return 1.0 if c.image == t.image else 0.5 if c.image in t.hint.compatible_images else 0.0

    def sc(c):
        res = min(1.0, c.cpu / t.cpu, c.mem_mib / t.mem_mib)
        vol = len(c.volumes & t.volumes) / len(t.volumes) if t.volumes else 1.0
        return 0.5 * match(c) + 0.3 * res + 0.2 * vol

    local_ok = [
        c for c in pools.get(local, [])
        if c.status is Status.READY and match(c) > 0 and c.cpu >= t.cpu and c.mem_mib >= t.mem_mib
    ]
    if local_ok:
        best = sorted(local_ok, key=lambda c: (-sc(c), c.container_id))[0]
        return (LOCAL_WARM, best.container_id, handoff)

    # the k clockwise successors of hash(image), by sorted scan of node positions
    names = [f"node{i}" for i in range(n_nodes)]
    by_pos = sorted((ring_hash(n), n) for n in names)
    key = ring_hash(t.image)
    i = bisect.bisect_left([p for p, _ in by_pos], key)
    cands = [by_pos[(i + j) % n_nodes][1] for j in range(min(cfg.k, n_nodes))]
    options = []
    for node in cands:
        if node == local:
            continue
        for c in pools.get(node, []):
            if c.status is not Status.READY:
                continue
            eta = c.state_size / cfg.default_bandwidth + cfg.serialize_overhead
            s = sc(c)
            if s >= cfg.theta_match and eta < cfg.gamma * cold:
                options.append((-s, eta, c.container_id, eta))
    if options:
        _, _, cid, eta = min(options)
        return (MIGRATED_WARM, cid, eta + handoff)
    return (COLD_START, None, cold)


def random_instance(rng):
    n = rng.randint(1, 8)
    compat = frozenset(rng.sample(IMAGES, rng.randint(0, 2)))
    image = rng.choice(IMAGES)
    t = Subtask(
        "t/0", image, rng.choice([0.5, 1.0, 2.0]), rng.choice([256, 1024, 2048]),
        frozenset(rng.sample(VOLS, rng.randint(0, 2))),
        hint=ContainerHint(image, compat - {image}),
    )
    pools = {}
    for i in range(n):
        recs = []
        for j in range(rng.randint(0, 8)):
            recs.append(
                ContainerRecord(
                    f"node{i}/c{j}", rng.choice(IMAGES), rng.choice([0.25, 0.5, 1.0, 2.0]),
                    rng.choice([128, 512, 1024, 4096]), frozenset(rng.sample(VOLS, rng.randint(0, 3))),
                    rng.choice(list(Status)), state_size=rng.choice([0, 5, 10, 12.5, 20, 40]),
                )
            )
        pools[f"node{i}"] = recs
    cfg = SelectorConfig(
        theta_match=rng.choice([0.5, 0.7, 0.9]), gamma=rng.choice([0.3, 0.5, 0.7]),
        k=rng.randint(1, 6), default_bandwidth=rng.choice([50.0, 100.0, 200.0]),
    )
    return t, f"node{rng.randrange(n)}", pools, n, cfg


def test_select_matches_brute_force_on_10k_instances():
    rng = random.Random(20240601)
    mismatches = 0
    phases = {LOCAL_WARM: 0, MIGRATED_WARM: 0, COLD_START: 0}
    for _ in range(10_000):
        t, local, pools, n, cfg = random_instance(rng)
        out = select(t, local, pools, RINGS[n], cfg, COSTS)
        want = brute_force(t, local, pools, n, cfg, 0.65, 0.12)
        got = (out.kind, out.container_id, out.startup_latency)
        if got[:2] != want[:2] or abs(got[2] - want[2]) > 1e-12:
            mismatches += 1
        phases[out.kind] += 1
    assert mismatches == 0
    assert min(phases.values()) > 500  # every branch exercised


def _task(image="img0", cpu=1.0, mem=1024, vols=()):
    return Subtask("t/0", image, cpu, mem, frozenset(vols))


def test_local_warm_preferred_over_remote():
    ring = RINGS[4]
    pools = {
        "node0": [ContainerRecord("a", "img0", 1.0, 1024, status=Status.READY)],
        "node1": [ContainerRecord("b", "img0", 2.0, 4096, status=Status.READY)],
    }
    out = select(_task(), "node0", pools, ring, SelectorConfig(default_bandwidth=100.0), COSTS)
    assert out.kind == LOCAL_WARM and out.startup_latency == pytest.approx(0.12)


def test_migration_gate_boundary():
    ring = RINGS[8]
    t = _task()
    remote = next(n for n in ring.successors(ring.position("img0"), 5) if n != "node0")
    # eta = 12.5 / 100 + 0.2 = 0.325 equals gamma * cold exactly: rejected (strict)
    pools = {remote: [ContainerRecord("r", "img0", 1.0, 1024, status=Status.READY, state_size=12.5)]}
    cfg = SelectorConfig(default_bandwidth=100.0)
    assert select(t, "node0", pools, ring, cfg, COSTS).kind == COLD_START
    pools[remote][0].state_size = 10.0  # eta 0.30
    out = select(t, "node0", pools, ring, cfg, COSTS)
    assert out.kind == MIGRATED_WARM and out.eta == pytest.approx(0.30)
    assert out.startup_latency == pytest.approx(0.42)


def test_missing_bandwidth_is_a_config_error():
    ring = RINGS[8]
    remote = next(n for n in ring.successors(ring.position("img0"), 5) if n != "node0")
    pools = {remote: [ContainerRecord("r", "img0", 1.0, 1024, status=Status.READY)]}
    with pytest.raises(ConfigError):
        select(_task(), "node0", pools, ring, SelectorConfig(), COSTS)


def test_config_validation():
    with pytest.raises(ConfigError):
        SelectorConfig(theta_match=1.5)
    with pytest.raises(ConfigError):
        SelectorConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        ScoreWeights(0.5, 0.5, 0.5)
    with pytest.raises(ConfigError):
        COSTS.cold_cost("unknown")


def test_audit_record_fields():
    out = select(_task(), "node0", {}, RINGS[2], SelectorConfig(default_bandwidth=100.0), COSTS)
    rec = out.audit("t/0")
    assert rec["phase_taken"] == 3 and rec["latency"] == pytest.approx(0.65)
