import pytest
from hypothesis import given, settings, strategies as st

from warmgrid.pool import (
    ContainerRecord,
    PoolConfig,
    PoolFullError,
    Status,
    TransitionError,
    WarmPool,
    retention_scores,
)


def admit(pool, image="img", now=0.0, init=0.5, **kw):
    return pool.admit_warm(image, 1.0, 1024, now, init, **kw)


def test_lifecycle_warming_ready_in_use():
    pool = WarmPool(PoolConfig(capacity=2), node="n")
    rec = admit(pool, init=0.5)
    assert rec.status is Status.WARMING
    pool.tick(0.4)
    assert rec.status is Status.WARMING
    pool.tick(0.5)
    assert rec.status is Status.READY
    pool.acquire(rec.container_id, 1.0)
    assert rec.status is Status.IN_USE and rec.access_count == 1
    with pytest.raises(TransitionError):
        pool.evict(rec.container_id, 1.0)
    pool.release(rec.container_id, 2.0)
    assert rec.status is Status.READY and rec.last_access == 2.0


def test_illegal_transitions():
    rec = ContainerRecord("c", "img", 1, 1)
    with pytest.raises(TransitionError):
        rec.move(Status.IN_USE)  # warming cannot serve
    rec.move(Status.READY)
    rec.move(Status.EVICTED)
    with pytest.raises(TransitionError):
        rec.move(Status.READY)


def test_full_pool_evicts_lowest_retention_and_never_in_use():
    pool = WarmPool(PoolConfig(capacity=2), node="n")
    a = pool.launch("a", 1.0, 1024, 0.0, 0.5)  # in use
    b = admit(pool, "b", init=0.1)
    pool.tick(1.0)
    c = admit(pool, "c", now=1.0)
    assert b.container_id not in pool.records
    assert a.container_id in pool.records and c.container_id in pool.records
    pool.tick(2.0)
    pool.acquire(c.container_id, 2.0)
    with pytest.raises(PoolFullError):  # both slots in use
        admit(pool, "d", now=2.0)


def test_retention_scores_are_max_normalized():
    recs = [
        ContainerRecord("x", "i", 1, 1024, access_count=10, init_cost=0.5),
        ContainerRecord("y", "i", 1, 2048, access_count=0, init_cost=1.0),
    ]
    sx, sy = retention_scores(recs)
    assert sx == pytest.approx(0.4 * 1 + 0.4 * 0.5 - 0.2 * 0.5)
    assert sy == pytest.approx(0.4 * 0 + 0.4 * 1 - 0.2 * 1)


def test_ttl_expiry():
    pool = WarmPool(PoolConfig(capacity=4, ttl=10.0), node="n")
    rec = admit(pool, init=0.0)
    pool.tick(0.0)
    assert pool.tick(10.0) == []
    assert [r.container_id for r in pool.tick(10.5)] == [rec.container_id]


def test_stateful_resume_uses_reduced_init():
    pool = WarmPool(PoolConfig(capacity=2, resume_ratio=0.25), node="n")
    rec = admit(pool, "speech", init=0.4, stateful=True)
    pool.tick(0.4)
    pool.evict(rec.container_id, 1.0)
    again = admit(pool, "speech", now=1.0, init=0.4, stateful=True)
    assert again.ready_at == pytest.approx(1.0 + 0.1)
    third = admit(pool, "speech", now=1.0, init=0.4, stateful=True)
    assert third.ready_at == pytest.approx(1.4)


def test_degraded_container_is_replaced_on_probe():
    pool = WarmPool(PoolConfig(capacity=2, probe_interval=5.0), node="n")
    rec = admit(pool, init=0.0)
    pool.tick(0.0)
    pool.inject_degradation(rec.container_id)
    assert pool.probe_health(1.0) == set()  # not due yet
    assert pool.probe_health(5.0) == {rec.container_id}
    assert rec.container_id not in pool.records
    assert pool.count("img", Status.WARMING) == 1


def test_migration_detach_attach():
    src, dst = WarmPool(node="a"), WarmPool(node="b")
    rec = admit(src, init=0.0)
    src.tick(0.0)
    moved = dst.attach(src.detach(rec.container_id, 1.0), 1.0)
    assert moved.node == "b" and rec.container_id in dst.records and not src.records


def test_prewarm_targets_and_plan():
    pool = WarmPool(PoolConfig(capacity=8, prewarm_horizon=10.0), node="n")
    assert pool.prewarm_targets({"a": 0.25, "b": 0.75}) == {"a": 2, "b": 6}
    assert pool.prewarm_targets({"a": 0.05}) == {"a": 1}
    plan = pool.prewarm_plan({"a": 0.25, "b": 0.75}, 0.0)
    assert plan == [("b", 6), ("a", 2)]


def test_rate_estimate_starts_from_first_sample():
    pool = WarmPool(PoolConfig(rate_alpha=0.3), node="n")
    pool.update_rates(0.0)
    for _ in range(4):
        pool.observe_arrival("a")
    assert pool.update_rates(2.0) == {"a": 2.0}
    assert pool.update_rates(4.0)["a"] == pytest.approx(0.7 * 2.0)


def test_trim_surplus_only_touches_known_images():
    pool = WarmPool(PoolConfig(capacity=4, prewarm_horizon=10.0), node="n")
    for img in ("a", "a", "a", "z"):
        admit(pool, img, init=0.0)
    pool.tick(0.0)
    evicted = pool.trim_surplus({"a": 0.1, "b": 0.5}, 1.0)
    # b wants 4 (capped by share), a keeps 1; z has no rate and stays
    assert [r.image for r in evicted] == ["a", "a"]
    assert pool.count("z") == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["admit", "launch", "tick", "release", "evict"]), st.integers(0, 9)), max_size=60))
def test_capacity_never_exceeded(ops):
    pool = WarmPool(PoolConfig(capacity=3), node="n")
    now = 0.0
    for op, x in ops:
        now += 0.1
        try:
            if op == "admit":
                admit(pool, f"i{x % 3}", now=now, init=0.05)
            elif op == "launch":
                pool.launch(f"i{x % 3}", 1.0, 1024, now, 0.05)
            elif op == "tick":
                pool.tick(now)
            else:
                ids = sorted(pool.records)
                if ids:
                    cid = ids[x % len(ids)]
                    if op == "release" and pool.records[cid].status is Status.IN_USE:
                        pool.release(cid, now)
                    elif op == "evict" and pool.records[cid].status is not Status.IN_USE:
                        if pool.records[cid].status is Status.READY:
                            pool.evict(cid, now)
        except PoolFullError:
            pass
        assert pool.occupancy() <= 3
    assert pool.max_occupancy <= 3
