import pytest

from warmgrid.decomposer import Subtask, SubtaskDag
from warmgrid.entries import TaskStatus, VersionedTaskEntry
from warmgrid.overlay import ChordRing
from warmgrid.scheduler import (
    Checkpoint,
    InfeasibleSubtaskError,
    MigrationAborted,
    MigrationDeferred,
    MigrationRequest,
    NodeView,
    OverloadDetector,
    commit_migration,
    confirm_assignment,
    coordinator_schedule,
    form_groups,
    request_migration,
    resume_frontier,
    select_group,
)

NAMES = [f"n{i}" for i in range(6)]


def views(**warm):
    out = {}
    for n in NAMES:
        out[n] = NodeView(n, 4.0, 8192, 4.0, 8192, warm=warm.get(n, {}), volumes=frozenset({"v"}) if n == "n1" else frozenset())
    return out


def chain_dag(n=3):
    nodes = [Subtask(f"s{i}", "img", 1.0, 512) for i in range(n)]
    return SubtaskDag(nodes, [(f"s{i}", f"s{i + 1}") for i in range(n - 1)])


def test_groups_cover_live_nodes_and_prefer_warm_locality():
    ring = ChordRing.build(NAMES)
    groups = form_groups(ring, views(n3={"img": 2}), 3)
    assert len(groups) == len(NAMES)
    assert all(len(g.members) == 3 for g in groups)
    st = Subtask("t", "img", 1.0, 512, frozenset({"v"}))
    best = select_group(st, groups)
    assert best.warm_index.get("img", 0) > 0 and "n1" in best.members


def test_coordinator_edf_and_capacity():
    ring = ChordRing.build(NAMES[:2])
    g = form_groups(ring, {n: NodeView(n, 1.0, 1024, 1.0, 1024) for n in NAMES[:2]}, 2)[0]
    late = Subtask("late", "img", 1.0, 512, deadline=9.0)
    early = Subtask("early", "img", 1.0, 512, deadline=1.0)
    none = Subtask("none", "img", 1.0, 512)
    v = {n: NodeView(n, 1.0, 1024, 1.0, 1024) for n in NAMES[:2]}
    dispatched, queued = coordinator_schedule(g, [none, late, early], v)
    assert [s.subtask_id for s, _ in dispatched] == ["early", "late"]
    assert [s.subtask_id for s in queued] == ["none"]
    with pytest.raises(InfeasibleSubtaskError):
        coordinator_schedule(g, [Subtask("big", "img", 8.0, 512)], v)


def test_coordinator_prefers_warm_member():
    ring = ChordRing.build(NAMES[:3])
    v = views(n2={"img": 1})
    g = form_groups(ring, {n: v[n] for n in NAMES[:3]}, 3)[0]
    dispatched, _ = coordinator_schedule(g, [Subtask("a", "img", 1.0, 512)], {n: v[n] for n in NAMES[:3]})
    assert dispatched[0][1] == "n2"


def test_migration_protocol_commits_and_confirms():
    ring = ChordRing.build(NAMES)
    dag = chain_dag()
    key = 777
    ring.put_entry(VersionedTaskEntry(key, "n0", TaskStatus.IN_PROGRESS, 1, {"n0": 1}))
    succ = ring.successors(key, 5, "n0")
    warm_node = next(n for n in succ if n != "n0")
    v = views(**{warm_node: {"img": 1}})
    audit = []
    req = MigrationRequest("overload", "n0", key, image="img")
    target = request_migration(req, ring, v, audit=audit)
    assert target == warm_node
    ck = Checkpoint(key, frozenset({"s0"}), partial_results_size=50.0)
    res = commit_migration(ring, key, target, ck, dag, "n0", bandwidth=100.0, serialize_overhead=0.2, audit=audit)
    assert res.transfer_latency == pytest.approx(0.7)
    assert res.frontier == ["s1"]
    assert confirm_assignment(ring, key, target) and not confirm_assignment(ring, key, "n0")
    assert [a["step"] for a in audit] == ["request", "fetch", "find", "commit"]


def test_no_warm_target_defers():
    ring = ChordRing.build(NAMES)
    with pytest.raises(MigrationDeferred):
        request_migration(MigrationRequest("overload", "n0", 5, image="img"), ring, views())
    # failure recovery may accept a cold target
    assert request_migration(MigrationRequest("failure", "n0", 5, image="img"), ring, views(), require_warm=False)


def test_concurrent_commits_have_one_winner():
    ring = ChordRing.build(NAMES)
    dag = chain_dag()
    key = 4242
    base = VersionedTaskEntry(key, "n0", TaskStatus.IN_PROGRESS, 1, {"n0": 1})
    ring.put_entry(base)
    ck = Checkpoint(key)
    commit_migration(ring, key, "n2", ck, dag, "n1", availability_score=0.2, base=base)
    with pytest.raises(MigrationAborted) as exc:
        commit_migration(ring, key, "n4", ck, dag, "n3", availability_score=0.1, base=base)
    assert exc.value.entry.assigned_node == "n2"
    assert ring.get_entry(key).assigned_node == "n2"


def test_checkpoint_must_be_dependency_closed():
    dag = chain_dag()
    with pytest.raises(ValueError):
        Checkpoint(1, frozenset({"s1"})).validate(dag)
    assert resume_frontier(dag, []) == ["s0"]


def test_overload_detector_needs_consecutive_ticks():
    det = OverloadDetector()
    assert det.observe("n0", 0.9, 0.0) is None
    assert det.observe("n0", 0.5, 0.5) is None
    assert det.observe("n0", 0.9, 1.0) is None
    req = det.observe("n0", 0.95, 1.5, image="img")
    assert req is not None and req.reason == "overload"
    assert det.observe("n0", 0.95, 2.0) is None  # outstanding
    det.resolve("n0")
    assert det.observe("n0", 0.1, 2.5) is None
