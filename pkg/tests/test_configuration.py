import dataclasses
import random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from idaf.builtin import mesh4, mesh6, star
from idaf.configuration import (
    CapacityError,
    ConfigurationError,
    JoinFailure,
    JoinPlan,
    LiveConnection,
    NodeParticulars,
    RankingPolicy,
    ReservationTable,
    RolledBack,
    SnapshotView,
    bootstrap,
    commit_join,
    handle_failure,
    leave,
    node_key,
    plan_join,
    revalidate,
    to_dot,
    to_graph,
    verify,
)
from idaf.topology import (
    UNBOUNDED,
    ConnectionType,
    NodeType,
    NodeTypeSelectionPolicy,
    TopologyConnection,
    TopologySpec,
)

SIZES = {"star": 50, "mesh4": 25, "mesh6": 19}


def grow(spec, n, policy=None, particulars=None, seed=0):
    cfg = bootstrap(spec, "n0")
    plans = []
    for i in range(1, n):
        plan = plan_join(f"n{i}", spec, SnapshotView(cfg), particulars, policy, seed)
        assert isinstance(plan, JoinPlan), plan
        commit_join(plan, cfg)
        plans.append(plan)
    return cfg, plans


def degree(cfg, n):
    return len(cfg.perspectives(n))


# -- bootstrap -----------------------------------------------------------------

def test_bootstrap():
    cfg = bootstrap(star(), "n0")
    assert cfg.members == {"n0": "root"} and not cfg.connections
    assert verify(cfg) == []
    m = bootstrap(mesh4(), "n0")
    assert m.members == {"n0": "node"} and not m.connections
    assert verify(bootstrap(mesh6(), "n0")) == []


def test_bootstrap_rejects_invalid_spec():
    s = star()
    with pytest.raises(ConfigurationError):
        bootstrap(dataclasses.replace(s, wiring={}), "n0")


# -- planning -------------------------------------------------------------------

def test_star_join_plan():
    s = star()
    cfg = bootstrap(s, "n0")
    plan = plan_join("n1", s, SnapshotView(cfg))
    assert plan.node_type == "leaf"
    assert dict(plan.bindings) == {"L_to_R": "n0"}


def test_forced_leaf_without_root_fails():
    s = star()
    cfg = bootstrap(s, "n0")
    cfg.members.clear()
    out = plan_join("n1", s, SnapshotView(cfg), node_type="leaf")
    assert isinstance(out, JoinFailure)
    assert out.connection == "L_to_R"


def _l_shape():
    m = mesh4()
    cfg = bootstrap(m, "a")
    cfg.add_member("b", "node")
    cfg.add_member("c", "node")
    cfg.link("b", "a", "west")   # b sits east of a
    cfg.link("c", "a", "south")  # c sits north of a
    return m, cfg


def test_mesh_square_completion_binds_two_at_once():
    m, cfg = _l_shape()
    plan = plan_join("d", m, SnapshotView(cfg))
    assert dict(plan.bindings) == {"south": "b", "west": "c"}
    assert ("south", "west") in plan.units
    commit_join(plan, cfg)
    assert len(cfg.connections) == 4
    assert verify(cfg) == []


def test_mesh6_worked_example_binds_three():
    h = mesh6()
    cfg = bootstrap(h, "A")
    # A is the joiner's 120 degree neighbour; B and C sit at 180 and 240
    cfg.add_member("B", "node")
    cfg.add_member("C", "node")
    cfg.link("B", "A", "d60")   # A is at 60 degrees from B
    cfg.link("C", "B", "d120")  # B is at 120 degrees from C
    policy = RankingPolicy(via_order=("d120",))
    plan = plan_join("J", h, SnapshotView(cfg), policy=policy)
    assert len(plan.bindings) == 3
    assert dict(plan.bindings) == {"d120": "A", "d180": "B", "d240": "C"}
    commit_join(plan, cfg)
    assert verify(cfg) == []
    assert oracles.incomplete_groups(cfg) == []


def test_particulars_rank_and_restrict():
    spec = star()
    cfg = bootstrap(spec, "r0")
    # a second root is grafted on so the leaf has two candidates
    cfg.add_member("r1", "root")
    parts = {"r0": NodeParticulars({"bw": 1.0}), "r1": NodeParticulars({"bw": 5.0})}
    plan = plan_join("x", spec, SnapshotView(cfg), parts, RankingPolicy(metrics={"bw": 1.0}))
    assert plan.bindings["L_to_R"] == "r1"
    strict = RankingPolicy(metrics={"bw": 1.0}, restrictions={"bw": 10.0})
    assert isinstance(plan_join("x", spec, SnapshotView(cfg), parts, strict), JoinFailure)
    # equal scores fall back to natural node order
    assert plan_join("x", spec, SnapshotView(cfg)).bindings["L_to_R"] == "r0"


def test_natural_node_order():
    assert sorted(["n10", "n2", "n1"], key=node_key) == ["n1", "n2", "n10"]


def test_shortlist_must_be_positive():
    with pytest.raises(ValueError):
        RankingPolicy(shortlist=0)


# -- commit -----------------------------------------------------------------------

def test_star_commit_accounting():
    s = star()
    cfg = bootstrap(s, "n0")
    commit_join(plan_join("n1", s, SnapshotView(cfg)), cfg)
    assert cfg.connections == {LiveConnection("n1", "n0", "L_to_R", "pipe", None)}
    assert cfg.usage("n0", "R_to_L") == 1
    assert cfg.usage("n1", "L_to_R") == 1
    with pytest.raises(CapacityError):
        cfg.link("n1", "n0", "L_to_R")


def test_commit_with_one_refusing_peer_changes_nothing():
    m, cfg = _l_shape()
    plan = plan_join("d", m, SnapshotView(cfg))
    res = ReservationTable()
    assert res.reserve(cfg, "b", "north", "d", now=0, lease_ms=100)
    # c never granted a lease
    before = (set(cfg.connections), dict(cfg.members), dict(cfg.slot_usage))
    with pytest.raises(RolledBack) as err:
        commit_join(plan, cfg, res, now=10)
    assert err.value.peer == "c"
    assert (set(cfg.connections), dict(cfg.members), dict(cfg.slot_usage)) == before


def test_expired_lease_is_refused():
    s = star()
    cfg = bootstrap(s, "n0")
    plan = plan_join("n1", s, SnapshotView(cfg))
    res = ReservationTable()
    res.reserve(cfg, "n0", "R_to_L", "n1", now=0, lease_ms=50)
    with pytest.raises(RolledBack):
        commit_join(plan, cfg, res, now=60)
    assert "n1" not in cfg.members


def test_reservation_blocks_competing_joiner():
    m, cfg = _l_shape()
    res = ReservationTable()
    assert res.reserve(cfg, "b", "north", "x", 0, 100)
    assert not res.reserve(cfg, "b", "north", "y", 10, 100)
    # the competitor's view no longer offers b's north slot
    plan = plan_join("y", m, SnapshotView(cfg, res, 10, "y"))
    assert plan.bindings.get("south") != "b"
    assert res.reserve(cfg, "b", "north", "y", 200, 100)


def test_revalidate_detects_stale_anchor():
    m, cfg = _l_shape()
    plan = plan_join("d", m, SnapshotView(cfg))
    assert revalidate(plan, cfg)
    leave("c", cfg)
    assert not revalidate(plan, cfg)


# -- leave and failure ----------------------------------------------------------------

def test_leaf_leave_and_last_leave():
    s = star()
    cfg, _ = grow(s, 4)
    leave("n2", cfg)
    assert cfg.usage("n0", "R_to_L") == 2
    assert verify(cfg) == []
    for n in ["n1", "n3", "n0"]:
        leave(n, cfg)
    assert not cfg.members and not cfg.connections
    with pytest.raises(ConfigurationError):
        leave("n0", cfg)


def test_star_leaf_failure():
    cfg, _ = grow(star(), 5)
    rep = handle_failure("n3", cfg)
    assert rep.is_empty()
    assert verify(cfg) == []


def test_star_root_failure_freezes_all():
    cfg, _ = grow(star(), 5)
    rep = handle_failure("n0", cfg, "freeze")
    assert rep.frozen == ["n1", "n2", "n3", "n4"]
    assert rep.ida_failed and cfg.failed
    assert verify(cfg) == []  # frozen members are permitted
    assert oracles.legality(cfg) == []


def test_star_root_failure_promote():
    cfg, _ = grow(star(), 5)
    rep = handle_failure("n0", cfg, "promote")
    assert rep.promoted == ["n1"]
    assert cfg.members["n1"] == "root"
    assert not cfg.frozen and not cfg.failed
    assert degree(cfg, "n1") == 3
    assert verify(cfg) == []


def test_new_root_thaws_a_frozen_leaf():
    s = star()
    cfg, _ = grow(s, 3)
    handle_failure("n0", cfg)
    plan = plan_join("n9", s, SnapshotView(cfg), node_type="root")
    commit_join(plan, cfg)
    assert plan.bindings["R_to_L"] not in cfg.frozen
    assert not cfg.failed
    assert verify(cfg) == []


def _chain():
    # mid requires a head, tail requires a mid
    conns = [
        TopologyConnection("h2m", {"head"}, {"mid"}, "pipe", None, UNBOUNDED, False),
        TopologyConnection("m2h", {"mid"}, {"head"}, "pipe", None, 1, True),
        TopologyConnection("m2t", {"mid"}, {"tail"}, "pipe", None, UNBOUNDED, False),
        TopologyConnection("t2m", {"tail"}, {"mid"}, "pipe", None, 1, True),
    ]
    return TopologySpec("chain", [NodeType("head"), NodeType("mid"), NodeType("tail")],
                        [ConnectionType("pipe")], conns, NodeTypeSelectionPolicy("head", "mid"),
                        {"h2m": "m2h", "m2h": "h2m", "m2t": "t2m", "t2m": "m2t"})


def test_freeze_cascades():
    spec = _chain()
    cfg = bootstrap(spec, "h")
    cfg.add_member("m", "mid")
    cfg.add_member("t", "tail")
    cfg.add_member("u", "tail")
    cfg.link("m", "h", "m2h")
    cfg.link("t", "m", "t2m")
    cfg.link("u", "m", "t2m")
    assert verify(cfg) == []
    rep = handle_failure("h", cfg)
    assert rep.frozen == ["m", "t", "u"]
    assert rep.cascade == ["t", "u"]
    assert cfg.failed


def test_mesh_interior_failure_damages_without_freezing():
    spec = mesh4()
    cfg, _ = grow(spec, 9, RankingPolicy(via_order=("west", "south", "east", "north")))
    centre = max(cfg.members, key=lambda n: degree(cfg, n))
    assert degree(cfg, centre) == 4
    rep = handle_failure(centre, cfg)
    assert rep.frozen == [] and len(rep.damaged) == 4
    assert cfg.damaged and not cfg.failed
    assert verify(cfg) == []


def test_damage_threshold():
    cfg, _ = grow(mesh4(), 4, RankingPolicy(via_order=("west", "south", "east", "north")))
    cfg.damage_threshold = 1
    assert handle_failure("n3", cfg).ida_failed


def test_unknown_node_failure():
    cfg = bootstrap(star(), "n0")
    with pytest.raises(ConfigurationError):
        handle_failure("ghost", cfg)


# -- verify ---------------------------------------------------------------------------

def test_verify_flags_leaf_to_leaf():
    cfg, _ = grow(star(), 3)
    cfg.inject(LiveConnection("n1", "n2", "L_to_R", "pipe", None))
    out = verify(cfg)
    assert [v.kind for v in out] == ["no matching template"]
    assert oracles.legality(cfg)


def test_verify_flags_diagonal():
    cfg, _ = grow(mesh4(), 4, RankingPolicy(via_order=("west", "south", "east", "north")))
    assert len(cfg.connections) == 4
    cfg.inject(LiveConnection("n0", "n3", "northeast", "pipe", "northeast"))
    assert [v.kind for v in verify(cfg)] == ["no matching template"]


def test_verify_flags_overuse_and_drift():
    cfg, _ = grow(star(), 3)
    cfg.inject(LiveConnection("n1", "n0", "L_to_R", "pipe", None))
    cfg.inject(LiveConnection("n1", "n0", "L_to_R", "pipe", None))  # a set: still one extra
    cfg.members["n5"] = "root"
    cfg.inject(LiveConnection("n1", "n5", "L_to_R", "pipe", None))
    kinds = {v.kind for v in verify(cfg)}
    assert {"multiplicity exceeded", "slot accounting drift"} <= kinds


def test_verify_flags_unsatisfied_required():
    cfg, _ = grow(star(), 3)
    lc = cfg.touching("n1")[0]
    cfg.unlink(lc)
    assert [v.kind for v in verify(cfg)] == ["unsatisfied required"]


def test_verify_flags_incomplete_group():
    m, cfg = _l_shape()
    cfg.add_member("d", "node")
    cfg.link("d", "b", "south")  # square left open on the c side
    assert "incomplete contingent group" in {v.kind for v in verify(cfg)}
    assert oracles.incomplete_groups(cfg)


# -- export -------------------------------------------------------------------------

def test_to_graph_shapes():
    cfg, _ = grow(star(), 4)
    g = to_graph(cfg)
    assert (g.number_of_nodes(), g.number_of_edges()) == (4, 3)
    cfg.members.clear()
    cfg.connections.clear()
    assert to_graph(cfg).number_of_nodes() == 0
    sq, _ = grow(mesh4(), 4, RankingPolicy(via_order=("west", "south", "east", "north")))
    g = to_graph(sq)
    assert (g.number_of_nodes(), g.number_of_edges()) == (4, 4)
    dot = to_dot(g)
    assert dot.startswith("graph") and dot.count(" -- ") == 4


def test_dot_marks_frozen():
    cfg, _ = grow(star(), 3)
    handle_failure("n0", cfg)
    assert 'frozen="true"' in to_dot(to_graph(cfg))


# -- properties -------------------------------------------------------------------------

def _random_run(name, n, seed, data=None):
    rng = random.Random(seed)
    spec = {"star": star, "mesh4": mesh4, "mesh6": mesh6}[name]()
    dirs = [c.name for c in spec.connections]
    rng.shuffle(dirs)
    policy = RankingPolicy(metrics={"bw": 1.0}, via_order=tuple(dirs) if rng.random() < 0.5 else ())
    parts = {f"n{i}": NodeParticulars({"bw": rng.choice([0.0, 1.0, rng.random()])})
             for i in range(n)}
    return spec, grow(spec, n, policy, parts, seed)


def check_sound(spec, cfg, plans):
    assert verify(cfg) == []
    assert oracles.legality(cfg) == []
    n = len(cfg.members)
    if spec.name == "star":
        assert degree(cfg, "n0") == n - 1
        assert all(degree(cfg, m) == 1 for m in cfg.members if m != "n0")
    else:
        limit = len(spec.connections)
        assert all(degree(cfg, m) <= limit for m in cfg.members)
        pos, bad = oracles.embedding(cfg)
        assert bad == []
        assert len(set(pos.values())) == len(pos)
        assert oracles.incomplete_groups(cfg) == []
    for plan in plans:
        # planning stayed within two hops of the shortlist
        assert plan.consulted <= oracles.ball(cfg, plan.shortlisted, 2)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(SIZES)), st.data(), st.integers(0, 2**32 - 1))
def test_join_soundness(name, data, seed):
    n = data.draw(st.integers(1, SIZES[name]))
    spec, (cfg, plans) = _random_run(name, n, seed)
    check_sound(spec, cfg, plans)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["mesh4", "mesh6"]), st.integers(2, 16), st.integers(0, 10_000))
def test_all_or_none_contingency(name, n, seed):
    spec, (cfg, plans) = _random_run(name, n, seed)
    for plan in plans:
        # every bound unit landed in full
        for unit in plan.units:
            for t in unit:
                assert LiveConnection(plan.joiner, plan.bindings[t], t, "pipe",
                                      spec.connection(t).d) in cfg.connections


def test_plan_determinism():
    spec, (cfg, _) = _random_run("mesh4", 12, 5)
    parts = {n: NodeParticulars({"bw": 1.0}) for n in cfg.members}
    a = plan_join("x", spec, SnapshotView(cfg), parts, RankingPolicy(), 3)
    b = plan_join("x", spec, SnapshotView(cfg), parts, RankingPolicy(), 3)
    assert a == b


def test_oracle_catches_mutations():
    # the oracle must not be vacuous
    cfg, _ = grow(mesh4(), 9, RankingPolicy(via_order=("west", "south", "east", "north")))
    # drop one edge of a node that joined with two: its group is now incomplete
    joiner = next(n for n in sorted(cfg.members, key=node_key)
                  if sum(lc.n1 == n for lc in cfg.connections) >= 2)
    lc = next(lc for lc in sorted(cfg.connections, key=lambda c: c.template) if lc.n1 == joiner)
    cfg.unlink(lc)
    assert oracles.incomplete_groups(cfg)
    assert "incomplete contingent group" in {v.kind for v in verify(cfg)}
    cfg.slot_usage[("n0", "north")] += 3
    assert "slot usage differs from edge count" in oracles.legality(cfg)
