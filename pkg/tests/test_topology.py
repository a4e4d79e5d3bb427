import dataclasses

import pytest
from hypothesis import given, strategies as st

from idaf.builtin import mesh4, mesh6, star
from idaf.topology import (
    UNBOUNDED,
    ConfigurationSummary,
    ContingentGroup,
    NodeType,
    NodeTypeSelectionPolicy,
    Structure,
    TopologyConnection,
    TopologyError,
    TopologySpec,
    classify,
    optional_connections,
    reciprocal,
    required_connections,
    select_node_type,
    validate,
)


def names(conns):
    return {c.name for c in conns}


def kinds(report):
    return [v.kind for v in report]


def test_builtins_validate_clean():
    for spec in (star(), mesh4(), mesh6()):
        assert validate(spec) == []


def test_missing_reciprocal_is_reported_once():
    s = star()
    wiring = dict(s.wiring)
    del wiring["R_to_L"]
    report = validate(dataclasses.replace(s, wiring=wiring))
    assert kinds(report) == ["missing reciprocal"]
    assert report[0].subject == "R_to_L"


def test_mixed_contingent_group():
    s = mesh4()
    conns = [dataclasses.replace(c, f=True) if c.name == "north" else c for c in s.connections]
    report = validate(dataclasses.replace(s, connections=conns))
    assert "mixed contingent group" in kinds(report)
    assert kinds(report).count("mixed contingent group") == 1


def test_direction_without_locator():
    s = mesh4()
    report = validate(dataclasses.replace(s, locator=None))
    assert "direction without locator" in kinds(report)


def test_rigid_group_without_directions():
    s = mesh4()
    conns = [dataclasses.replace(c, d=None) for c in s.connections]
    report = validate(dataclasses.replace(s, connections=conns))
    assert "rigid group without directions" in kinds(report)


def test_unresolved_mask_and_no_seed():
    s = star()
    conns = [dataclasses.replace(s.connections[0], t2={"ghost"}), s.connections[1]]
    assert "unresolved mask" in kinds(validate(dataclasses.replace(s, connections=conns)))
    everything_required = [dataclasses.replace(c, f=True) for c in s.connections]
    k = kinds(validate(dataclasses.replace(s, connections=everything_required)))
    assert "no seed node type" in k


def test_req_opt_views():
    s, m = star(), mesh4()
    assert names(required_connections(s, "leaf")) == {"L_to_R"}
    assert names(required_connections(s, "root")) == set()
    assert names(required_connections(m, "node")) == set()
    assert names(optional_connections(s, "root")) == {"R_to_L"}
    assert names(optional_connections(m, "node")) == {"north", "south", "east", "west"}
    assert names(optional_connections(s, "leaf")) == set()
    with pytest.raises(TopologyError):
        required_connections(s, "ghost")


def test_reciprocals():
    s, m, h = star(), mesh4(), mesh6()
    assert reciprocal(s, "R_to_L").name == "L_to_R"
    assert reciprocal(m, "north").name == "south"
    assert reciprocal(m, "east").name == "west"
    assert reciprocal(h, "d60").name == "d240"
    for spec in (s, m, h):
        for c in spec.connections:
            back = reciprocal(spec, c)
            assert reciprocal(spec, back) == c
            assert c.t1 == back.t2 and c.t2 == back.t1


def test_reciprocal_unwired_raises():
    s = star()
    broken = dataclasses.replace(s, wiring={"L_to_R": "R_to_L"})
    with pytest.raises(TopologyError):
        reciprocal(broken, "R_to_L")


def _two_group_spec():
    # non-rigid contingency: a node wants a white and a grey partner together
    conns = [
        TopologyConnection("to_white", {"black"}, {"white"}, "pipe", None, 1, False, "g"),
        TopologyConnection("to_grey", {"black"}, {"grey"}, "pipe", None, 1, False, "g"),
        TopologyConnection("w_to_b", {"white"}, {"black"}, "pipe", None, UNBOUNDED, False, None),
        TopologyConnection("g_to_b", {"grey"}, {"black"}, "pipe", None, UNBOUNDED, False, None),
    ]
    from idaf.topology import ConnectionType

    return TopologySpec(
        name="tri",
        node_types=[NodeType("black"), NodeType("white"), NodeType("grey")],
        connection_types=[ConnectionType("pipe")],
        connections=conns,
        selection_policy=NodeTypeSelectionPolicy("white", "black"),
        wiring={"to_white": "w_to_b", "w_to_b": "to_white", "to_grey": "g_to_b", "g_to_b": "to_grey"},
        contingent_groups=[ContingentGroup("g", {"to_white", "to_grey"}, "black", rigid=False)],
    )


def test_classify():
    assert classify(star()) is Structure.UNSTRUCTURED
    assert classify(mesh4()) is Structure.RIGIDLY_STRUCTURED
    spec = _two_group_spec()
    assert validate(spec) == []
    assert classify(spec) is Structure.STRUCTURED


def test_select_node_type():
    s = star()
    assert select_node_type(s, ConfigurationSummary()) == "root"
    assert select_node_type(s, ConfigurationSummary.of({"n0": "root"})) == "leaf"
    assert select_node_type(mesh4(), ConfigurationSummary.of({"a": "node", "b": "node"})) == "node"


def test_context_rule_is_consulted():
    s = star()
    rule_policy = NodeTypeSelectionPolicy("root", "leaf", lambda summ: "root", "always_root")
    spec = dataclasses.replace(s, selection_policy=rule_policy)
    assert select_node_type(spec, ConfigurationSummary.of({"n0": "root"})) == "root"


def test_unbounded_is_a_singleton():
    import pickle

    assert pickle.loads(pickle.dumps(UNBOUNDED)) is UNBOUNDED
    assert star().connection("R_to_L").capacity() == float("inf")


@given(st.sampled_from(["star", "mesh4", "mesh6"]), st.integers(0, 10_000))
def test_classify_is_structural(which, salt):
    # renaming every node type and connection leaves the class unchanged
    spec = {"star": star, "mesh4": mesh4, "mesh6": mesh6}[which]()
    rn_t = {t.name: f"T{salt}_{i}" for i, t in enumerate(spec.node_types)}
    rn_c = {c.name: f"C{salt}_{i}" for i, c in enumerate(spec.connections)}
    conns = [dataclasses.replace(c, name=rn_c[c.name], t1={rn_t[x] for x in c.t1},
                                 t2={rn_t[x] for x in c.t2}) for c in spec.connections]
    groups = [dataclasses.replace(g, members={rn_c[m] for m in g.members}, owner=rn_t[g.owner])
              for g in spec.contingent_groups]
    renamed = dataclasses.replace(
        spec,
        node_types=[NodeType(rn_t[t.name]) for t in spec.node_types],
        connections=conns,
        contingent_groups=groups,
        wiring={rn_c[a]: rn_c[b] for a, b in spec.wiring.items()},
        selection_policy=NodeTypeSelectionPolicy(rn_t[spec.selection_policy.initial],
                                                 rn_t[spec.selection_policy.join_default]),
        type_change_map={rn_t[a]: rn_t[b] for a, b in spec.type_change_map.items()},
    )
    assert validate(renamed) == []
    assert classify(renamed) is classify(spec)


def test_req_opt_partition_and_seed():
    for spec in (star(), mesh4(), mesh6(), _two_group_spec()):
        for t in spec.type_names():
            req, opt = required_connections(spec, t), optional_connections(spec, t)
            assert not (req & opt)
            assert names(req | opt) == {c.name for c in spec.connections if t in c.t1}
        first = select_node_type(spec, ConfigurationSummary())
        assert required_connections(spec, first) == frozenset()
