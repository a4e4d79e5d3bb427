import json

import pytest

from idaf.scenario import Scenario, ScenarioError, load_scenario, run_scenario


def sc(**kw):
    d = {"topology": "star", "nodes": 3}
    d.update(kw)
    return Scenario.from_dict(d)


def test_default_script_joins_every_node():
    s = sc()
    assert [(st["at"], st["args"]["node"]) for st in s.script] == [(0, "n0"), (10, "n1"), (20, "n2")]
    out = run_scenario(s, seed=1)
    assert out.ok and len(out.cfg.members) == 3


@pytest.mark.parametrize("bad", [
    {"nodes": 2},
    {"topology": "star", "app": "chess"},
    {"topology": "star", "failure_policy": "panic"},
    {"topology": "star", "script": [{"at": 5, "action": "join", "args": {"node": "a"}},
                                    {"at": 1, "action": "join", "args": {"node": "b"}}]},
    {"topology": "star", "script": [{"at": 0, "action": "dance"}]},
    {"topology": "star", "script": [{"at": 0, "action": "fail", "args": {}}]},
])
def test_rejected_scenarios(bad):
    with pytest.raises(ScenarioError):
        Scenario.from_dict(bad)


def test_unknown_topology_and_unreadable_file(tmp_path):
    with pytest.raises(ScenarioError):
        run_scenario(Scenario.from_dict({"topology": "torus"}))
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "none.json")
    f = tmp_path / "x.json"
    f.write_text("[1,")
    with pytest.raises(ScenarioError):
        load_scenario(f)


def test_redundant_actions_warn():
    s = sc(script=[{"at": 0, "action": "join", "args": {"node": "n0"}},
                   {"at": 10, "action": "leave", "args": {"node": "n1"}},
                   {"at": 20, "action": "fail", "args": {"node": "n2"}}])
    out = run_scenario(s)
    assert len(out.warnings) == 2


def test_until_stops_early():
    out = run_scenario(sc(nodes=5), seed=2, until=15)
    assert out.snapshots[-1].members == 2


def test_partition_blocks_a_joiner():
    s = sc(script=[{"at": 0, "action": "join", "args": {"node": "n0"}},
                   {"at": 5, "action": "partition", "args": {"sets": [["n0"], ["n1"]]}},
                   {"at": 10, "action": "join", "args": {"node": "n1"}}])
    out = run_scenario(s, settle_ms=3000)
    assert "n1" not in out.cfg.members


def test_topology_file_relative_to_scenario(tmp_path):
    from idaf.builtin import dump_spec, star
    (tmp_path / "mine.json").write_text(dump_spec(star()))
    (tmp_path / "s.json").write_text(json.dumps({"topology": "mine.json", "nodes": 2}))
    assert run_scenario(load_scenario(tmp_path / "s.json")).ok
