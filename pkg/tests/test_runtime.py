import pytest

from idaf.builtin import mesh4, star
from idaf.runtime import CoverageError, Nodelet, Nodeletset, Phase, PortClosed, RuntimeErrorIDA
from idaf.swarm import Swarm


class Echo(Nodelet):
    def __init__(self):
        super().__init__()
        self.got = []

    def on_message(self, port, payload):
        self.got.append((port.remote, payload))


class Boom(Nodelet):
    def on_tick(self, now):
        raise RuntimeError("kaboom")


def star_swarm(*nodes, factories=None, seed=1):
    sw = Swarm(seed=seed)
    sw.add_ida("app", star(), Nodeletset(factories or {"root": Echo, "leaf": Echo}))
    for n in nodes:
        sw.join(n, "app")
        sw.settle()
    return sw


def test_coverage_checked_on_register():
    sw = Swarm()
    sw.add_node("a")
    with pytest.raises(CoverageError, match="root uncovered"):
        sw.add_ida("app", star(), Nodeletset({"leaf": Echo}))
    with pytest.raises(CoverageError):
        sw.add_ida("app2", star(), Nodeletset({"root": Echo, "leaf": Echo, "extra": Echo}))


def test_first_is_root_second_is_leaf():
    sw = star_swarm("a", "b")
    a, b = sw.context("a", "app"), sw.context("b", "app")
    assert (a.node_type, b.node_type) == ("root", "leaf")
    assert a.phase is b.phase is Phase.RUNNING
    assert [p.remote for p in b.nodelet.sorted_ports()] == ["a"]
    assert [p.remote for p in a.nodelet.sorted_ports()] == ["b"]


def test_root_alone_has_no_ports():
    sw = star_swarm("a")
    assert sw.context("a", "app").nodelet.ports == {}


def test_duplicate_participation_rejected():
    sw = star_swarm("a")
    with pytest.raises(RuntimeErrorIDA):
        sw.join("a", "app")
    with pytest.raises(RuntimeErrorIDA):
        sw.container("a").participate("nope")


def test_messages_flow_in_order_per_port():
    sw = star_swarm("a", "b", "c")
    root = sw.context("a", "app").nodelet
    for p in root.sorted_ports():
        for i in range(5):
            root.emit(p, f"{p.remote}{i}".encode())
    sw.run_for(500)
    for leaf in ("b", "c"):
        got = sw.context(leaf, "app").nodelet.got
        assert got == [("a", f"{leaf}{i}".encode()) for i in range(5)]


def test_withdraw_removes_member_and_closes_ports():
    sw = star_swarm("a", "b")
    port = sw.context("b", "app").nodelet.sorted_ports()[0]
    sw.leave("b", "app")
    assert "b" not in sw.cfg("app").members
    assert not port.alive()
    with pytest.raises(PortClosed):
        port.send(b"x")
    with pytest.raises(RuntimeErrorIDA):
        sw.context("b", "app")
    sw.run_for(50)
    assert sw.context("a", "app").nodelet.ports == {}


def test_frozen_leaf_cannot_send():
    sw = star_swarm("a", "b")
    port = sw.context("b", "app").nodelet.sorted_ports()[0]
    sw.fail("a")
    sw.run_for(20)
    ctx = sw.context("b", "app")
    assert ctx.phase is Phase.FROZEN
    with pytest.raises(PortClosed):
        port.send(b"x")


def test_idas_are_isolated():
    sw = Swarm(seed=2)
    sw.add_ida("one", star(), Nodeletset({"root": Echo, "leaf": Echo}))
    sw.add_ida("two", star(), Nodeletset({"root": Echo, "leaf": Echo}))
    for n in ("a", "b"):
        for ida in ("one", "two"):
            sw.join(n, ida)
            sw.settle()
    root = sw.context("a", "one").nodelet
    root.emit(root.sorted_ports()[0], b"only-one")
    sw.run_for(300)
    assert sw.context("b", "one").nodelet.got == [("a", b"only-one")]
    assert sw.context("b", "two").nodelet.got == []


def test_hook_exception_marks_failed_without_stopping_others():
    sw = star_swarm("a", "b", factories={"root": Echo, "leaf": Boom})
    sw.run_for(50)
    assert sw.context("b", "app").phase is Phase.FAILED
    assert "kaboom" in sw.context("b", "app").error
    assert sw.context("a", "app").phase is Phase.RUNNING
    assert [r["node"] for r in sw.trace.of("failed")] == ["b"]


def test_mesh_join_through_commands_is_valid():
    sw = Swarm(seed=5)
    sw.add_ida("grid", mesh4(), Nodeletset({t: Echo for t in mesh4().type_names()}))
    for i in range(9):
        sw.join(f"n{i}", "grid")
        assert sw.settle()
    assert sw.verify("grid") == []
    assert len(sw.cfg("grid").connections) == 12
    metrics = sw.join_metrics("grid")
    assert all(m["phase"] == "running" and m["latency_ms"] is not None for m in metrics)
