"""Scripted swarm runs: JSON scenarios of timed joins, leaves, failures and snapshots."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .apps.dft import DftWorkload, dft_nodeletset, three_sines
from .apps.rooms import Person, RoomGame, census, rooms_nodeletset
from .builtin import SpecFormatError, load_spec
from .configuration import RankingPolicy, NodeParticulars, node_key, verify
from .runtime import Nodelet, Nodeletset
from .swarm import Swarm
from .transport import BaseTransport, SimParams

log = logging.getLogger(__name__)

__all__ = ["Scenario", "ScenarioError", "Snapshot", "SimOutcome", "load_scenario", "run_scenario"]

ACTIONS = ("join", "leave", "fail", "snapshot", "run-demo", "partition")


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    topology: str
    ida: str = "ida"
    nodes: list = field(default_factory=list)
    sim_params: dict = field(default_factory=dict)
    app: str = "none"
    failure_policy: str = "freeze"
    ranking: dict = field(default_factory=dict)
    particulars: dict = field(default_factory=dict)
    script: list = field(default_factory=list)
    base: Optional[Path] = None

    @classmethod
    def from_dict(cls, d: dict, base: Optional[Path] = None) -> "Scenario":
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        if "topology" not in d:
            raise ScenarioError("scenario needs a topology")
        nodes = d.get("nodes", [])
        if isinstance(nodes, int):
            nodes = [f"n{i}" for i in range(nodes)]
        script = list(d.get("script", []))
        if not script and "script" not in d:
            script = [{"at": 10 * i, "action": "join", "args": {"node": n}}
                      for i, n in enumerate(nodes)]
        sc = cls(d["topology"], d.get("ida", "ida"), list(nodes), dict(d.get("sim_params", {})),
                 d.get("app", "none"), d.get("failure_policy", "freeze"),
                 dict(d.get("ranking", {})), dict(d.get("particulars", {})), script, base)
        sc.check()
        return sc

    def check(self) -> None:
        last = -math.inf
        declared = set(self.nodes)
        if self.app not in ("none", "dft", "rooms"):
            raise ScenarioError(f"unknown app {self.app!r}")
        if self.failure_policy not in ("freeze", "promote"):
            raise ScenarioError(f"unknown failure policy {self.failure_policy!r}")
        for i, step in enumerate(self.script):
            if not isinstance(step, dict) or "at" not in step or "action" not in step:
                raise ScenarioError(f"script step {i} needs 'at' and 'action'")
            if step["at"] < last:
                raise ScenarioError(f"script step {i}: timestamps must be non-decreasing")
            last = step["at"]
            if step["action"] not in ACTIONS:
                raise ScenarioError(f"script step {i}: unknown action {step['action']!r}")
            node = step.get("args", {}).get("node")
            if step["action"] in ("join", "leave", "fail"):
                if node is None:
                    raise ScenarioError(f"script step {i}: {step['action']} needs args.node")
                if declared and node not in declared:
                    raise ScenarioError(f"script step {i}: unknown node {node!r}")

    @property
    def end(self) -> float:
        return max((s["at"] for s in self.script), default=0.0)


def load_scenario(path: Union[str, Path]) -> Scenario:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as e:
        raise ScenarioError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: not JSON ({e.msg})") from None
    return Scenario.from_dict(data, p.parent)


@dataclass
class Snapshot:
    at: float
    label: str
    members: int
    edges: int
    violations: list
    frozen: list
    damaged: bool
    failed: bool

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class SimOutcome:
    scenario: Scenario
    swarm: Swarm
    snapshots: list
    warnings: list = field(default_factory=list)
    state: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.snapshots)

    @property
    def cfg(self):
        return self.swarm.cfg(self.scenario.ida)


def _spec(sc: Scenario):
    topo = sc.topology
    if sc.base is not None and not Path(topo).is_absolute() and (sc.base / topo).exists():
        topo = str(sc.base / topo)
    try:
        return load_spec(topo)
    except SpecFormatError as e:
        raise ScenarioError(str(e)) from None


def _policy(ranking: dict) -> RankingPolicy:
    try:
        return RankingPolicy(metrics=dict(ranking.get("metrics", {})),
                             restrictions=dict(ranking.get("restrictions", {})),
                             shortlist=int(ranking.get("shortlist", 5)),
                             via_order=tuple(ranking.get("via_order", ())))
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"bad ranking: {e}") from None


def snapshot(swarm: Swarm, ida: str, label: str, at: Optional[float] = None) -> Snapshot:
    cfg = swarm.cfg(ida)
    return Snapshot(swarm.clock if at is None else at, label, len(cfg.members), len(cfg.connections),
                    [str(v) for v in verify(cfg)], sorted(cfg.frozen, key=node_key),
                    cfg.damaged, cfg.failed)


def run_scenario(sc: Scenario, seed: Optional[int] = None, until: Optional[float] = None,
                 transport: Optional[BaseTransport] = None, settle_ms: float = 5000.0) -> SimOutcome:
    """Execute the script; ``until`` stops early with a final snapshot at that time."""
    sp = dict(sc.sim_params)
    if seed is not None:
        sp["seed"] = seed
    try:
        params = SimParams.from_dict(sp)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"bad sim_params: {e}") from None
    swarm = Swarm(params, transport=transport)
    spec = _spec(sc)
    warnings: list = []
    state: dict = {}
    if sc.app == "dft":
        if spec.name != "star":
            raise ScenarioError("the dft app needs the star topology")
        work = DftWorkload(three_sines(256, 8), np.zeros(2048), 8, 1, start_at=math.inf)
        state["work"] = work
        nls = dft_nodeletset(work)
    elif sc.app == "rooms":
        game = RoomGame(tick_ms=swarm.tick_ms)
        state["game"] = game
        nls = rooms_nodeletset(game)
    else:
        nls = Nodeletset({t: Nodelet for t in spec.type_names()})
    particulars = {n: NodeParticulars(dict(a)) for n, a in sc.particulars.items()}
    try:
        swarm.add_ida(sc.ida, spec, nls, policy=_policy(sc.ranking), particulars=particulars,
                      failure_policy=sc.failure_policy)
    except Exception as e:
        raise ScenarioError(str(e)) from None
    snaps: list = []

    def act(step: dict) -> None:
        a, args = step["action"], step.get("args", {})
        node = args.get("node")
        if a == "join":
            swarm.join(node, sc.ida)
        elif a == "leave":
            if node not in swarm.containers or sc.ida not in swarm.containers[node].contexts:
                warnings.append(f"t={step['at']}: {node} is not participating; leave ignored")
                return
            swarm.leave(node, sc.ida)
        elif a == "fail":
            if node not in swarm.containers or node in swarm.crashed:
                warnings.append(f"t={step['at']}: {node} is not running; fail ignored")
                return
            swarm.fail(node)
        elif a == "partition":
            swarm.transport.set_partitions(args.get("sets", []))
        elif a == "snapshot":
            snaps.append(snapshot(swarm, sc.ida, args.get("label", f"t={step['at']}"), step["at"]))
        elif a == "run-demo":
            if "work" in state:
                state["work"].expected_leaves = 1
                state["work"].start_at = swarm.transport.now
            elif "game" in state:
                game = state["game"]
                members = sorted(swarm.cfg(sc.ida).members, key=node_key)
                game.initial = {n: [Person(f"p{i}", 5)] for i, n in enumerate(members)}
                game.start_at = swarm.clock + swarm.tick_ms

    for step in sc.script:
        swarm.at(step["at"], lambda step=step: act(step))
    stop = until if until is not None else sc.end
    swarm.run(stop)
    if until is None:
        swarm.settle(settle_ms)
    elif until > sc.end:
        swarm.settle(settle_ms)
    snaps.append(snapshot(swarm, sc.ida, "final"))
    if "game" in state and state["game"].start_at is not None:
        n, c = census(swarm, sc.ida)
        state["census"] = (n, c)
    return SimOutcome(sc, swarm, snaps, warnings, state)
