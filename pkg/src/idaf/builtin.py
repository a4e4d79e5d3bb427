"""Shipped topologies (star, four- and six-neighbour meshes) and the JSON format.

JSON topology files mirror ``TopologySpec`` field for field.  Multiplicity
``UNBOUNDED`` is written as the string ``"inf"``.  Locators and context
rules are code, so files refer to them by registered name.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Callable, Union

from .locator import LocatorError, get_locator, hex6_locator, mesh4_locator
from .topology import (
    UNBOUNDED,
    ConnectionType,
    ContingentGroup,
    Delivery,
    NodeType,
    NodeTypeSelectionPolicy,
    TopologyConnection,
    TopologySpec,
)

__all__ = [
    "star",
    "mesh4",
    "mesh6",
    "builtin",
    "BUILTINS",
    "SpecFormatError",
    "spec_to_dict",
    "spec_from_dict",
    "load_spec",
    "dump_spec",
    "register_rule",
]


class SpecFormatError(ValueError):
    """A topology file that cannot be turned into a spec at all."""


_RULES: dict = {}


def register_rule(name: str, rule: Callable) -> Callable:
    _RULES[name] = rule
    return rule


def star() -> TopologySpec:
    return TopologySpec(
        name="star",
        node_types=(NodeType("root"), NodeType("leaf")),
        connection_types=(ConnectionType("pipe", Delivery.LASTING),),
        connections=(
            TopologyConnection("R_to_L", {"root"}, {"leaf"}, "pipe", None, UNBOUNDED, False, None),
            TopologyConnection("L_to_R", {"leaf"}, {"root"}, "pipe", None, 1, True, None),
        ),
        selection_policy=NodeTypeSelectionPolicy("root", "leaf"),
        wiring={"R_to_L": "L_to_R", "L_to_R": "R_to_L"},
        # lets the promote policy hand a dead root's position to a leaf
        type_change_map={"leaf": "root"},
    )


_MESH4_OPPOSITE = {"north": "south", "south": "north", "east": "west", "west": "east"}


def mesh4() -> TopologySpec:
    dirs = ("north", "south", "east", "west")
    return TopologySpec(
        name="mesh4",
        node_types=(NodeType("node"),),
        connection_types=(ConnectionType("pipe", Delivery.LASTING),),
        connections=tuple(
            TopologyConnection(d, {"node"}, {"node"}, "pipe", d, 1, False, "cont_ref") for d in dirs
        ),
        selection_policy=NodeTypeSelectionPolicy("node", "node"),
        wiring=dict(_MESH4_OPPOSITE),
        contingent_groups=(ContingentGroup("cont_ref", set(dirs), "node", rigid=True),),
        locator=mesh4_locator,
    )


def mesh6() -> TopologySpec:
    angles = ("0", "60", "120", "180", "240", "300")
    names = {a: f"d{a}" for a in angles}
    opposite = {a: str((int(a) + 180) % 360) for a in angles}
    return TopologySpec(
        name="mesh6",
        node_types=(NodeType("node"),),
        connection_types=(ConnectionType("pipe", Delivery.LASTING),),
        connections=tuple(
            TopologyConnection(names[a], {"node"}, {"node"}, "pipe", a, 1, False, "cont_ref")
            for a in angles
        ),
        selection_policy=NodeTypeSelectionPolicy("node", "node"),
        wiring={names[a]: names[opposite[a]] for a in angles},
        contingent_groups=(ContingentGroup("cont_ref", set(names.values()), "node", rigid=True),),
        locator=hex6_locator,
    )


BUILTINS = {"star": star, "mesh4": mesh4, "mesh6": mesh6}


def builtin(name: str) -> TopologySpec:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise SpecFormatError(f"no builtin topology {name!r}") from None


# -- JSON ------------------------------------------------------------------------

def _q_out(q):
    return "inf" if q is UNBOUNDED else q


def _q_in(q):
    if q == "inf":
        return UNBOUNDED
    if isinstance(q, bool) or not isinstance(q, int):
        # left for validate() to report as a bad multiplicity
        return q
    return q


def spec_to_dict(spec: TopologySpec) -> dict:
    out = {
        "name": spec.name,
        "node_types": [t.name for t in spec.node_types],
        "connection_types": [{"name": ct.name, "delivery": ct.delivery.value}
                             for ct in spec.connection_types],
        "connections": [
            {"name": c.name, "t1": sorted(c.t1), "t2": sorted(c.t2), "o": c.o, "d": c.d,
             "q": _q_out(c.q), "f": c.f, "r": c.r}
            for c in spec.connections
        ],
        "groups": [
            {"ref": g.ref, "members": [c.name for c in spec.group_members(g)]
             + sorted(m for m in g.members if not spec.has_connection(m)),
             "owner": g.owner, "rigid": g.rigid}
            for g in spec.contingent_groups
        ],
        "wiring": dict(spec.wiring),
        "selection_policy": {"initial": spec.selection_policy.initial,
                             "join_default": spec.selection_policy.join_default},
    }
    if spec.selection_policy.rule_name:
        out["selection_policy"]["context_rule"] = spec.selection_policy.rule_name
    if spec.locator is not None:
        out["locator"] = spec.locator.name
    if spec.type_change_map:
        out["type_change_map"] = dict(spec.type_change_map)
    return out


def spec_from_dict(data: dict) -> TopologySpec:
    if not isinstance(data, dict):
        raise SpecFormatError("topology file must hold a JSON object")
    try:
        ctypes = []
        for ct in data.get("connection_types", []):
            if isinstance(ct, str):
                ctypes.append(ConnectionType(ct))
            else:
                ctypes.append(ConnectionType(ct["name"], Delivery(ct.get("delivery", "lasting"))))
        conns = [
            TopologyConnection(c["name"], c["t1"], c["t2"], c["o"], c.get("d"),
                               _q_in(c.get("q", 1)), bool(c.get("f", False)), c.get("r"))
            for c in data["connections"]
        ]
        groups = [ContingentGroup(g["ref"], g["members"], g["owner"], bool(g.get("rigid", False)))
                  for g in data.get("groups", [])]
        sp = data["selection_policy"]
        rule_name = sp.get("context_rule")
        rule = None
        if rule_name is not None:
            if rule_name not in _RULES:
                raise SpecFormatError(f"unknown context rule {rule_name!r}")
            rule = _RULES[rule_name]
        policy = NodeTypeSelectionPolicy(sp["initial"], sp.get("join_default", sp["initial"]),
                                         rule, rule_name)
        locator = None
        if data.get("locator") is not None:
            try:
                locator = get_locator(data["locator"])
            except LocatorError as e:
                raise SpecFormatError(str(e)) from None
        return TopologySpec(
            name=data["name"],
            node_types=[NodeType(n) for n in data["node_types"]],
            connection_types=ctypes,
            connections=conns,
            selection_policy=policy,
            wiring=dict(data.get("wiring", {})),
            contingent_groups=groups,
            locator=locator,
            type_change_map=dict(data.get("type_change_map", {})),
        )
    except SpecFormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise SpecFormatError(f"ill-formed topology file: {e!r}") from None


def load_spec(source: Union[str, Path]) -> TopologySpec:
    """Load a spec from a path or a builtin name such as ``star``."""
    if str(source) in BUILTINS and not Path(source).exists():
        return builtin(str(source))
    try:
        text = Path(source).read_text(encoding="utf-8")
    except OSError as e:
        raise SpecFormatError(f"cannot read {source}: {e.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecFormatError(f"{source}: not JSON ({e.msg} at line {e.lineno})") from None
    return spec_from_dict(data)


def dump_spec(spec: TopologySpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def data_file(name: str) -> Path:
    """Path of a shipped JSON topology file, e.g. ``data_file("star")``."""
    return Path(str(resources.files("idaf") / "data" / f"{name}.json"))
