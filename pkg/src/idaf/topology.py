"""Declarative topology specifications.

A topology is a relation of connection templates (``TopologyConnection``)
between node types, extended with multiplicities, required/optional flags
and contingent groups.  Specs are immutable; every structural problem is
reported by :func:`validate` rather than raised at construction time, so a
broken spec can still be loaded and inspected.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Union

__all__ = [
    "UNBOUNDED",
    "Unbounded",
    "Delivery",
    "NodeType",
    "ConnectionType",
    "TopologyConnection",
    "ContingentGroup",
    "ConfigurationSummary",
    "NodeTypeSelectionPolicy",
    "TopologySpec",
    "Structure",
    "Violation",
    "TopologyError",
    "validate",
    "required_connections",
    "optional_connections",
    "reciprocal",
    "classify",
    "select_node_type",
]


class TopologyError(Exception):
    """Raised when a query references something the topology spec does not declare."""


class Unbounded:
    """Multiplicity token for re-usable connections with no use limit."""

    _instance: Optional["Unbounded"] = None

    def __new__(cls) -> "Unbounded":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNBOUNDED"

    def __reduce__(self):
        return (Unbounded, ())


UNBOUNDED = Unbounded()

Multiplicity = Union[int, Unbounded]


class Delivery(str, enum.Enum):
    ONCE = "once"
    INTERMITTENT = "intermittent"
    LASTING = "lasting"


class Structure(str, enum.Enum):
    UNSTRUCTURED = "unstructured"
    STRUCTURED = "structured"
    RIGIDLY_STRUCTURED = "rigidly_structured"


@dataclass(frozen=True)
class NodeType:
    name: str


@dataclass(frozen=True)
class ConnectionType:
    name: str
    delivery: Delivery = Delivery.LASTING


@dataclass(frozen=True)
class TopologyConnection:
    """One row of the structure relation.

    ``t1`` is the mask on the local side, ``t2`` on the remote side.  ``q`` is
    the maximum number of live connections a single node may hold under this
    template, ``f`` marks it required, ``r`` names its contingent group.
    """

    name: str
    t1: frozenset
    t2: frozenset
    o: str
    d: Optional[str] = None
    q: Multiplicity = 1
    f: bool = False
    r: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "t1", frozenset(self.t1))
        object.__setattr__(self, "t2", frozenset(self.t2))

    def capacity(self) -> float:
        return float("inf") if self.q is UNBOUNDED else float(self.q)


@dataclass(frozen=True)
class ContingentGroup:
    ref: str
    members: frozenset
    owner: str
    rigid: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", frozenset(self.members))


@dataclass(frozen=True)
class ConfigurationSummary:
    """What a joiner knows about a configuration when choosing its type."""

    node_count: int = 0
    type_counts: Mapping[str, int] = field(default_factory=dict)

    @classmethod
    def of(cls, members: Mapping[str, str]) -> "ConfigurationSummary":
        counts: dict = {}
        for t in members.values():
            counts[t] = counts.get(t, 0) + 1
        return cls(len(members), counts)


ContextRule = Callable[[ConfigurationSummary], str]


@dataclass(frozen=True)
class NodeTypeSelectionPolicy:
    initial: str
    join_default: str
    context_rule: Optional[ContextRule] = None
    # name under which ``context_rule`` is registered, for JSON round trips
    rule_name: Optional[str] = None


@dataclass(frozen=True)
class TopologySpec:
    name: str
    node_types: tuple
    connection_types: tuple
    connections: tuple
    selection_policy: NodeTypeSelectionPolicy
    wiring: Mapping[str, str] = field(default_factory=dict)
    contingent_groups: tuple = ()
    locator: Optional[object] = None
    type_change_map: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "node_types", tuple(self.node_types))
        object.__setattr__(self, "connection_types", tuple(self.connection_types))
        object.__setattr__(self, "connections", tuple(self.connections))
        object.__setattr__(self, "contingent_groups", tuple(self.contingent_groups))
        object.__setattr__(self, "wiring", dict(self.wiring))
        object.__setattr__(self, "type_change_map", dict(self.type_change_map))
        object.__setattr__(self, "_by_name", {c.name: c for c in self.connections})
        object.__setattr__(self, "_groups", {g.ref: g for g in self.contingent_groups})

    # frozen dataclasses hash every field; dict fields make that impossible
    __hash__ = object.__hash__

    def type_names(self) -> list:
        return [t.name for t in self.node_types]

    def connection(self, name: Union[str, TopologyConnection]) -> TopologyConnection:
        if isinstance(name, TopologyConnection):
            name = name.name
        try:
            return self._by_name[name]
        except KeyError:
            raise TopologyError(f"unknown connection {name!r} in {self.name}") from None

    def has_connection(self, name: str) -> bool:
        return name in self._by_name

    def group(self, ref: str) -> ContingentGroup:
        try:
            return self._groups[ref]
        except KeyError:
            raise TopologyError(f"unknown contingent group {ref!r}") from None

    def group_of(self, name: Union[str, TopologyConnection]) -> Optional[ContingentGroup]:
        """The contingent group listing ``name`` as a member, if any."""
        cname = name.name if isinstance(name, TopologyConnection) else name
        for g in self.contingent_groups:
            if cname in g.members:
                return g
        return None

    def connections_for(self, node_type: str) -> list:
        """Templates usable by a node of ``node_type``, in declaration order."""
        self._require_type(node_type)
        return [c for c in self.connections if node_type in c.t1]

    def group_members(self, group: ContingentGroup) -> list:
        """Members of ``group`` in spec declaration order."""
        return [c for c in self.connections if c.name in group.members]

    def _require_type(self, node_type: str) -> None:
        if node_type not in self.type_names():
            raise TopologyError(f"unknown node type {node_type!r} in {self.name}")


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    detail: str = ""

    def __str__(self) -> str:
        text = f"{self.kind}: {self.subject}"
        return f"{text} ({self.detail})" if self.detail else text


def required_connections(spec: TopologySpec, t: Union[str, NodeType]) -> frozenset:
    name = t.name if isinstance(t, NodeType) else t
    return frozenset(c for c in spec.connections_for(name) if c.f)


def optional_connections(spec: TopologySpec, t: Union[str, NodeType]) -> frozenset:
    name = t.name if isinstance(t, NodeType) else t
    return frozenset(c for c in spec.connections_for(name) if not c.f)


def reciprocal(spec: TopologySpec, c: Union[str, TopologyConnection]) -> TopologyConnection:
    conn = spec.connection(c)
    try:
        return spec.connection(spec.wiring[conn.name])
    except KeyError:
        raise TopologyError(f"no reciprocal wired for {conn.name!r}") from None


def classify(spec: TopologySpec) -> Structure:
    if not spec.contingent_groups:
        return Structure.UNSTRUCTURED
    if any(g.rigid for g in spec.contingent_groups):
        return Structure.RIGIDLY_STRUCTURED
    return Structure.STRUCTURED


def select_node_type(spec: TopologySpec, summary: ConfigurationSummary) -> str:
    policy = spec.selection_policy
    if summary.node_count == 0:
        return policy.initial
    if policy.context_rule is not None:
        return policy.context_rule(summary)
    return policy.join_default


def _dupes(names: Iterable[str]) -> list:
    seen, out = set(), []
    for n in names:
        if n in seen and n not in out:
            out.append(n)
        seen.add(n)
    return out


def validate(spec: TopologySpec) -> list:
    """Return every structural problem with ``spec``; empty means valid."""
    out: list = []
    types = set(spec.type_names())
    for n in spec.type_names():
        if not n:
            out.append(Violation("empty node type name", repr(n)))
    for n in _dupes(spec.type_names()):
        out.append(Violation("duplicate node type", n))
    for n in _dupes(ct.name for ct in spec.connection_types):
        out.append(Violation("duplicate connection type", n))
    for n in _dupes(c.name for c in spec.connections):
        out.append(Violation("duplicate connection", n))

    ctypes = {ct.name for ct in spec.connection_types}
    directions = set()
    if spec.locator is not None:
        directions = set(getattr(spec.locator, "direction_map", {}))

    for c in spec.connections:
        for side, mask in (("t1", c.t1), ("t2", c.t2)):
            if not mask:
                out.append(Violation("empty mask", c.name, side))
            for t in sorted(mask - types):
                out.append(Violation("unresolved mask", c.name, f"{side} names {t!r}"))
        if c.o not in ctypes:
            out.append(Violation("unknown connection type", c.name, c.o))
        if c.q is not UNBOUNDED and (not isinstance(c.q, int) or isinstance(c.q, bool) or c.q < 1):
            out.append(Violation("bad multiplicity", c.name, repr(c.q)))
        if c.d is not None:
            if spec.locator is None:
                out.append(Violation("direction without locator", c.name, c.d))
            elif c.d not in directions:
                out.append(Violation("unknown direction", c.name, c.d))
        if c.r is not None and c.r not in {g.ref for g in spec.contingent_groups}:
            out.append(Violation("unknown group reference", c.name, c.r))

    # reciprocal wiring: report a missing entry once, on the connection lacking it
    for c in spec.connections:
        if c.name not in spec.wiring:
            out.append(Violation("missing reciprocal", c.name))
            continue
        other = spec.wiring[c.name]
        if not spec.has_connection(other):
            out.append(Violation("missing reciprocal", c.name, f"wired to undeclared {other!r}"))
            continue
        if other in spec.wiring and spec.wiring[other] != c.name:
            out.append(Violation("non-involutive wiring", c.name,
                                 f"{c.name} -> {other} -> {spec.wiring[other]}"))
            continue
        rc = spec.connection(other)
        if c.t2 != rc.t1 or c.t1 != rc.t2:
            out.append(Violation("reciprocal mask mismatch", c.name, other))
    for k in sorted(set(spec.wiring) - {c.name for c in spec.connections}):
        out.append(Violation("wiring names undeclared connection", k))

    for g in spec.contingent_groups:
        unknown = sorted(m for m in g.members if not spec.has_connection(m))
        for m in unknown:
            out.append(Violation("unknown group member", g.ref, m))
        members = [spec.connection(m) for m in sorted(g.members) if spec.has_connection(m)]
        if g.owner not in types:
            out.append(Violation("unresolved mask", g.ref, f"owner {g.owner!r}"))
        if len({m.f for m in members}) > 1:
            out.append(Violation("mixed contingent group", g.ref))
        for m in members:
            if g.owner not in m.t1:
                out.append(Violation("group owner mismatch", g.ref, m.name))
            if m.r != g.ref:
                out.append(Violation("group reference mismatch", m.name,
                                     f"r={m.r!r}, listed in {g.ref!r}"))
        if g.rigid and any(m.d is None for m in members):
            out.append(Violation("rigid group without directions", g.ref))
    for c in spec.connections:
        if c.r is not None and c.r in {g.ref for g in spec.contingent_groups}:
            if c.name not in spec.group(c.r).members:
                out.append(Violation("group reference mismatch", c.name,
                                     f"r={c.r!r} but not a member"))

    def _req(t: str) -> list:
        return [c for c in spec.connections if t in c.t1 and c.f]

    if not any(not _req(t) for t in types):
        out.append(Violation("no seed node type", spec.name, "every type has required connections"))
    policy = spec.selection_policy
    for label, t in (("initial", policy.initial), ("join_default", policy.join_default)):
        if t not in types:
            out.append(Violation("unknown policy node type", label, repr(t)))
    if policy.initial in types and _req(policy.initial):
        out.append(Violation("initial type has required connections", policy.initial))
    for a, b in spec.type_change_map.items():
        if a not in types or b not in types:
            out.append(Violation("unknown type in change map", f"{a}->{b}"))
    return out
