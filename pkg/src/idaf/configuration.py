"""Live configurations: bootstrap, join, leave, failure repair and verification.

A configuration records one ``LiveConnection`` per edge, from the point of
view of the node that initiated it; the reciprocal perspective is derived
through the topology spec's wiring.  Planning works from a read-only view so the same
code serves direct library use and the simulated swarm.
"""
from __future__ import annotations

import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Protocol, Union

import networkx as nx

from .locator import contingent_address, resolve
from .topology import (
    UNBOUNDED,
    ConfigurationSummary,
    TopologyConnection,
    TopologyError,
    TopologySpec,
    Violation,
    reciprocal,
    required_connections,
    select_node_type,
    validate,
)

__all__ = [
    "LiveConnection",
    "NodeParticulars",
    "RankingPolicy",
    "JoinPlan",
    "JoinFailure",
    "RepairReport",
    "Configuration",
    "ConfigurationError",
    "CapacityError",
    "RolledBack",
    "ReservationTable",
    "SnapshotView",
    "node_key",
    "bootstrap",
    "plan_join",
    "commit_join",
    "revalidate",
    "leave",
    "handle_failure",
    "verify",
    "to_graph",
    "to_dot",
]


def node_key(node: str) -> tuple:
    """Natural sort key so that ``n2`` orders before ``n10``."""
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", node))


class ConfigurationError(Exception):
    pass


class CapacityError(ConfigurationError):
    """A connection would exceed its template's multiplicity."""


class RolledBack(ConfigurationError):
    def __init__(self, peer: str, reason: str = "reservation missing or expired"):
        super().__init__(f"join rolled back: {peer} refused ({reason})")
        self.peer = peer
        self.reason = reason


@dataclass(frozen=True)
class LiveConnection:
    n1: str
    n2: str
    template: str
    o: str
    d: Optional[str] = None


@dataclass
class NodeParticulars:
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RankingPolicy:
    metrics: Mapping[str, float] = field(default_factory=dict)
    restrictions: Mapping[str, float] = field(default_factory=dict)
    shortlist: int = 5
    # order in which members of a contingent group are tried as the anchor edge
    via_order: tuple = ()

    def __post_init__(self) -> None:
        if self.shortlist < 1:
            raise ValueError("shortlist must be >= 1")

    def score(self, p: Optional[NodeParticulars]) -> float:
        attrs = p.attributes if p is not None else {}
        return float(sum(w * attrs.get(k, 0.0) for k, w in sorted(self.metrics.items())))

    def admits(self, p: Optional[NodeParticulars]) -> bool:
        attrs = p.attributes if p is not None else {}
        return all(attrs.get(k, 0.0) >= v for k, v in self.restrictions.items())


@dataclass(frozen=True)
class JoinPlan:
    joiner: str
    node_type: str
    bindings: Mapping[str, str]
    # each entry is the set of templates bound together (singletons for plain connections)
    units: tuple = ()
    # (group ref, via template, anchor) for every contingent unit
    anchors: tuple = ()
    shortlisted: frozenset = frozenset()
    consulted: frozenset = frozenset()


@dataclass(frozen=True)
class JoinFailure:
    joiner: str
    node_type: str
    connection: str
    reason: str = "no candidate can satisfy a required connection"


@dataclass
class RepairReport:
    node: str
    policy: str
    released: list = field(default_factory=list)
    frozen: list = field(default_factory=list)
    cascade: list = field(default_factory=list)
    promoted: list = field(default_factory=list)
    damaged: list = field(default_factory=list)
    ida_failed: bool = False

    def is_empty(self) -> bool:
        return not (self.frozen or self.promoted or self.damaged or self.ida_failed)


class Configuration:
    """The live connection set of one IDA plus per-node slot accounting."""

    def __init__(self, ida: str, spec: TopologySpec, damage_threshold: Optional[int] = None):
        self.ida = ida
        self.spec = spec
        self.members: dict = {}
        self.connections: set = set()
        self.slot_usage: Counter = Counter()
        self.frozen: set = set()
        self.failed = False
        self.damaged = False
        self.damage_events = 0
        self.damage_threshold = damage_threshold
        self.join_seq: dict = {}
        self.version = 0
        self._next_seq = 0
        self._adj_cache: Optional[tuple] = None

    # -- queries -----------------------------------------------------------
    def summary(self) -> ConfigurationSummary:
        return ConfigurationSummary.of(self.members)

    def perspectives(self, node: str) -> list:
        """``(template, peer)`` pairs describing every edge at ``node``."""
        return list(self._adjacency().get(node, ()))

    def peers(self, node: str, template: str) -> list:
        return sorted((p for t, p in self.perspectives(node) if t == template), key=node_key)

    def usage(self, node: str, template: str) -> int:
        return self.slot_usage.get((node, template), 0)

    def free(self, node: str, template: str) -> float:
        c = self.spec.connection(template)
        return c.capacity() - self.usage(node, template)

    def neighbor(self, node: str, direction: str) -> Optional[str]:
        for t, p in self.perspectives(node):
            if self.spec.has_connection(t) and self.spec.connection(t).d == direction:
                return p
        return None

    def _adjacency(self) -> dict:
        if self._adj_cache is not None and self._adj_cache[0] == self.version:
            return self._adj_cache[1]
        adj: dict = defaultdict(list)
        for lc in sorted(self.connections, key=_lc_key):
            if not self.spec.has_connection(lc.template) or lc.template not in self.spec.wiring:
                continue
            adj[lc.n1].append((lc.template, lc.n2))
            adj[lc.n2].append((self.spec.wiring[lc.template], lc.n1))
        self._adj_cache = (self.version, adj)
        return adj

    # -- mutation primitives -------------------------------------------------
    def add_member(self, node: str, node_type: str) -> None:
        self.members[node] = node_type
        if node not in self.join_seq:
            self.join_seq[node] = self._next_seq
            self._next_seq += 1
        self.version += 1

    def link(self, n1: str, n2: str, template: str) -> LiveConnection:
        c = self.spec.connection(template)
        rc = reciprocal(self.spec, c)
        if self.usage(n1, c.name) + 1 > c.capacity():
            raise CapacityError(f"{n1}: {c.name} q={c.q} exceeded")
        if self.usage(n2, rc.name) + 1 > rc.capacity():
            raise CapacityError(f"{n2}: {rc.name} q={rc.q} exceeded")
        lc = LiveConnection(n1, n2, c.name, c.o, c.d)
        self.connections.add(lc)
        self.slot_usage[(n1, c.name)] += 1
        self.slot_usage[(n2, rc.name)] += 1
        self.version += 1
        return lc

    def unlink(self, lc: LiveConnection) -> None:
        self.connections.discard(lc)
        if self.spec.has_connection(lc.template) and lc.template in self.spec.wiring:
            for key in ((lc.n1, lc.template), (lc.n2, self.spec.wiring[lc.template])):
                self.slot_usage[key] -= 1
                if self.slot_usage[key] <= 0:
                    del self.slot_usage[key]
        self.version += 1

    def inject(self, lc: LiveConnection) -> None:
        """Add a raw connection without any checks or slot accounting (testing aid)."""
        self.connections.add(lc)
        self.version += 1

    def touching(self, node: str) -> list:
        return sorted((lc for lc in self.connections if node in (lc.n1, lc.n2)), key=_lc_key)


def _lc_key(lc: LiveConnection) -> tuple:
    return (node_key(lc.n1), node_key(lc.n2), lc.template)


# -- reservations ---------------------------------------------------------------

@dataclass
class _Lease:
    joiner: str
    expires: float


class ReservationTable:
    """Bounded leases on connection slots held on behalf of in-progress joins."""

    def __init__(self) -> None:
        self._leases: dict = defaultdict(list)

    def _live(self, node: str, template: str, now: float) -> list:
        leases = [l for l in self._leases.get((node, template), ()) if l.expires > now]
        if leases:
            self._leases[(node, template)] = leases
        else:
            self._leases.pop((node, template), None)
        return leases

    def active(self, node: str, template: str, now: float, exclude: Optional[str] = None) -> int:
        return sum(1 for l in self._live(node, template, now) if l.joiner != exclude)

    def reserve(self, cfg: Configuration, node: str, template: str, joiner: str,
                now: float, lease_ms: float) -> bool:
        if node not in cfg.members:
            return False
        leases = self._live(node, template, now)
        mine = [l for l in leases if l.joiner == joiner]
        if mine:
            mine[0].expires = now + lease_ms
            return True
        if cfg.free(node, template) - len(leases) < 1:
            return False
        self._leases[(node, template)].append(_Lease(joiner, now + lease_ms))
        return True

    def holds(self, node: str, template: str, joiner: str, now: float) -> bool:
        return any(l.joiner == joiner for l in self._live(node, template, now))

    def release(self, node: str, template: str, joiner: str) -> bool:
        leases = self._leases.get((node, template), [])
        kept = [l for l in leases if l.joiner != joiner]
        if kept:
            self._leases[(node, template)] = kept
        else:
            self._leases.pop((node, template), None)
        return len(kept) != len(leases)

    def release_joiner(self, joiner: str) -> list:
        out = []
        for key in sorted(self._leases, key=lambda k: (node_key(k[0]), k[1])):
            if self.release(key[0], key[1], joiner):
                out.append(key)
        return out

    def drop_node(self, node: str) -> None:
        for key in [k for k in self._leases if k[0] == node]:
            del self._leases[key]


# -- views ------------------------------------------------------------------------

class ConfigurationView(Protocol):
    def summary(self) -> ConfigurationSummary: ...
    def participants(self) -> list: ...
    def node_type(self, node: str) -> str: ...
    def free(self, node: str, template: str) -> float: ...
    def neighbor(self, node: str, direction: str) -> Optional[str]: ...


class SnapshotView:
    """Read-only view of a configuration, net of other joiners' reservations.

    Records which nodes had their neighbourhood inspected so callers can
    check that planning stayed local.
    """

    def __init__(self, cfg: Configuration, reservations: Optional[ReservationTable] = None,
                 now: float = 0.0, joiner: Optional[str] = None):
        self.cfg = cfg
        self.reservations = reservations
        self.now = now
        self.joiner = joiner
        self.consulted: set = set()

    def summary(self) -> ConfigurationSummary:
        return self.cfg.summary()

    def participants(self) -> list:
        return sorted(self.cfg.members, key=node_key)

    def node_type(self, node: str) -> str:
        return self.cfg.members[node]

    def free(self, node: str, template: str) -> float:
        free = self.cfg.free(node, template)
        if self.reservations is not None:
            free -= self.reservations.active(node, template, self.now, exclude=self.joiner)
        return free

    def neighbor(self, node: str, direction: str) -> Optional[str]:
        self.consulted.add(node)
        return self.cfg.neighbor(node, direction)


# -- operations ------------------------------------------------------------------------

def bootstrap(spec: TopologySpec, first: str, ida: Optional[str] = None,
              damage_threshold: Optional[int] = None) -> Configuration:
    problems = validate(spec)
    if problems:
        raise ConfigurationError(f"invalid spec {spec.name}: " + "; ".join(map(str, problems)))
    cfg = Configuration(ida or spec.name, spec, damage_threshold)
    cfg.add_member(first, spec.selection_policy.initial)
    return cfg


def _units(spec: TopologySpec, node_type: str) -> list:
    """Required then optional units; a contingent group forms one unit."""
    out, seen = [], set()
    conns = spec.connections_for(node_type)
    for flag in (True, False):
        for c in conns:
            if c.f != flag:
                continue
            g = spec.group_of(c)
            if g is None:
                out.append((None, [c]))
            elif g.ref not in seen:
                seen.add(g.ref)
                out.append((g, [m for m in spec.group_members(g) if node_type in m.t1]))
    return out


class _Planner:
    def __init__(self, joiner, spec, view, particulars, policy, node_type):
        self.joiner = joiner
        self.spec = spec
        self.view = view
        self.particulars = particulars or {}
        self.policy = policy
        self.node_type = node_type
        self.used: set = set()
        self.shortlisted: set = set()

    def score(self, node: str) -> float:
        return self.policy.score(self.particulars.get(node))

    def acceptable(self, node: str, c: TopologyConnection) -> bool:
        """Can ``node`` take the far end of ``c`` for this joiner?"""
        if node == self.joiner or node in self.used:
            return False
        if self.view.node_type(node) not in c.t2:
            return False
        if not self.policy.admits(self.particulars.get(node)):
            return False
        return self.view.free(node, self.spec.wiring[c.name]) >= 1

    def shortlist(self, c: TopologyConnection, peers: list) -> list:
        cands = [p for p in peers if self.acceptable(p, c)]
        cands.sort(key=lambda p: (-self.score(p), node_key(p)))
        picked = cands[: self.policy.shortlist]
        self.shortlisted.update(picked)
        return picked

    def closure(self, members: list, via: TopologyConnection, anchor: str) -> Optional[dict]:
        """Bind every contingent member reachable through the locator, or ``None``
        when a resolvable member cannot be bound or the geometry disagrees."""
        loc = self.spec.locator
        bound = {via.name: anchor}
        queue = [via.name]
        while queue:
            u = queue.pop(0)
            for w in members:
                if w.name in bound:
                    continue
                addr = contingent_address(self.spec, u, w.name)
                found = resolve(loc, bound[u], addr.offset, self.view.neighbor)
                if found is None:
                    continue
                if found in bound.values() or not self.acceptable(found, w):
                    return None
                bound[w.name] = found
                queue.append(w.name)
        names = list(bound)
        for u in names:
            for w in names:
                if u == w:
                    continue
                addr = contingent_address(self.spec, u, w)
                found = resolve(loc, bound[u], addr.offset, self.view.neighbor)
                if found is not None and found != bound[w]:
                    return None
        return bound

    def plain_closure(self, members: list, via: TopologyConnection, anchor: str,
                      peers: list) -> Optional[dict]:
        """Non-rigid group: every other member bound to its own best candidate."""
        bound = {via.name: anchor}
        taken = {anchor}
        for w in members:
            if w.name in bound:
                continue
            cands = [p for p in self.shortlist(w, peers) if p not in taken]
            if cands:
                bound[w.name] = cands[0]
                taken.add(cands[0])
        return bound


def plan_join(joiner: str, spec: TopologySpec, view: ConfigurationView,
              particulars: Optional[Mapping[str, NodeParticulars]] = None,
              policy: Optional[RankingPolicy] = None, rng_seed: int = 0,
              node_type: Optional[str] = None) -> Union[JoinPlan, JoinFailure]:
    """Choose a node type and the peers that will satisfy each connection.

    Required units are planned before optional ones; each contingent group is
    planned as one unit around the best anchor.  ``rng_seed`` only orders
    candidates that tie on every ranking criterion after the node id, so the
    result is deterministic for fixed inputs.
    """
    policy = policy or RankingPolicy()
    t = node_type or select_node_type(spec, view.summary())
    peers = [p for p in view.participants() if p != joiner]
    pl = _Planner(joiner, spec, view, particulars, policy, t)
    bindings: dict = {}
    units: list = []
    anchors: list = []
    salt = random.Random(rng_seed).random()

    for group, members in _units(spec, t):
        required = members[0].f
        if group is None:
            c = members[0]
            picked = pl.shortlist(c, peers)
            if not picked:
                if required:
                    return JoinFailure(joiner, t, c.name)
                continue
            bindings[c.name] = picked[0]
            pl.used.add(picked[0])
            units.append((c.name,))
            continue

        order = list(policy.via_order) + [m.name for m in members]
        vias = [m for name in dict.fromkeys(order) for m in members if m.name == name]
        options = []
        for vi, via in enumerate(vias):
            for anchor in pl.shortlist(via, peers):
                if group.rigid and spec.locator is not None:
                    bound = pl.closure(members, via, anchor)
                else:
                    bound = pl.plain_closure(members, via, anchor, peers)
                if bound is None:
                    continue
                if required and len(bound) < len(members):
                    continue
                options.append(((-len(bound), -pl.score(anchor), node_key(anchor), vi, salt),
                                via.name, anchor, bound))
        if not options:
            if required:
                return JoinFailure(joiner, t, members[0].name)
            continue
        options.sort(key=lambda o: o[0])
        _, via_name, anchor, bound = options[0]
        for name in sorted(bound, key=lambda n: [m.name for m in members].index(n)):
            bindings[name] = bound[name]
            pl.used.add(bound[name])
        units.append(tuple(sorted(bound)))
        anchors.append((group.ref, via_name, anchor))

    consulted = frozenset(getattr(view, "consulted", ()))
    return JoinPlan(joiner, t, bindings, tuple(units), tuple(anchors),
                    frozenset(pl.shortlisted), consulted)


def revalidate(plan: JoinPlan, cfg: Configuration,
               reservations: Optional[ReservationTable] = None, now: float = 0.0) -> bool:
    """Whether ``plan`` would still be chosen around the same anchors on ``cfg`` now.

    Used just before committing a plan that was made on an older snapshot:
    peers must still be members and every contingent unit must resolve to
    exactly the planned peers.
    """
    spec = cfg.spec
    if any(p not in cfg.members for p in plan.bindings.values()):
        return False
    view = SnapshotView(cfg, reservations, now, plan.joiner)
    pl = _Planner(plan.joiner, spec, view, None, RankingPolicy(shortlist=1), plan.node_type)
    for ref, via, anchor in plan.anchors:
        group = spec.group(ref)
        if not (group.rigid and spec.locator is not None):
            continue
        members = [m for m in spec.group_members(group) if plan.node_type in m.t1]
        bound = pl.closure(members, spec.connection(via), anchor)
        planned = {m.name: plan.bindings[m.name] for m in members if m.name in plan.bindings}
        if bound != planned:
            return False
    return True


def commit_join(plan: JoinPlan, cfg: Configuration,
                reservations: Optional[ReservationTable] = None, now: float = 0.0) -> Configuration:
    """Apply every binding of ``plan`` or none of them.

    With a reservation table, each bound peer must hold a live lease for the
    joiner on its reciprocal slot; the leases are consumed on success.
    """
    spec = cfg.spec
    if plan.joiner in cfg.members and cfg.members[plan.joiner] != plan.node_type:
        raise ConfigurationError(f"{plan.joiner} already joined as {cfg.members[plan.joiner]}")
    for name, peer in sorted(plan.bindings.items()):
        rc = spec.wiring[name]
        if peer not in cfg.members:
            raise RolledBack(peer, "not a member")
        if reservations is not None and not reservations.holds(peer, rc, plan.joiner, now):
            raise RolledBack(peer)
    # capacity is checked up front so that a failure leaves nothing behind
    need: Counter = Counter()
    for name, peer in plan.bindings.items():
        need[(plan.joiner, name)] += 1
        need[(peer, spec.wiring[name])] += 1
    for (node, template), k in sorted(need.items()):
        c = spec.connection(template)
        if cfg.usage(node, template) + k > c.capacity():
            raise CapacityError(f"{node}: {template} q={c.q} exceeded")

    cfg.add_member(plan.joiner, plan.node_type)
    for name, peer in sorted(plan.bindings.items()):
        cfg.link(plan.joiner, peer, name)
        if reservations is not None:
            reservations.release(peer, spec.wiring[name], plan.joiner)
    _thaw(cfg)
    return cfg


def _remove_node(node: str, cfg: Configuration) -> list:
    if node not in cfg.members:
        raise ConfigurationError(f"unknown node {node!r}")
    released = cfg.touching(node)
    for lc in released:
        cfg.unlink(lc)
    del cfg.members[node]
    cfg.frozen.discard(node)
    cfg.version += 1
    return released


def leave(node: str, cfg: Configuration) -> Configuration:
    _remove_node(node, cfg)
    return cfg


def _unsatisfied(cfg: Configuration, node: str, blocked: set) -> bool:
    """Some required connection of ``node`` has no live peer outside ``blocked``."""
    for c in required_connections(cfg.spec, cfg.members[node]):
        if not [p for p in cfg.peers(node, c.name) if p not in blocked]:
            return True
    return False


def _frozen_closure(cfg: Configuration) -> set:
    frozen: set = set()
    changed = True
    while changed:
        changed = False
        for n in sorted(cfg.members, key=node_key):
            if n not in frozen and _unsatisfied(cfg, n, frozen):
                frozen.add(n)
                changed = True
    return frozen


def _thaw(cfg: Configuration) -> None:
    if cfg.frozen:
        cfg.frozen &= _frozen_closure(cfg)
    if cfg.failed and cfg.members and len(cfg.frozen) < len(cfg.members):
        cfg.failed = False


def _dependents(cfg: Configuration, node: str) -> list:
    """Nodes with a required connection satisfied by ``node``."""
    out = []
    for t, p in cfg.perspectives(node):
        rt = cfg.spec.wiring[t]
        if cfg.spec.connection(rt).f:
            out.append(p)
    return out


def handle_failure(node: str, cfg: Configuration, policy: str = "freeze") -> RepairReport:
    """Remove a crashed node and repair or freeze whatever depended on it."""
    if policy not in ("freeze", "promote"):
        raise ValueError(f"unknown failure policy {policy!r}")
    spec = cfg.spec
    if node not in cfg.members:
        raise ConfigurationError(f"unknown node {node!r}")
    dead_type = cfg.members[node]
    report = RepairReport(node, policy)
    lost = [(lc, lc.n2 if lc.n1 == node else lc.n1) for lc in cfg.touching(node)]
    report.released = [lc for lc, _ in lost]
    _remove_node(node, cfg)

    damaged = set()
    for lc, peer in lost:
        template = lc.template if lc.n1 == peer else spec.wiring.get(lc.template)
        if template and spec.has_connection(template) and spec.group_of(template) is not None:
            damaged.add(peer)
    if damaged:
        cfg.damaged = True
        cfg.damage_events += 1
        report.damaged = sorted(damaged, key=node_key)

    before = set(cfg.frozen)
    direct = {n for n in cfg.members if n not in before and _unsatisfied(cfg, n, set())}

    if policy == "promote" and direct:
        target = dead_type
        cands = [n for n in sorted(cfg.members, key=node_key)
                 if n not in before and not _dependents(cfg, n)
                 and spec.type_change_map.get(cfg.members[n]) == target]
        if cands:
            cand = cands[0]
            for lc in cfg.touching(cand):
                cfg.unlink(lc)
            cfg.members[cand] = target
            cfg.version += 1
            for lc, peer in lost:
                if peer == cand or peer not in cfg.members:
                    continue
                template = lc.template if lc.n1 == node else spec.wiring[lc.template]
                c = spec.connection(template)
                if target in c.t1 and cfg.members[peer] in c.t2:
                    try:
                        cfg.link(cand, peer, template)
                    except CapacityError:
                        continue
            report.promoted = [cand]
            direct = {n for n in cfg.members if n not in before and _unsatisfied(cfg, n, set())}

    closure = _frozen_closure(cfg)
    cfg.frozen |= closure
    newly = sorted(cfg.frozen - before, key=node_key)
    report.frozen = newly
    report.cascade = [n for n in newly if n not in direct]
    if cfg.members and cfg.frozen >= set(cfg.members):
        cfg.failed = True
    if cfg.damage_threshold is not None and cfg.damage_events >= cfg.damage_threshold:
        cfg.failed = True
    report.ida_failed = cfg.failed
    return report


# -- verification ------------------------------------------------------------------

def _instantiates(spec: TopologySpec, members: Mapping[str, str], lc: LiveConnection) -> bool:
    if lc.n1 == lc.n2 or lc.n1 not in members or lc.n2 not in members:
        return False
    if not spec.has_connection(lc.template) or lc.template not in spec.wiring:
        return False
    c = spec.connection(lc.template)
    return (members[lc.n1] in c.t1 and members[lc.n2] in c.t2
            and lc.o == c.o and lc.d == c.d)


class _RestrictedView:
    """Neighbour lookups over the sub-configuration of nodes older than a given one."""

    def __init__(self, cfg: Configuration, before: int):
        self.cfg = cfg
        self.before = before

    def __call__(self, node: str, direction: str) -> Optional[str]:
        for t, p in self.cfg.perspectives(node):
            if self.cfg.join_seq.get(p, 1 << 60) >= self.before:
                continue
            if self.cfg.spec.connection(t).d == direction:
                return p
        return None


def verify(cfg: Configuration) -> list:
    """Structural legality of ``cfg`` against its spec; empty means legal."""
    spec = cfg.spec
    out: list = []
    types = set(spec.type_names())
    for n, t in sorted(cfg.members.items(), key=lambda kv: node_key(kv[0])):
        if t not in types:
            out.append(Violation("unknown node type", n, t))

    counts: Counter = Counter()
    for lc in sorted(cfg.connections, key=_lc_key):
        if lc.n1 == lc.n2:
            out.append(Violation("self loop", lc.n1, lc.template))
            continue
        if not _instantiates(spec, cfg.members, lc):
            out.append(Violation("no matching template", f"{lc.n1}->{lc.n2}", lc.template))
            continue
        counts[(lc.n1, lc.template)] += 1
        counts[(lc.n2, spec.wiring[lc.template])] += 1

    for (n, t), k in sorted(counts.items(), key=lambda kv: (node_key(kv[0][0]), kv[0][1])):
        c = spec.connection(t)
        if k > c.capacity():
            out.append(Violation("multiplicity exceeded", n, f"{t}: {k} > {c.q}"))
    usage = {k: v for k, v in cfg.slot_usage.items() if v}
    if usage != dict(counts):
        out.append(Violation("slot accounting drift", cfg.ida))

    for n in sorted(cfg.frozen - set(cfg.members), key=node_key):
        out.append(Violation("frozen non-member", n))
    for n in sorted(cfg.members, key=node_key):
        if n in cfg.frozen or cfg.members[n] not in types:
            continue
        for c in sorted(required_connections(spec, cfg.members[n]), key=lambda c: c.name):
            if counts[(n, c.name)] < 1:
                out.append(Violation("unsatisfied required", n, c.name))

    if spec.locator is not None:
        out.extend(_verify_rigid(cfg))
    return out


def _verify_rigid(cfg: Configuration) -> list:
    spec = cfg.spec
    loc = spec.locator
    out = []
    for n in sorted(cfg.members, key=node_key):
        t = cfg.members[n]
        if t not in spec.type_names():
            continue
        own = {}
        for lc in cfg.connections:
            if lc.n1 == n and _instantiates(spec, cfg.members, lc):
                own.setdefault(lc.template, []).append(lc.n2)
        for g in spec.contingent_groups:
            if not g.rigid or t != g.owner:
                continue
            members = [m.name for m in spec.group_members(g)]
            bound = {m: own[m][0] for m in members if m in own}
            if not bound:
                continue
            if len(set(bound.values())) < len(bound):
                out.append(Violation("contingent peer reused", n, g.ref))
                continue
            view = _RestrictedView(cfg, cfg.join_seq.get(n, 0))
            for v in bound:
                for w in members:
                    if w == v:
                        continue
                    addr = contingent_address(spec, v, w)
                    found = resolve(loc, bound[v], addr.offset, view, avoid=(n,))
                    if w not in bound:
                        if found is not None:
                            out.append(Violation("incomplete contingent group", n,
                                                 f"{w} resolvable to {found} via {v}"))
                    elif found is not None and found != bound[w]:
                        out.append(Violation("geometric inconsistency", n,
                                             f"{v}->{w} reaches {found}, bound {bound[w]}"))
    return out


# -- export --------------------------------------------------------------------------

def to_graph(cfg: Configuration) -> nx.Graph:
    g = nx.Graph(ida=cfg.ida, topology=cfg.spec.name)
    for n in sorted(cfg.members, key=node_key):
        g.add_node(n, node_type=cfg.members[n], frozen=n in cfg.frozen)
    for lc in sorted(cfg.connections, key=_lc_key):
        g.add_edge(lc.n1, lc.n2, template=lc.template, direction=lc.d)
    return g


def to_dot(g: nx.Graph) -> str:
    def q(s: object) -> str:
        return '"' + str(s).replace('"', '\\"') + '"'

    lines = [f"graph {q(g.graph.get('ida', 'configuration'))} {{"]
    for n, data in g.nodes(data=True):
        label = f"{n} ({data.get('node_type')})"
        attrs = [f"label={q(label)}"]
        if data.get("frozen"):
            attrs.append('style="dashed"')
            attrs.append('frozen="true"')
        lines.append(f"  {q(n)} [{', '.join(attrs)}];")
    for a, b, data in g.edges(data=True):
        lines.append(f"  {q(a)} -- {q(b)} [label={q(data.get('template', ''))}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
