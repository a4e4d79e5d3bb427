"""In-process swarm: containers, IDAs and a tick-driven event loop over one transport."""
from __future__ import annotations

import logging
from typing import Callable, Iterable, Mapping, Optional

from .configuration import (
    Configuration,
    RankingPolicy,
    handle_failure,
    node_key,
    verify,
)
from .runtime import (
    Container,
    IdaContext,
    IdaRecord,
    JoinSettings,
    Nodeletset,
    Phase,
)
from .topology import TopologySpec, validate
from .trace import Trace
from .transport import Advertisement, BaseTransport, SimParams, SimTransport

log = logging.getLogger(__name__)

__all__ = ["Swarm", "SwarmError"]


class SwarmError(Exception):
    pass


class Swarm:
    """Nodes, IDAs and a shared clock.

    Each IDA has one configuration object shared by every container; it
    stands in for the configuration knowledge that peers would otherwise
    piece together from advertisements and command sequences.
    """

    def __init__(self, params: Optional[SimParams] = None, transport: Optional[BaseTransport] = None,
                 seed: Optional[int] = None, tick_ms: float = 10.0):
        self.params = params or SimParams(seed=seed or 0)
        self.transport = transport or SimTransport(self.params)
        self.seed = self.params.seed if seed is None else seed
        self.tick_ms = tick_ms
        self.trace = Trace()
        self.records: dict = {}
        self.containers: dict = {}
        self.crashed: set = set()
        self.observers: list = []
        self.clock = self.transport.now

    # -- setup ------------------------------------------------------------------
    def add_ida(self, name: str, spec: TopologySpec, nodeletset: Nodeletset,
                attributes: Optional[Mapping[str, str]] = None,
                policy: Optional[RankingPolicy] = None,
                particulars: Optional[Mapping] = None,
                failure_policy: str = "freeze",
                settings: Optional[JoinSettings] = None,
                damage_threshold: Optional[int] = None) -> IdaRecord:
        problems = validate(spec)
        if problems:
            raise SwarmError(f"invalid spec {spec.name}: " + "; ".join(map(str, problems)))
        if name in self.records:
            raise SwarmError(f"IDA {name} already exists")
        attrs = {"topology": spec.name}
        attrs.update(attributes or {})
        adv = Advertisement("ida", name, f"ida:{name}", attrs, spec.name)
        rec = IdaRecord(adv, spec, nodeletset, Configuration(name, spec, damage_threshold),
                        policy=policy or RankingPolicy(), particulars=dict(particulars or {}),
                        failure_policy=failure_policy, settings=settings or JoinSettings())
        self.records[name] = rec
        for c in self.containers.values():
            c.register(adv, spec, nodeletset)
        return rec

    def add_node(self, node: str) -> Container:
        if node in self.containers:
            return self.containers[node]
        c = Container(node, self.transport, self.trace, self.records, self.seed)
        for rec in self.records.values():
            c.register(rec.adv, rec.spec, rec.nodeletset)
        self.containers[node] = c
        return c

    def record(self, ida: str) -> IdaRecord:
        try:
            return self.records[ida]
        except KeyError:
            raise SwarmError(f"unknown IDA {ida!r}") from None

    def cfg(self, ida: str) -> Configuration:
        return self.record(ida).cfg

    def container(self, node: str) -> Container:
        try:
            return self.containers[node]
        except KeyError:
            raise SwarmError(f"unknown node {node!r}") from None

    def context(self, node: str, ida: str) -> IdaContext:
        return self.container(node).context(ida)

    # -- actions --------------------------------------------------------------------
    def join(self, node: str, ida: str) -> IdaContext:
        if node in self.crashed:
            raise SwarmError(f"{node} has crashed")
        self.record(ida)
        return self.add_node(node).participate(ida)

    def leave(self, node: str, ida: Optional[str] = None) -> None:
        c = self.container(node)
        for name in ([ida] if ida else sorted(c.contexts)):
            c.withdraw(name)

    def fail(self, node: str) -> dict:
        """Crash ``node``: its transport endpoint dies and every IDA repairs around it."""
        c = self.container(node)
        self.transport.kill(node)
        self.crashed.add(node)
        now = self.transport.now
        reports = {}
        for ida in sorted(self.records):
            rec = self.records[ida]
            rec.reservations.release_joiner(node)
            rec.reservations.drop_node(node)
            if node not in rec.cfg.members:
                continue
            report = handle_failure(node, rec.cfg, rec.failure_policy)
            reports[ida] = report
            self.trace.emit(now, ida, "failed", node, policy=rec.failure_policy,
                            released=len(report.released), damaged=report.damaged,
                            ida_failed=report.ida_failed)
            for p in report.promoted:
                self.trace.emit(now, ida, "promoted", p, node_type=rec.cfg.members[p], replaces=node)
            for f in report.frozen:
                self.trace.emit(now, ida, "frozen", f, cascade=f in report.cascade)
        for ctx in c.contexts.values():
            ctx.phase = Phase.FAILED
        c.contexts.clear()
        return reports

    def at(self, t: float, fn: Callable[[], None]) -> None:
        self.transport.schedule(t, fn)

    # -- running ----------------------------------------------------------------------
    def live_containers(self) -> list:
        return [self.containers[n] for n in sorted(self.containers, key=node_key)
                if n not in self.crashed]

    def run(self, until: float) -> None:
        """Advance in ticks; transport events due by a tick precede its dispatch."""
        while self.clock < until:
            nxt = min(self.clock + self.tick_ms, until)
            self.transport.step(nxt)
            self.clock = nxt
            for c in self.live_containers():
                c.dispatch_all()
            for fn in self.observers:
                fn(self)

    def run_for(self, duration: float) -> None:
        self.run(self.clock + duration)

    def settle(self, limit: float = 60_000.0, quiet: Optional[Callable[["Swarm"], bool]] = None) -> bool:
        """Run until nothing is joining or in flight (and ``quiet`` holds); False on timeout."""
        end = self.clock + limit
        while self.clock < end:
            joining = any(ctx.phase is Phase.JOINING
                          for c in self.live_containers() for ctx in c.contexts.values())
            if not joining and self.transport.idle() and (quiet is None or quiet(self)):
                return True
            self.run_for(self.tick_ms)
        return False

    # -- inspection -----------------------------------------------------------------------
    def verify(self, ida: str) -> list:
        return verify(self.cfg(ida))

    def join_metrics(self, ida: str) -> list:
        out = []
        for n in sorted(self.containers, key=node_key):
            for ctx in self.containers[n].history:
                if ctx.ida != ida:
                    continue
                lat = None
                if ctx.join.finished_at is not None:
                    lat = ctx.join.finished_at - ctx.join.started_at
                out.append({"node": n, "messages": ctx.join.messages, "latency_ms": lat,
                            "attempts": ctx.join.attempts, "phase": ctx.phase.value})
        return out
