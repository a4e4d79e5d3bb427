"""Application layer: nodelets, ports, per-IDA contexts and the node container.

Each node runs one ``Container``.  Participating in an IDA creates an
``IdaContext`` whose ``Stabiliser`` drives the join process over transport
command sequences (reserve every planned peer slot, commit, or release and
retry).  Once joined, the context's nodelet is driven by ``dispatch``: queued
port traffic is delivered through ``on_message``, outgoing payloads are
flushed, then ``on_tick`` fires.
"""
from __future__ import annotations

import enum
import logging
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .configuration import (
    CapacityError,
    Configuration,
    JoinFailure,
    RankingPolicy,
    ReservationTable,
    RolledBack,
    SnapshotView,
    commit_join,
    leave,
    node_key,
    plan_join,
    revalidate,
)
from .topology import TopologySpec, select_node_type
from .trace import Trace
from .transport import (
    Advertisement,
    BaseTransport,
    Request,
    TicketState,
    port_channel,
)

log = logging.getLogger(__name__)

__all__ = [
    "Phase",
    "Nodelet",
    "Nodeletset",
    "Port",
    "PortClosed",
    "CoverageError",
    "RuntimeErrorIDA",
    "IdaRecord",
    "IdaContext",
    "Stabiliser",
    "Container",
    "JoinSettings",
]


class PortClosed(Exception):
    pass


class CoverageError(ValueError):
    pass


class RuntimeErrorIDA(Exception):
    """Misuse of the container API (duplicate participation, unknown context)."""


class Phase(str, enum.Enum):
    JOINING = "joining"
    RUNNING = "running"
    FROZEN = "frozen"
    FAILED = "failed"
    WITHDRAWN = "withdrawn"


class Nodelet:
    """Per-NodeType application behaviour.

    Subclasses override the hooks they need.  ``dump_state`` and
    ``restore_state`` are optional; when both exist a NodeType change carries
    state across the restart.
    """

    codec = None

    def __init__(self) -> None:
        self.incoming: deque = deque()
        self.outgoing: deque = deque()
        self.ports: dict = {}
        self.context: Optional["IdaContext"] = None

    def on_start(self, ports: Mapping) -> None:
        pass

    def on_message(self, port: "Port", payload) -> None:
        port._buffer.append(payload)

    def on_tick(self, now: float) -> None:
        pass

    def on_stop(self) -> None:
        pass

    def on_ports_changed(self, ports: Mapping) -> None:
        pass

    def emit(self, port: "Port", payload) -> None:
        self.outgoing.append((port, payload))

    def sorted_ports(self, template: Optional[str] = None) -> list:
        ps = [p for p in self.ports.values() if template is None or p.template == template]
        return sorted(ps, key=lambda p: (p.template, node_key(p.remote)))


class Nodeletset:
    """NodeType name to nodelet factory; must cover every type of a topology."""

    def __init__(self, factories: Mapping[str, Callable[[], Nodelet]]):
        self.factories = dict(factories)

    def missing(self, spec: TopologySpec) -> list:
        return [t for t in spec.type_names() if t not in self.factories]

    def extra(self, spec: TopologySpec) -> list:
        return sorted(set(self.factories) - set(spec.type_names()))

    def create(self, node_type: str) -> Nodelet:
        return self.factories[node_type]()


class Port:
    """Handle onto one satisfied connection."""

    def __init__(self, ctx: "IdaContext", remote: str, remote_type: str, template: str):
        self.ctx = ctx
        self.remote = remote
        self.remote_type = remote_type
        self.template = template
        self.closed = False
        self._buffer: deque = deque()

    @property
    def key(self) -> tuple:
        return (self.template, self.remote)

    def alive(self) -> bool:
        cfg = self.ctx.cfg
        return (not self.closed and self.ctx.node in cfg.members
                and self.remote in cfg.peers(self.ctx.node, self.template))

    def send(self, payload) -> None:
        if self.ctx.phase is not Phase.RUNNING or self.ctx.node in self.ctx.cfg.frozen:
            raise PortClosed(f"{self.ctx.node} is not running ({self.ctx.phase.value})")
        if not self.alive():
            raise PortClosed(f"{self.template} to {self.remote} is no longer connected")
        codec = self.ctx.nodelet.codec if self.ctx.nodelet else None
        body = codec.encode(payload) if codec else payload
        channel = port_channel(self.ctx.spec.wiring[self.template])
        self.ctx.transport.post(self.ctx.node, self.remote, channel, body, self.ctx.ida)
        self.ctx.sent += 1

    def try_receive(self):
        return self._buffer.popleft() if self._buffer else None

    def __repr__(self) -> str:
        return f"Port({self.template}->{self.remote})"


@dataclass
class JoinSettings:
    lease_ms: float = 2000.0
    max_retries: int = 8
    backoff_ms: tuple = (20, 120)


@dataclass
class IdaRecord:
    """Shared state of one IDA inside a swarm."""

    adv: Advertisement
    spec: TopologySpec
    nodeletset: Nodeletset
    cfg: Configuration
    reservations: ReservationTable = field(default_factory=ReservationTable)
    policy: RankingPolicy = field(default_factory=RankingPolicy)
    particulars: dict = field(default_factory=dict)
    failure_policy: str = "freeze"
    settings: JoinSettings = field(default_factory=JoinSettings)


@dataclass
class JoinStats:
    started_at: float = 0.0
    finished_at: Optional[float] = None
    messages: int = 0
    attempts: int = 0


class IdaContext:
    def __init__(self, container: "Container", record: IdaRecord, seed: int):
        self.container = container
        self.record = record
        self.node = container.node
        self.ida = record.adv.name
        self.phase = Phase.JOINING
        self.nodelet: Optional[Nodelet] = None
        self.node_type: Optional[str] = None
        self.ports: dict = {}
        self.severed: list = []
        self.error: Optional[str] = None
        self.sent = 0
        self.rng = random.Random(f"{seed}:{self.node}:{self.ida}")
        self.join = JoinStats()
        self.stabiliser = Stabiliser(self)

    @property
    def cfg(self) -> Configuration:
        return self.record.cfg

    @property
    def spec(self) -> TopologySpec:
        return self.record.spec

    @property
    def transport(self) -> BaseTransport:
        return self.container.transport

    @property
    def trace(self) -> Trace:
        return self.container.trace

    @property
    def attributes(self) -> Mapping[str, str]:
        return self.record.adv.attributes

    def _start_nodelet(self, state: Optional[bytes] = None) -> None:
        self.node_type = self.cfg.members[self.node]
        self.nodelet = self.record.nodeletset.create(self.node_type)
        self.nodelet.context = self
        if state is not None and hasattr(self.nodelet, "restore_state"):
            self.nodelet.restore_state(state)
        self._sync_ports(notify=False)
        self._guard(self.nodelet.on_start, self.nodelet.ports)

    def _joined(self) -> None:
        self.join.finished_at = self.transport.now
        self.phase = Phase.RUNNING
        self._start_nodelet()

    def _guard(self, fn, *args) -> bool:
        if self.phase in (Phase.FAILED, Phase.WITHDRAWN):
            return False
        try:
            fn(*args)
            return True
        except Exception as e:
            log.exception("nodelet on %s failed in %s", self.node, self.ida)
            self.error = repr(e)
            self.phase = Phase.FAILED
            self.trace.emit(self.transport.now, self.ida, "failed", self.node,
                            reason="nodelet error", error=self.error)
            return False

    def _sync_ports(self, notify: bool = True) -> None:
        cfg = self.cfg
        live = {}
        for t, p in cfg.perspectives(self.node):
            key = (t, p)
            port = self.ports.get(key)
            if port is None:
                port = Port(self, p, cfg.members[p], t)
            live[key] = port
        changed = set(live) != set(self.ports)
        for key, port in self.ports.items():
            if key not in live:
                port.closed = True
                self.severed.append(key)
        self.ports = live
        if self.nodelet is not None:
            self.nodelet.ports = dict(sorted(live.items(), key=lambda kv: (kv[0][0], node_key(kv[0][1]))))
            if changed and notify:
                self._guard(self.nodelet.on_ports_changed, self.nodelet.ports)

    def sync(self) -> None:
        """Bring phase, ports and nodelet type in line with the configuration."""
        if self.phase not in (Phase.RUNNING, Phase.FROZEN):
            return
        cfg = self.cfg
        if self.node not in cfg.members:
            self.phase = Phase.FAILED
            return
        new_type = cfg.members[self.node]
        if new_type != self.node_type and self.nodelet is not None:
            old = self.nodelet
            state = None
            if hasattr(old, "dump_state") and hasattr(old, "restore_state"):
                state = old.dump_state()
            self._guard(old.on_stop)
            if self.phase is Phase.FAILED:
                return
            self.ports = {}
            self._start_nodelet(state)
        self._sync_ports()
        if self.node in cfg.frozen:
            self.phase = Phase.FROZEN
        elif self.phase is Phase.FROZEN:
            self.phase = Phase.RUNNING

    def channels(self) -> list:
        return sorted({port_channel(c.name) for c in self.spec.connections_for(self.node_type)})


class Stabiliser:
    """Join process of one context: plan, reserve, commit or roll back and retry."""

    def __init__(self, ctx: IdaContext):
        self.ctx = ctx
        self.plan = None
        self.retries = 0
        self._replies: dict = {}

    def start(self) -> None:
        self.ctx.join.started_at = self.ctx.transport.now
        self._attempt()

    def _active(self) -> bool:
        return self.ctx.phase is Phase.JOINING and self.ctx.transport.alive(self.ctx.node)

    def _attempt(self) -> None:
        if not self._active():
            return
        ctx, rec = self.ctx, self.ctx.record
        cfg, now = rec.cfg, ctx.transport.now
        ctx.join.attempts += 1
        if not cfg.members:
            t = select_node_type(rec.spec, cfg.summary())
            ctx.trace.emit(now, ctx.ida, "join_planned", ctx.node, node_type=t, bindings={})
            cfg.add_member(ctx.node, t)
            ctx.trace.emit(now, ctx.ida, "join_committed", ctx.node, node_type=t, bindings={})
            ctx._joined()
            return
        view = SnapshotView(cfg, rec.reservations, now, ctx.node)
        plan = plan_join(ctx.node, rec.spec, view, rec.particulars, rec.policy,
                         rng_seed=ctx.rng.randrange(1 << 30))
        if isinstance(plan, JoinFailure):
            ctx.trace.emit(now, ctx.ida, "join_failed", ctx.node, node_type=plan.node_type,
                           connection=plan.connection, reason=plan.reason)
            ctx.phase = Phase.FAILED
            return
        self.plan = plan
        ctx.trace.emit(now, ctx.ida, "join_planned", ctx.node, node_type=plan.node_type,
                       bindings=dict(sorted(plan.bindings.items())))
        self._replies = {}
        if not plan.bindings:
            self._conclude()
            return
        for name, peer in sorted(plan.bindings.items()):
            args = {"template": rec.spec.wiring[name], "joiner": ctx.node,
                    "lease": rec.settings.lease_ms}
            tk = ctx.transport.command_sequence(ctx.node, peer, "RESERVE_TOPCON", args, ctx.ida)
            ctx.join.messages += 2
            tk.on_done(lambda t, key=(name, peer), p=plan: self._reply(p, key, t))

    def _reply(self, plan, key, ticket) -> None:
        if plan is not self.plan:
            return
        ok = ticket.state is TicketState.ANSWERED and ticket.answer().get("answer") == "yes"
        self._replies[key] = ok
        if len(self._replies) == len(plan.bindings):
            self._conclude()

    def _conclude(self) -> None:
        if not self._active():
            self._release_all("abandoned")
            return
        ctx, rec, plan = self.ctx, self.ctx.record, self.plan
        now = ctx.transport.now
        reason = None
        if not all(self._replies.values()):
            refused = sorted(p for (n, p), ok in self._replies.items() if not ok)
            reason = f"refused by {','.join(refused)}"
        elif not revalidate(plan, rec.cfg, rec.reservations, now):
            reason = "plan stale"
        else:
            try:
                commit_join(plan, rec.cfg, rec.reservations, now)
            except (RolledBack, CapacityError) as e:
                reason = str(e)
        if reason is None:
            ctx.trace.emit(now, ctx.ida, "join_committed", ctx.node, node_type=plan.node_type,
                           bindings=dict(sorted(plan.bindings.items())))
            for name, peer in sorted(plan.bindings.items()):
                ctx.transport.command_sequence(ctx.node, peer, "JOIN_PEER",
                                               {"joiner": ctx.node, "template": name}, ctx.ida)
                ctx.join.messages += 2
            self.plan = None
            ctx._joined()
            return
        self._release_all(reason)
        self.retries += 1
        if self.retries > rec.settings.max_retries:
            ctx.trace.emit(now, ctx.ida, "join_failed", ctx.node, node_type=plan.node_type,
                           connection="", reason=f"gave up after {self.retries} attempts: {reason}")
            ctx.phase = Phase.FAILED
            return
        lo, hi = rec.settings.backoff_ms
        ctx.transport.schedule(now + ctx.rng.randint(lo, hi) * self.retries, self._attempt)

    def _release_all(self, reason: str) -> None:
        ctx, plan = self.ctx, self.plan
        if plan is None:
            return
        granted = sorted((n, p) for (n, p), ok in self._replies.items() if ok)
        for name, peer in granted:
            if ctx.transport.alive(peer) and ctx.transport.alive(ctx.node):
                ctx.transport.command_sequence(
                    ctx.node, peer, "RELEASE_TOPCON",
                    {"template": ctx.spec.wiring[name], "joiner": ctx.node}, ctx.ida)
                ctx.join.messages += 2
        ctx.trace.emit(ctx.transport.now, ctx.ida, "released", ctx.node,
                       peers=[p for _, p in granted], reason=reason)
        self.plan = None


class Container:
    """All IDA contexts of one node plus its command handlers."""

    def __init__(self, node: str, transport: BaseTransport, trace: Trace,
                 records: Mapping[str, IdaRecord], seed: int = 0):
        self.node = node
        self.transport = transport
        self.trace = trace
        self.records = records
        self.seed = seed
        self.registry: dict = {}
        self.contexts: dict = {}
        self.history: list = []
        transport.add_node(node)
        for cmd, fn in (("DO_YOU_HAVE_A_FREE_TOPCON", self._free),
                        ("RESERVE_TOPCON", self._reserve),
                        ("RELEASE_TOPCON", self._release),
                        ("JOIN_PEER", self._join_peer)):
            transport.register_handler(node, cmd, fn)

    # -- registry -------------------------------------------------------------
    def register(self, adv: Advertisement, spec: TopologySpec, nodeletset: Nodeletset) -> None:
        missing = nodeletset.missing(spec)
        if missing:
            raise CoverageError(f"{missing[0]} uncovered")
        extra = nodeletset.extra(spec)
        if extra:
            raise CoverageError(f"nodelet for undeclared node type {extra[0]}")
        self.registry[adv.name] = (adv, spec, nodeletset)

    def participate(self, ida: str) -> IdaContext:
        if ida not in self.registry:
            raise RuntimeErrorIDA(f"{ida} is not registered on {self.node}")
        if ida in self.contexts:
            raise RuntimeErrorIDA(f"{self.node} already participates in {ida}")
        ctx = IdaContext(self, self.records[ida], self.seed)
        self.contexts[ida] = ctx
        self.history.append(ctx)
        ctx.stabiliser.start()
        return ctx

    def withdraw(self, ida: str) -> None:
        ctx = self.contexts.pop(ida, None)
        if ctx is None:
            raise RuntimeErrorIDA(f"{self.node} has no context for {ida}")
        if ctx.nodelet is not None and ctx.phase in (Phase.RUNNING, Phase.FROZEN):
            ctx._guard(ctx.nodelet.on_stop)
        rec = ctx.record
        if self.node in rec.cfg.members:
            leave(self.node, rec.cfg)
        rec.reservations.release_joiner(self.node)
        rec.reservations.drop_node(self.node)
        for ch in (ctx.channels() if ctx.node_type else []):
            self.transport.discard_channel(self.node, ch, ida)
        for port in ctx.ports.values():
            port.closed = True
        ctx.phase = Phase.WITHDRAWN
        self.trace.emit(self.transport.now, ida, "left", self.node)

    def context(self, ida: str) -> IdaContext:
        try:
            return self.contexts[ida]
        except KeyError:
            raise RuntimeErrorIDA(f"{self.node} has no context for {ida}") from None

    # -- dispatch -----------------------------------------------------------------
    def dispatch(self, ctx: IdaContext) -> None:
        ctx.sync()
        if ctx.phase is not Phase.RUNNING:
            return
        nl = ctx.nodelet
        for ch in ctx.channels():
            while (msg := self.transport.receive(self.node, ch, ctx.ida)) is not None:
                template = ch[len("port:"):]
                port = ctx.ports.get((template, msg.src))
                if port is None:
                    # severed connection: the stabiliser hears about it, the nodelet does not
                    ctx.severed.append((template, msg.src))
                    continue
                nl.incoming.append((port, nl.codec.decode(msg.payload) if nl.codec else msg.payload))
        while nl.incoming and ctx.phase is Phase.RUNNING:
            port, payload = nl.incoming.popleft()
            ctx._guard(nl.on_message, port, payload)
        self._flush(ctx)
        if ctx.phase is Phase.RUNNING:
            ctx._guard(nl.on_tick, self.transport.now)
        self._flush(ctx)

    def _flush(self, ctx: IdaContext) -> None:
        nl = ctx.nodelet
        while nl.outgoing and ctx.phase is Phase.RUNNING:
            port, payload = nl.outgoing.popleft()
            try:
                port.send(payload)
            except PortClosed:
                ctx.severed.append(port.key)

    def dispatch_all(self) -> None:
        for ida in sorted(self.contexts):
            self.dispatch(self.contexts[ida])

    # -- handlers --------------------------------------------------------------------
    def _record(self, req: Request) -> IdaRecord:
        return self.records[req.ida]

    def _free(self, req: Request) -> dict:
        rec = self._record(req)
        t = req.args["template"]
        if self.node not in rec.cfg.members or not rec.spec.has_connection(t):
            return {"answer": "no", "free": 0}
        free = rec.cfg.free(self.node, t) - rec.reservations.active(self.node, t, self.transport.now)
        return {"answer": "yes" if free >= 1 else "no", "free": "inf" if free == float("inf") else int(free)}

    def _reserve(self, req: Request) -> dict:
        rec = self._record(req)
        t, joiner = req.args["template"], req.args["joiner"]
        ok = (self.node not in rec.cfg.frozen and rec.reservations.reserve(
            rec.cfg, self.node, t, joiner, self.transport.now, float(req.args["lease"])))
        if ok:
            self.trace.emit(self.transport.now, req.ida, "reserved", self.node,
                            joiner=joiner, template=t)
        return {"answer": "yes" if ok else "no"}

    def _release(self, req: Request) -> dict:
        rec = self._record(req)
        rec.reservations.release(self.node, req.args["template"], req.args["joiner"])
        return {"answer": "ok"}

    def _join_peer(self, req: Request) -> dict:
        ctx = self.contexts.get(req.ida)
        if ctx is not None:
            ctx.sync()
        return {"answer": "ok"}
