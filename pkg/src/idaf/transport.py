"""Network layer: addressed messages, command sequences and advertisements.

``SimTransport`` is a deterministic discrete-event simulator driven by a
virtual millisecond clock.  ``idaf.socket_transport.SocketTransport`` runs
the same API over localhost TCP.  Both share the delivery bookkeeping in
``BaseTransport``: duplicate suppression, per-stream ordering, command
handlers, tickets and advertisement caches.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import logging
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Union
from urllib.parse import parse_qsl, urlencode

log = logging.getLogger(__name__)

__all__ = [
    "Advertisement",
    "Communique",
    "SimParams",
    "SendResult",
    "SendState",
    "Ticket",
    "TicketState",
    "Request",
    "Forward",
    "Event",
    "TransportError",
    "TransportStopped",
    "PayloadTooLarge",
    "UnknownChannel",
    "BaseTransport",
    "SimTransport",
    "encode_kv",
    "decode_kv",
    "encode_frame",
    "decode_frame",
    "port_channel",
    "COMMS",
]

COMMS = "comms"
_ADV = "adv"
_CTRL = "ctrl"
SOFT_LIMIT = 16 * 1024
HARD_LIMIT = 1024 * 1024


def port_channel(template: str) -> str:
    return f"port:{template}"


class TransportError(Exception):
    pass


class TransportStopped(TransportError):
    pass


class PayloadTooLarge(TransportError):
    pass


class UnknownChannel(TransportError):
    pass


def encode_kv(d: Mapping[str, object]) -> bytes:
    """Readable key=value text for control payloads."""
    return urlencode(sorted((str(k), str(v)) for k, v in d.items())).encode("ascii")


def decode_kv(b: bytes) -> dict:
    return dict(parse_qsl(b.decode("ascii"), keep_blank_values=True))


@dataclass(frozen=True)
class Advertisement:
    kind: str
    name: str
    id: str
    attributes: Mapping[str, str] = field(default_factory=dict)
    spec_ref: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in ("ida", "topology", "peer"):
            raise ValueError(f"unknown advertisement kind {self.kind!r}")
        if self.kind == "ida" and not self.spec_ref:
            raise ValueError("ida advertisements need a spec_ref")
        object.__setattr__(self, "attributes", dict(self.attributes))

    __hash__ = object.__hash__

    def matches(self, kind: Optional[str] = None, name: Optional[str] = None,
                attribute: Optional[tuple] = None) -> bool:
        if kind is not None and self.kind != kind:
            return False
        if name is not None and self.name != name:
            return False
        if attribute is not None:
            k, v = attribute
            if self.attributes.get(k) != v:
                return False
        return True

    def encode(self) -> bytes:
        d = {f"a.{k}": v for k, v in self.attributes.items()}
        d.update(kind=self.kind, name=self.name, id=self.id, spec_ref=self.spec_ref or "")
        return encode_kv(d)

    @classmethod
    def decode(cls, b: bytes) -> "Advertisement":
        d = decode_kv(b)
        attrs = {k[2:]: v for k, v in d.items() if k.startswith("a.")}
        return cls(d["kind"], d["name"], d["id"], attrs, d["spec_ref"] or None)


@dataclass(frozen=True)
class Communique:
    src: str
    dst: str
    ida: Optional[str]
    channel: str
    payload: bytes
    seq: int = 0


def encode_frame(msg: Communique) -> bytes:
    """Header line of key=value pairs, newline, then the raw body."""
    head = encode_kv({"src": msg.src, "dst": msg.dst, "ida": msg.ida or "",
                      "channel": msg.channel, "seq": msg.seq, "len": len(msg.payload)})
    return head + b"\n" + msg.payload


def decode_frame(b: bytes) -> Communique:
    head, _, body = b.partition(b"\n")
    d = decode_kv(head)
    if int(d["len"]) != len(body):
        raise TransportError("frame length mismatch")
    return Communique(d["src"], d["dst"], d["ida"] or None, d["channel"], body, int(d["seq"]))


@dataclass
class SimParams:
    latency: tuple = (1, 5)
    drop_probability: float = 0.0
    partitions: list = field(default_factory=list)
    seed: int = 0
    # virtual ms added to every message sent by the node
    extra_delay: dict = field(default_factory=dict)
    attempts: int = 3
    timeout: int = 400
    soft_limit: int = SOFT_LIMIT
    hard_limit: int = HARD_LIMIT

    def __post_init__(self) -> None:
        lo, hi = self.latency
        self.latency = (int(lo), int(hi))
        if lo < 0 or lo > hi:
            raise ValueError(f"latency bounds must satisfy 0 <= min <= max, got {self.latency}")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must lie in [0, 1]")
        if self.attempts < 1 or self.timeout < 1:
            raise ValueError("attempts and timeout must be positive")
        self.partitions = [frozenset(p) for p in self.partitions]

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "latency" in known:
            known["latency"] = tuple(known["latency"])
        return cls(**known)


class SendState(str, enum.Enum):
    PENDING = "pending"
    DELIVERED = "delivered"
    GAVE_UP = "gave_up"


@dataclass
class SendResult:
    msg: Communique
    state: SendState = SendState.PENDING
    attempts: int = 0
    started_at: float = 0.0
    finished_at: Optional[float] = None
    _callbacks: list = field(default_factory=list, repr=False)

    def on_done(self, fn: Callable[["SendResult"], None]) -> None:
        if self.state is SendState.PENDING:
            self._callbacks.append(fn)
        else:
            fn(self)

    def _finish(self, state: SendState, at: float) -> None:
        if self.state is not SendState.PENDING:
            return
        self.state = state
        self.finished_at = at
        cbs, self._callbacks = self._callbacks, []
        for fn in cbs:
            fn(self)


class TicketState(str, enum.Enum):
    PENDING = "pending"
    ANSWERED = "answered"
    FAILED = "failed"


@dataclass
class Ticket:
    id: str
    command: str
    state: TicketState = TicketState.PENDING
    reply: Optional[bytes] = None
    hops: list = field(default_factory=list)
    _callbacks: list = field(default_factory=list, repr=False)

    def on_done(self, fn: Callable[["Ticket"], None]) -> None:
        if self.state is TicketState.PENDING:
            self._callbacks.append(fn)
        else:
            fn(self)

    def answer(self) -> dict:
        return decode_kv(self.reply) if self.reply else {}

    def _finish(self, state: TicketState, reply: Optional[bytes]) -> None:
        if self.state is not TicketState.PENDING:
            return
        self.state = state
        self.reply = reply
        cbs, self._callbacks = self._callbacks, []
        for fn in cbs:
            fn(self)


@dataclass(frozen=True)
class Request:
    ticket: str
    origin: str
    node: str
    command: str
    args: Mapping[str, str]
    ida: Optional[str] = None


@dataclass(frozen=True)
class Forward:
    """Handler result passing a request on to the next peer of a chain."""

    dst: str
    command: Optional[str] = None
    args: Optional[Mapping[str, object]] = None


Handler = Callable[[Request], Union[Mapping[str, object], Forward, None]]


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    src: str
    dst: str
    channel: str
    seq: int
    ida: Optional[str] = None


class BaseTransport:
    """Delivery bookkeeping shared by the simulated and socket backends."""

    def __init__(self, params: Optional[SimParams] = None):
        self.params = params or SimParams()
        self.nodes: set = set()
        self.dead: set = set()
        self.running = True
        self.inboxes: dict = defaultdict(deque)
        self.caches: dict = defaultdict(dict)
        self.handlers: dict = defaultdict(dict)
        self.tickets: dict = {}
        self.events: list = []
        self.sent_by: dict = defaultdict(int)
        self._seq: dict = defaultdict(int)
        self._seen: set = set()
        self._expect: dict = defaultdict(int)
        self._held: dict = defaultdict(dict)
        self._skipped: set = set()
        self._ticket_ids = itertools.count(1)
        self._adv_seq = itertools.count(1)

    # -- membership ----------------------------------------------------------
    def add_node(self, node: str) -> None:
        self.nodes.add(node)
        self.dead.discard(node)

    def kill(self, node: str) -> None:
        """Crash ``node``: it stops sending and receiving, its queues are lost."""
        self.dead.add(node)
        for key in [k for k in self.inboxes if k[0] == node]:
            del self.inboxes[key]

    def alive(self, node: str) -> bool:
        return node in self.nodes and node not in self.dead

    def reachable(self, a: str, b: str) -> bool:
        if not (self.alive(a) and self.alive(b)):
            return False
        pa = {i for i, p in enumerate(self.params.partitions) if a in p}
        pb = {i for i, p in enumerate(self.params.partitions) if b in p}
        # nodes outside every declared set are reachable from everywhere
        return not pa or not pb or bool(pa & pb)

    def set_partitions(self, partitions: Iterable[Iterable[str]]) -> None:
        self.params.partitions = [frozenset(p) for p in partitions]

    def stop(self) -> None:
        self.running = False

    # -- sending ---------------------------------------------------------------
    def _check_channel(self, channel: str) -> None:
        if channel not in (COMMS, _ADV, _CTRL) and not channel.startswith("port:"):
            raise UnknownChannel(channel)

    def make(self, src: str, dst: str, channel: str, payload: bytes,
             ida: Optional[str] = None) -> Communique:
        """Build a Communique with the next sequence number of its stream."""
        self._check_channel(channel)
        key = (src, dst, channel)
        seq = self._seq[key]
        self._seq[key] += 1
        return Communique(src, dst, ida, channel, bytes(payload), seq)

    def _check_size(self, msg: Communique) -> None:
        n = len(msg.payload)
        if n > self.params.hard_limit:
            raise PayloadTooLarge(f"{n} bytes exceeds the {self.params.hard_limit} byte limit")
        if n > self.params.soft_limit:
            log.warning("payload of %d bytes from %s exceeds %d", n, msg.src, self.params.soft_limit)

    def send(self, msg: Communique, attempts: Optional[int] = None,
             timeout: Optional[int] = None) -> SendResult:
        raise NotImplementedError

    def post(self, src: str, dst: str, channel: str, payload: bytes,
             ida: Optional[str] = None) -> SendResult:
        return self.send(self.make(src, dst, channel, payload, ida))

    # -- receiving ---------------------------------------------------------------
    def receive(self, node: str, channel: str = COMMS, ida: Optional[str] = None) -> Optional[Communique]:
        if node not in self.nodes:
            raise UnknownChannel(f"{node} is not registered")
        self._check_channel(channel)
        q = self.inboxes.get((node, ida, channel))
        if not q:
            return None
        return q.popleft()

    def pending(self, node: str, channel: str = COMMS, ida: Optional[str] = None) -> int:
        return len(self.inboxes.get((node, ida, channel), ()))

    def discard_channel(self, node: str, channel: str, ida: Optional[str] = None) -> list:
        return list(self.inboxes.pop((node, ida, channel), ()))

    def _arrive(self, msg: Communique, now: float) -> bool:
        """Accept ``msg`` at its destination; False for a duplicate."""
        if not self.alive(msg.dst):
            return False
        key = (msg.src, msg.seq, msg.dst, msg.channel)
        if key in self._seen:
            return False
        self._seen.add(key)
        stream = (msg.src, msg.dst, msg.channel)
        self._held[stream][msg.seq] = msg
        self._flush(stream, now)
        return True

    def _skip(self, msg: Communique, now: float) -> None:
        """A message that will never arrive must not block its stream."""
        stream = (msg.src, msg.dst, msg.channel)
        self._skipped.add((stream, msg.seq))
        self._flush(stream, now)

    def _flush(self, stream: tuple, now: float) -> None:
        held = self._held[stream]
        while True:
            nxt = self._expect[stream]
            if nxt in held:
                msg = held.pop(nxt)
                self._expect[stream] += 1
                self._deliver(msg, now)
            elif (stream, nxt) in self._skipped:
                self._skipped.discard((stream, nxt))
                self._expect[stream] += 1
            else:
                break

    def _deliver(self, msg: Communique, now: float) -> None:
        if not self.alive(msg.dst):
            return
        self.events.append(Event(now, "delivered", msg.src, msg.dst, msg.channel, msg.seq, msg.ida))
        if msg.channel == _ADV:
            adv = Advertisement.decode(msg.payload)
            self.caches[msg.dst].setdefault(adv.id, adv)
        elif msg.channel == _CTRL:
            self._control(msg)
        else:
            self.inboxes[(msg.dst, msg.ida, msg.channel)].append(msg)

    # -- advertisements ------------------------------------------------------------
    def new_advertisement_id(self, node: str) -> str:
        return f"{node}/adv{next(self._adv_seq)}"

    def publish(self, node: str, adv: Advertisement) -> None:
        if not self.running:
            raise TransportStopped("transport stopped")
        if not self.alive(node):
            raise TransportError(f"{node} is not running")
        self.caches[node].setdefault(adv.id, adv)
        body = adv.encode()
        for peer in sorted(self.nodes):
            if peer != node and self.reachable(node, peer):
                self.send(self.make(node, peer, _ADV, body, None))

    def discover(self, node: str, kind: Optional[str] = None, name: Optional[str] = None,
                 attribute: Optional[tuple] = None) -> list:
        cache = self.caches.get(node, {})
        return [a for _, a in sorted(cache.items()) if a.matches(kind, name, attribute)]

    # -- command sequences --------------------------------------------------------------
    def register_handler(self, node: str, command: str, fn: Handler) -> None:
        self.handlers[node][command] = fn

    def command_sequence(self, initiator: str, destination: str, command: str,
                         args: Optional[Mapping[str, object]] = None,
                         ida: Optional[str] = None) -> Ticket:
        tid = f"{initiator}#{next(self._ticket_ids)}"
        ticket = Ticket(tid, command)
        self.tickets[tid] = ticket
        self._send_request(tid, initiator, initiator, destination, command, args or {}, ida)
        return ticket

    def _send_request(self, tid, origin, src, dst, command, args, ida) -> None:
        body = {f"a.{k}": v for k, v in args.items()}
        body.update(kind="request", ticket=tid, origin=origin, command=command)
        res = self.send(self.make(src, dst, _CTRL, encode_kv(body), ida))
        self.tickets[tid].hops.append(dst)
        res.on_done(lambda r: r.state is SendState.GAVE_UP
                    and self.tickets[tid]._finish(TicketState.FAILED, None))

    def _control(self, msg: Communique) -> None:
        d = decode_kv(msg.payload)
        tid = d["ticket"]
        if d["kind"] == "reply":
            state = TicketState.ANSWERED if d.get("status") == "ok" else TicketState.FAILED
            reply = {k[2:]: v for k, v in d.items() if k.startswith("r.")}
            self.tickets[tid]._finish(state, encode_kv(reply))
            return
        args = {k[2:]: v for k, v in d.items() if k.startswith("a.")}
        req = Request(tid, d["origin"], msg.dst, d["command"], args, msg.ida)
        fn = self.handlers.get(msg.dst, {}).get(req.command)
        if fn is None:
            self._reply(req, {"error": f"unknown command {req.command}"}, ok=False)
            return
        try:
            out = fn(req)
        except Exception as e:  # a broken handler fails the ticket, not the transport
            log.exception("handler %s on %s raised", req.command, msg.dst)
            self._reply(req, {"error": repr(e)}, ok=False)
            return
        if isinstance(out, Forward):
            self._send_request(tid, req.origin, msg.dst, out.dst, out.command or req.command,
                               out.args if out.args is not None else req.args, msg.ida)
        else:
            self._reply(req, out or {}, ok=True)

    def _reply(self, req: Request, values: Mapping[str, object], ok: bool) -> None:
        body = {f"r.{k}": v for k, v in values.items()}
        body.update(kind="reply", ticket=req.ticket, status="ok" if ok else "error")
        res = self.send(self.make(req.node, req.origin, _CTRL, encode_kv(body), req.ida))
        tid = req.ticket
        res.on_done(lambda r: r.state is SendState.GAVE_UP
                    and self.tickets[tid]._finish(TicketState.FAILED, None))

    # -- time --------------------------------------------------------------------------
    @property
    def now(self) -> float:
        raise NotImplementedError

    def schedule(self, at: float, fn: Callable[[], None]) -> None:
        raise NotImplementedError

    def step(self, until: float) -> list:
        raise NotImplementedError



class SimTransport(BaseTransport):
    """Deterministic virtual-time transport.

    Every random draw comes from one generator seeded by ``params.seed`` and
    events are ordered by ``(time, insertion counter)``, so identical inputs
    give identical event sequences.
    """

    def __init__(self, params: Optional[SimParams] = None):
        super().__init__(params)
        self.rng = random.Random(self.params.seed)
        self._now = 0.0
        self._heap: list = []
        self._tick = itertools.count()
        self._last_arrival: dict = {}

    @property
    def now(self) -> float:
        return self._now

    def _push(self, at: float, kind: str, data) -> None:
        heapq.heappush(self._heap, (at, next(self._tick), kind, data))

    def schedule(self, at: float, fn: Callable[[], None]) -> None:
        self._push(max(at, self._now), "timer", fn)

    def send(self, msg: Communique, attempts: Optional[int] = None,
             timeout: Optional[int] = None) -> SendResult:
        if not self.running:
            raise TransportStopped("transport stopped")
        self._check_channel(msg.channel)
        self._check_size(msg)
        if msg.dst not in self.nodes:
            raise TransportError(f"unknown destination {msg.dst}")
        attempts = attempts or self.params.attempts
        timeout = timeout or self.params.timeout
        res = SendResult(msg, started_at=self._now)
        self.sent_by[msg.src] += 1
        self._attempt(res, 0, attempts, timeout, self._now)
        self._push(self._now + attempts * timeout, "deadline", res)
        return res

    def _attempt(self, res: SendResult, k: int, attempts: int, timeout: int, at: float) -> None:
        msg = res.msg
        res.attempts = k + 1
        dropped = self.rng.random() < self.params.drop_probability
        lo, hi = self.params.latency
        lat = self.rng.randint(lo, hi) + self.params.extra_delay.get(msg.src, 0)
        ok = not dropped and self.reachable(msg.src, msg.dst)
        self.events.append(Event(at, "attempt" if ok else "dropped", msg.src, msg.dst,
                                 msg.channel, msg.seq, msg.ida))
        if ok:
            stream = (msg.src, msg.dst, msg.channel)
            arrival = max(at + lat, self._last_arrival.get(stream, 0.0))
            self._last_arrival[stream] = arrival
            self._push(arrival, "arrive", res)
            if arrival - at <= timeout:
                return
        if k + 1 < attempts:
            self._push(at + timeout, "retry", (res, k + 1, attempts, timeout))

    def step(self, until: float) -> list:
        """Process every event due at or before ``until``; return deliveries."""
        start = len(self.events)
        while self._heap and self._heap[0][0] <= until:
            at, _, kind, data = heapq.heappop(self._heap)
            self._now = max(self._now, at)
            if kind == "timer":
                data()
            elif kind == "arrive":
                if self.reachable(data.msg.src, data.msg.dst) and self._arrive(data.msg, at):
                    data._finish(SendState.DELIVERED, at)
            elif kind == "retry":
                res, k, attempts, timeout = data
                if res.state is SendState.PENDING and self.alive(res.msg.src):
                    self._attempt(res, k, attempts, timeout, at)
            elif kind == "deadline":
                if data.state is SendState.PENDING:
                    self.events.append(Event(at, "gave_up", data.msg.src, data.msg.dst,
                                             data.msg.channel, data.msg.seq, data.msg.ida))
                    data._finish(SendState.GAVE_UP, at)
                    self._skip(data.msg, at)
        self._now = max(self._now, until)
        return [e for e in self.events[start:] if e.kind == "delivered"]

    def run_until_idle(self, limit: float = 1e9) -> list:
        out = []
        while self._heap and self._heap[0][0] <= limit:
            out.extend(self.step(self._heap[0][0]))
        return out

    def idle(self) -> bool:
        # deadlines of already settled sends are no-ops
        return all(kind == "deadline" and data.state is not SendState.PENDING
                   for _, _, kind, data in self._heap)
