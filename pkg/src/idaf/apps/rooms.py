"""Room Explorer on the four-neighbour mesh.

Every node is a room with a cookie jar.  Persons act once per game tick:
move through a connected doorway, stay, pick a cookie up from the jar or
drop one in.  A moving person stays registered at the origin until the
destination acknowledges it, so retried or failed deliveries never clone or
lose anyone.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from ..builtin import mesh4
from ..configuration import RankingPolicy
from ..runtime import Nodelet, Nodeletset
from ..swarm import Swarm
from ..transport import BaseTransport, SimParams

log = logging.getLogger(__name__)

__all__ = [
    "Person",
    "RoomState",
    "RoomGame",
    "RoomNodelet",
    "ACTIONS",
    "SQUARE_BIAS",
    "rooms_nodeletset",
    "RoomsResult",
    "run_rooms_demo",
]

ACTIONS = ("move", "stay", "pickup", "drop")
# joining order west, south, east, north closes a 2x2 square on the fourth join
SQUARE_BIAS = RankingPolicy(via_order=("west", "south", "east", "north"))


@dataclass
class Person:
    id: str
    cookies: int = 5
    hops: int = 0  # completed moves; the copy with the most hops is the live one

    def __post_init__(self) -> None:
        if self.cookies < 0:
            raise ValueError("cookies must be non-negative")


@dataclass
class RoomState:
    jar: int = 0
    persons: list = field(default_factory=list)


@dataclass
class RoomGame:
    """Shared game settings and the activity log of every room."""

    start_at: Optional[float] = None  # set once the world has formed
    tick_ms: float = 10.0
    initial: dict = field(default_factory=dict)  # room -> list of Person
    resend_after_ms: float = 1000.0
    log: list = field(default_factory=list)

    def tick_of(self, now: float) -> int:
        return int(round((now - self.start_at) / self.tick_ms))

    def record(self, tick: int, room: str, event: str, person: str, cookies: int) -> None:
        self.log.append({"tick": tick, "room": room, "event": event,
                         "person": person, "cookies": cookies})

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)


class RoomNodelet(Nodelet):
    def __init__(self, game: RoomGame):
        super().__init__()
        self.game = game
        self.state = RoomState()
        # (id, hops) -> (person, port key, sent_at) for persons awaiting an ack
        self.in_transit: dict = {}
        self.accepted: set = set()  # (id, hops) already taken in, for resent moves
        self.started = False

    @property
    def room(self) -> str:
        return self.context.node

    def _begin(self) -> None:
        self.started = True
        for p in self.game.initial.get(self.room, []):
            self.state.persons.append(Person(p.id, p.cookies))
        for p in self.state.persons:
            self.game.record(0, self.room, "enter", p.id, p.cookies)

    def on_message(self, port, payload) -> None:
        try:
            msg = json.loads(payload)
            kind = msg["type"]
        except (ValueError, KeyError, TypeError):
            log.warning("%s: undecodable message from %s", self.room, port.remote)
            return
        tick = self.game.tick_of(self.context.transport.now)
        if kind == "person":
            try:
                person = Person(str(msg["id"]), int(msg["cookies"]), int(msg.get("hops", 0)))
            except (KeyError, TypeError, ValueError):
                self.emit(port, json.dumps({"type": "nack", "id": msg.get("id"),
                                            "hops": msg.get("hops")}).encode())
                return
            # a resend may arrive after the person already moved on; never take it twice
            if (person.id, person.hops) not in self.accepted:
                self.accepted.add((person.id, person.hops))
                self.state.persons.append(person)
                self.game.record(tick, self.room, "arrive", person.id, person.cookies)
            self.emit(port, json.dumps({"type": "ack", "id": person.id,
                                        "hops": person.hops}).encode())
        elif kind == "ack":
            entry = self.in_transit.pop(self._sent_key(msg), None)
            if entry is not None:
                person = entry[0]
                # the same person may already be back here as a newer copy
                self.state.persons = [p for p in self.state.persons if p is not person]
                self.game.record(tick, self.room, "depart", person.id, person.cookies)
        elif kind == "nack":
            self.in_transit.pop(self._sent_key(msg), None)

    @staticmethod
    def _sent_key(msg: dict) -> tuple:
        hops = msg.get("hops")
        return (msg.get("id"), hops - 1 if isinstance(hops, int) else None)

    def on_tick(self, now: float) -> None:
        if self.game.start_at is None or now < self.game.start_at:
            return
        if not self.started:
            self._begin()
            return
        tick = self.game.tick_of(now)
        rng = self.context.rng
        ports = [p for p in self.sorted_ports() if p.alive()]
        for pid, (person, key, sent_at) in sorted(self.in_transit.items(), key=lambda kv: kv[0]):
            if now - sent_at > self.game.resend_after_ms:
                port = self.ports.get(key)
                if port is None or not port.alive():
                    del self.in_transit[pid]  # doorway gone: the person stays here
                    continue
                self.in_transit[pid] = (person, key, now)
                self.emit(port, self._person_msg(person))
        for person in list(self.state.persons):
            if (person.id, person.hops) in self.in_transit:
                continue
            actions = [a for a in ACTIONS if a != "move" or ports]
            action = rng.choice(actions)
            if action == "move":
                port = rng.choice(ports)
                self.in_transit[(person.id, person.hops)] = (person, port.key, now)
                self.emit(port, self._person_msg(person))
                self.game.record(tick, self.room, f"move_{port.template}", person.id, person.cookies)
            elif action == "stay":
                self.game.record(tick, self.room, "stay", person.id, person.cookies)
            elif action == "pickup":
                if self.state.jar > 0:
                    self.state.jar -= 1
                    person.cookies += 1
                self.game.record(tick, self.room, "pickup", person.id, person.cookies)
            else:
                if person.cookies > 0:
                    person.cookies -= 1
                    self.state.jar += 1
                self.game.record(tick, self.room, "drop", person.id, person.cookies)

    @staticmethod
    def _person_msg(person: Person) -> bytes:
        return json.dumps({"type": "person", "id": person.id, "cookies": person.cookies,
                           "hops": person.hops + 1}, sort_keys=True).encode()

    def dump_state(self) -> bytes:
        return json.dumps({"jar": self.state.jar,
                           "persons": [[p.id, p.cookies, p.hops] for p in self.state.persons],
                           "accepted": sorted(self.accepted)}).encode()

    def restore_state(self, b: bytes) -> None:
        d = json.loads(b)
        self.state = RoomState(d["jar"], [Person(*row) for row in d["persons"]])
        self.accepted = {tuple(x) for x in d.get("accepted", [])}


def rooms_nodeletset(game: RoomGame) -> Nodeletset:
    return Nodeletset({"node": lambda: RoomNodelet(game)})


def census(swarm: Swarm, ida: str = "rooms") -> tuple:
    """(person count, total cookies) across the world.

    A person in flight is registered at its origin until the ack arrives, so
    several rooms may hold a copy.  Only the copy with the most hops counts.
    """
    jars = 0
    persons: dict = {}
    for c in swarm.live_containers():
        ctx = c.contexts.get(ida)
        if ctx is None or not isinstance(ctx.nodelet, RoomNodelet):
            continue
        nl = ctx.nodelet
        jars += nl.state.jar
        for p in nl.state.persons:
            if p.id not in persons or p.hops > persons[p.id].hops:
                persons[p.id] = p
    return len(persons), jars + sum(p.cookies for p in persons.values())


@dataclass
class RoomsResult:
    log: list
    counts: list  # (tick, persons, cookies) after each tick
    first_breach: Optional[int]
    swarm: Swarm
    game: RoomGame

    @property
    def ok(self) -> bool:
        return self.first_breach is None

    def dumps(self) -> str:
        return self.game.dumps()


def run_rooms_demo(steps: int = 1000, seed: int = 0, rooms: int = 4, cookies: int = 5,
                   params: Optional[SimParams] = None, tick_ms: float = 10.0,
                   transport: Optional[BaseTransport] = None) -> RoomsResult:
    """Build the 2x2 world, put one person in each room and play ``steps`` ticks."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    sw = Swarm(params or SimParams(seed=seed), transport=transport, tick_ms=tick_ms)
    game = RoomGame(tick_ms=tick_ms)
    sw.add_ida("rooms", mesh4(), rooms_nodeletset(game), policy=SQUARE_BIAS)
    names = [f"n{i}" for i in range(rooms)]
    for i, n in enumerate(names):
        sw.at(i, lambda n=n: sw.join(n, "rooms"))
    sw.settle()
    # persons are placed when the game starts, after the mesh has formed
    game.initial = {n: [Person(f"p{i}", cookies)] for i, n in enumerate(names)}
    game.start_at = sw.clock + tick_ms
    expected = (rooms, rooms * cookies)
    counts: list = []
    breach: list = []

    def observe(s: Swarm) -> None:
        if s.clock < game.start_at:
            return
        n, c = census(s)
        t = game.tick_of(s.clock)
        counts.append((t, n, c))
        if (n, c) != expected and not breach:
            breach.append(t)

    sw.observers.append(observe)
    sw.run(game.start_at + steps * tick_ms)
    return RoomsResult(game.log, counts, breach[0] if breach else None, sw, game)
