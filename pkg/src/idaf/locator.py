"""Relative coordinates for rigidly structured topologies.

Coordinates only mean something relative to an origin node.  A locator maps
each direction token to a unit step; addresses pair an offset with the
connection template expected at the destination.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Optional, Sequence

from .topology import TopologyError, TopologySpec, reciprocal

__all__ = [
    "Coordinates",
    "Address",
    "Locator",
    "LocatorError",
    "add",
    "inverse",
    "contingent_address",
    "resolve",
    "register_locator",
    "get_locator",
    "mesh4_locator",
    "hex6_locator",
]


class LocatorError(TopologyError):
    pass


@dataclass(frozen=True)
class Coordinates:
    components: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(int(c) for c in self.components))

    @classmethod
    def of(cls, *xs: int) -> "Coordinates":
        return cls(xs)

    @property
    def dimension(self) -> int:
        return len(self.components)

    def _check(self, other: "Coordinates") -> None:
        if other.dimension != self.dimension:
            raise LocatorError(f"dimension mismatch: {self.dimension} vs {other.dimension}")

    def __add__(self, other: "Coordinates") -> "Coordinates":
        self._check(other)
        return Coordinates(tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "Coordinates") -> "Coordinates":
        return self + (-other)

    def __neg__(self) -> "Coordinates":
        return Coordinates(tuple(-a for a in self.components))

    def is_zero(self) -> bool:
        return not any(self.components)

    def __repr__(self) -> str:
        return f"Coordinates{self.components}"


@dataclass(frozen=True)
class Address:
    offset: Coordinates
    target_connection: str


@dataclass(frozen=True)
class Locator:
    name: str
    dimension: int
    direction_map: Mapping[str, Coordinates]

    __hash__ = object.__hash__

    def step(self, direction: str) -> Coordinates:
        try:
            return self.direction_map[direction]
        except KeyError:
            raise LocatorError(f"{self.name} has no direction {direction!r}") from None

    def zero(self) -> Coordinates:
        return Coordinates((0,) * self.dimension)

    def distance(self, offset: Coordinates) -> int:
        """Lattice hop count from the origin to ``offset``."""
        return _distance(self, offset.components)


@lru_cache(maxsize=8192)
def _distance(loc: Locator, target: tuple) -> int:
    # BFS over the integer lattice; offsets of interest are a few hops
    origin = (0,) * len(target)
    if target == origin:
        return 0
    steps = [loc.direction_map[d].components for d in sorted(loc.direction_map)]
    bound = 2 * sum(abs(x) for x in target) + 2
    seen = {origin: 0}
    q = deque([origin])
    while q:
        cur = q.popleft()
        if seen[cur] >= bound:
            break
        for s in steps:
            nxt = tuple(a + b for a, b in zip(cur, s))
            if nxt == target:
                return seen[cur] + 1
            if nxt not in seen:
                seen[nxt] = seen[cur] + 1
                q.append(nxt)
    raise LocatorError(f"{target} unreachable on {loc.name}")


def add(a: Address, b: Address) -> Address:
    return Address(a.offset + b.offset, b.target_connection)


def inverse(spec: TopologySpec, a: Address) -> Address:
    return Address(-a.offset, reciprocal(spec, a.target_connection).name)


def _locator_of(spec: TopologySpec) -> Locator:
    if spec.locator is None:
        raise LocatorError(f"{spec.name} declares no locator")
    return spec.locator


def contingent_address(spec: TopologySpec, via: str, want: str) -> Address:
    """Where the joiner's ``want`` neighbour sits, seen from its ``via`` neighbour.

    The joiner is at ``-step(via)`` from the via-neighbour and the
    want-neighbour is at ``step(want)`` from the joiner.
    """
    loc = _locator_of(spec)
    cv, cw = spec.connection(via), spec.connection(want)
    if cv.name == cw.name:
        raise LocatorError("via and want must differ")
    group = spec.group_of(cv)
    if group is None or cw.name not in group.members:
        raise LocatorError(f"{via} and {want} are not in one contingent group")
    if not group.rigid:
        raise LocatorError(f"group {group.ref} is not rigid")
    offset = loc.step(cw.d) - loc.step(cv.d)
    return Address(offset, reciprocal(spec, cw).name)


NeighborView = Callable[[str, str], Optional[str]]


def resolve(locator: Locator, origin: str, offset: Coordinates, view: NeighborView,
            avoid: Sequence[str] = ()) -> Optional[str]:
    """Walk live edges from ``origin`` along a shortest lattice path to ``offset``.

    Every geodesic is tried, in direction-token order, until one completes;
    ``None`` when no walk stays inside the configuration.  Nodes in ``avoid``
    are never stepped onto.
    """
    if offset.dimension != locator.dimension:
        raise LocatorError("offset dimension does not match locator")
    if offset.is_zero():
        return origin
    dirs = sorted(locator.direction_map)
    blocked = set(avoid)

    def walk(node: str, remaining: Coordinates, depth: int) -> Optional[str]:
        if remaining.is_zero():
            return node
        for d in dirs:
            nxt_rem = remaining - locator.direction_map[d]
            if locator.distance(nxt_rem) != depth - 1:
                continue
            nb = view(node, d)
            if nb is None or nb in blocked:
                continue
            found = walk(nb, nxt_rem, depth - 1)
            if found is not None:
                return found
        return None

    return walk(origin, offset, locator.distance(offset))


_REGISTRY: dict = {}


def register_locator(loc: Locator) -> Locator:
    _REGISTRY[loc.name] = loc
    return loc


def get_locator(name: str) -> Locator:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise LocatorError(f"no locator registered as {name!r}") from None


mesh4_locator = register_locator(Locator("mesh4", 2, {
    "north": Coordinates.of(0, 1),
    "south": Coordinates.of(0, -1),
    "east": Coordinates.of(1, 0),
    "west": Coordinates.of(-1, 0),
}))

# axial hex lattice: basis vectors at 0 and 60 degrees
_HEX_STEPS = {0: (1, 0), 60: (0, 1), 120: (-1, 1), 180: (-1, 0), 240: (0, -1), 300: (1, -1)}

hex6_locator = register_locator(Locator("hex6", 2, {
    str(angle): Coordinates(step) for angle, step in _HEX_STEPS.items()
}))


def hex_to_cartesian(c: Coordinates) -> tuple:
    """Plane position of an axial hex coordinate, for drawing."""
    q, r = c.components
    return (q + r * 0.5, r * math.sqrt(3) / 2)
