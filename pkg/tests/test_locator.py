import itertools

import pytest
from hypothesis import given, strategies as st

from idaf.builtin import mesh4, mesh6, star
from idaf.locator import (
    Address,
    Coordinates,
    LocatorError,
    add,
    contingent_address,
    hex6_locator,
    inverse,
    mesh4_locator,
    resolve,
)

C = Coordinates.of


def grid_view(width, height, loc=mesh4_locator):
    """Neighbour lookup for a fully populated rectangular patch; node ids are 'x,y'."""
    def view(node, d):
        x, y = map(int, node.split(","))
        dx, dy = loc.step(d).components
        nx_, ny_ = x + dx, y + dy
        if 0 <= nx_ < width and 0 <= ny_ < height:
            return f"{nx_},{ny_}"
        return None
    return view


def test_add():
    a = Address(C(1, 0), "west")
    b = Address(C(0, 1), "north")
    assert add(a, b) == Address(C(1, 1), "north")
    assert add(Address(C(0, 1), "north"), Address(C(0, -1), "south")).offset == C(0, 0)
    with pytest.raises(LocatorError):
        add(Address(C(1, 0), "x"), Address(C(1, 0, 0), "y"))


def test_inverse():
    m = mesh4()
    assert inverse(m, Address(C(2, -1), "east")) == Address(C(-2, 1), "west")
    assert inverse(m, Address(C(0, 0), "north")) == Address(C(0, 0), "south")
    x = Address(C(3, 4), "north")
    assert inverse(m, inverse(m, x)) == x
    s = add(x, inverse(m, x))
    assert s == Address(C(0, 0), "south")


def test_contingent_address_mesh4():
    m = mesh4()
    assert contingent_address(m, "east", "north") == Address(C(-1, 1), "south")
    assert contingent_address(m, "north", "south") == Address(C(0, -2), "north")
    with pytest.raises(LocatorError):
        contingent_address(m, "east", "east")
    with pytest.raises(LocatorError):
        contingent_address(star(), "R_to_L", "L_to_R")


def test_contingent_address_hex_is_one_step():
    h = mesh6()
    addr = contingent_address(h, "d120", "d180")
    # one lattice step from the 120 degree neighbour
    assert hex6_locator.distance(addr.offset) == 1
    assert addr.offset == hex6_locator.step("240")
    assert addr.target_connection == "d0"


def test_resolve_examples():
    v = grid_view(2, 2)
    assert resolve(mesh4_locator, "0,0", C(0, 0), v) == "0,0"
    assert resolve(mesh4_locator, "0,0", C(1, 1), v) == "1,1"
    assert resolve(mesh4_locator, "0,0", C(5, 0), v) is None


def test_resolve_walk_orders_agree_on_square():
    v = grid_view(2, 2)
    east_then_north = v(v("0,0", "east"), "north")
    north_then_east = v(v("0,0", "north"), "east")
    assert east_then_north == north_then_east == resolve(mesh4_locator, "0,0", C(1, 1), v)


def test_resolve_detours_around_a_hole():
    full = grid_view(2, 2)

    def holed(node, d):
        nb = full(node, d)
        return None if nb == "1,0" or node == "1,0" else nb

    assert resolve(mesh4_locator, "0,0", C(1, 1), holed) == "1,1"
    assert resolve(mesh4_locator, "0,0", C(1, 1), full, avoid=("1,0", "0,1")) is None


@given(st.integers(0, 4), st.integers(0, 4), st.integers(-4, 4), st.integers(-4, 4))
def test_resolve_path_independent_on_full_grid(x, y, dx, dy):
    # every geodesic inside a full grid reaches the same node
    v = grid_view(5, 5)
    got = resolve(mesh4_locator, f"{x},{y}", C(dx, dy), v)
    inside = 0 <= x + dx < 5 and 0 <= y + dy < 5
    assert got == (f"{x + dx},{y + dy}" if inside else None)


def hex_view(radius):
    cells = {(q, r) for q in range(-radius, radius + 1) for r in range(-radius, radius + 1)
             if abs(q + r) <= radius}

    def view(node, d):
        q, r = map(int, node.split(","))
        dq, dr = hex6_locator.step(d).components
        nxt = (q + dq, r + dr)
        return f"{nxt[0]},{nxt[1]}" if nxt in cells else None
    return view, cells


@pytest.mark.parametrize("spec_fn,view_fn", [
    (mesh4, lambda: (grid_view(5, 5), {(x, y) for x in range(5) for y in range(5)})),
    (mesh6, lambda: hex_view(2)),
])
def test_inverse_path_consistency(spec_fn, view_fn):
    spec = spec_fn()
    loc = spec.locator
    view, cells = view_fn()
    group = spec.contingent_groups[0]
    for via, want in itertools.permutations(sorted(group.members), 2):
        addr = contingent_address(spec, via, want)
        back = contingent_address(spec, want, via)
        assert back.offset == -addr.offset
        for cell in sorted(cells):
            start = f"{cell[0]},{cell[1]}"
            there = resolve(loc, start, addr.offset, view)
            if there is None:
                continue
            assert resolve(loc, there, inverse(spec, addr).offset, view) == start


def test_direction_map_is_antisymmetric():
    for spec in (mesh4(), mesh6()):
        loc = spec.locator
        for c in spec.connections:
            assert loc.step(spec.connection(spec.wiring[c.name]).d) == -loc.step(c.d)
