import json

import pytest

from idaf.builtin import (
    BUILTINS,
    SpecFormatError,
    data_file,
    dump_spec,
    load_spec,
    mesh4,
    mesh6,
    spec_from_dict,
    spec_to_dict,
    star,
)
from idaf.topology import UNBOUNDED, Structure, classify, reciprocal, validate


def test_star_table():
    s = star()
    rl, lr = s.connection("R_to_L"), s.connection("L_to_R")
    assert (set(rl.t1), set(rl.t2), rl.o, rl.d, rl.q, rl.f, rl.r) == \
        ({"root"}, {"leaf"}, "pipe", None, UNBOUNDED, False, None)
    assert (set(lr.t1), set(lr.t2), lr.o, lr.d, lr.q, lr.f, lr.r) == \
        ({"leaf"}, {"root"}, "pipe", None, 1, True, None)
    assert classify(s) is Structure.UNSTRUCTURED
    assert s.selection_policy.initial == "root" and s.selection_policy.join_default == "leaf"


def test_mesh4_table():
    m = mesh4()
    for d in ("north", "south", "east", "west"):
        c = m.connection(d)
        assert (c.d, c.q, c.f, c.r) == (d, 1, False, "cont_ref")
    assert m.group_of("east").members == {"north", "south", "east", "west"}
    assert m.group_of("east").rigid
    assert classify(m) is Structure.RIGIDLY_STRUCTURED


def test_mesh6_opposites():
    h = mesh6()
    assert len(h.connections) == 6
    for a in (0, 60, 120):
        assert reciprocal(h, f"d{a}").name == f"d{a + 180}"


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_json_round_trip(name):
    spec = BUILTINS[name]()
    again = spec_from_dict(json.loads(dump_spec(spec)))
    assert spec_to_dict(again) == spec_to_dict(spec)
    assert validate(again) == []
    assert again.locator is spec.locator


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_shipped_files_match_constructors(name):
    shipped = load_spec(data_file(name))
    assert spec_to_dict(shipped) == spec_to_dict(BUILTINS[name]())


def test_infinite_multiplicity_encoding():
    d = spec_to_dict(star())
    q = {c["name"]: c["q"] for c in d["connections"]}
    assert q == {"R_to_L": "inf", "L_to_R": 1}


def test_load_by_name_and_errors(tmp_path):
    assert load_spec("star").name == "star"
    bad = tmp_path / "bad.json"
    bad.write_text("not json")
    with pytest.raises(SpecFormatError):
        load_spec(bad)
    with pytest.raises(SpecFormatError):
        load_spec(tmp_path / "missing.json")
    d = spec_to_dict(mesh4())
    d["locator"] = "nowhere"
    with pytest.raises(SpecFormatError):
        spec_from_dict(d)
    with pytest.raises(SpecFormatError):
        spec_from_dict({"name": "x"})
