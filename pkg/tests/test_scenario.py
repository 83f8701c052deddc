import math

import numpy as np
import pytest

from u1corr.dynamics import Coherent, Excited
from u1corr.model import Drive, Hopping, Kerr
from u1corr.scenario import (
    BUNDLED, CrossReferenceError, KindMismatchError, ScenarioError, ScenarioSyntaxError,
    UnknownKeyError, from_dict, loads, parse_scenario, render, set_parameter, to_dict,
)

BASE = """
name = "t"
gamma = 2.0

[[modes]]
label = "a"
kind = "boson"
cutoff = 5

[[modes]]
label = "q"
kind = "two_level"

[[terms]]
kind = "jc"
boson = "a"
atom = "q"
rate = 0.25

[[channels]]
mode = "a"
kind = "loss"
rate = 1.0

[initial.a]
kind = "coherent"
n = 0.5
phase = 0.3

[initial.q]
kind = "excited"

[time]
t_end = 3.0
n_points = 31
"""


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_round_trip(name):
    scen = parse_scenario(name)
    again = loads(render(scen))
    assert again == scen
    assert to_dict(again) == to_dict(scen)


def test_fig1_parameters():
    scen = parse_scenario("fig1")
    spec = scen.model()
    assert [m.cutoff for m in spec.space.modes] == [12, 12]
    assert Hopping(0, 1, 1.5) in spec.terms
    assert Kerr(0, 0.25) in spec.terms and Kerr(1, 0.25) in spec.terms
    amps = scen.coherent_amplitudes()
    np.testing.assert_allclose(np.abs(amps) ** 2, [1.7, 0.22])


def test_fig2_parameters():
    scen = parse_scenario("fig2")
    assert scen.initial_specs()[1] == Excited()
    assert scen.space.dims == (9, 2)


def test_units_of_gamma():
    scen = loads(BASE)
    spec = scen.model()
    assert spec.terms[0].eta == pytest.approx(0.5)
    assert spec.channels[0].rate == pytest.approx(2.0)
    times = scen.times()
    assert times[-1] == pytest.approx(1.5) and times.size == 31
    a = scen.initial_specs()[0]
    assert isinstance(a, Coherent)
    assert a.alpha == pytest.approx(math.sqrt(0.5) * complex(math.cos(0.3), math.sin(0.3)))


def test_gaussian_drive():
    text = BASE + """
[[terms]]
kind = "drive"
mode = "a"
rate = 0.5
envelope = { kind = "gaussian", center = 1.0, width = 0.2 }
"""
    scen = loads(text)
    drive = [t for t in scen.model().terms if isinstance(t, Drive)][0]
    assert not scen.model().autonomous
    assert drive.envelope(0.5) == pytest.approx(1.0)
    assert loads(render(scen)) == scen


def _replace(old, new):
    assert old in BASE
    return BASE.replace(old, new)


@pytest.mark.parametrize("text, exc, code", [
    (BASE + "\n[time\n", ScenarioSyntaxError, 4),
    (BASE + "\nbogus = 1\n", UnknownKeyError, 5),
    (_replace('kind = "loss"', 'kind = "loss"\nfoo = 2'), UnknownKeyError, 5),
    (_replace('mode = "a"\nkind = "loss"', 'mode = "zz"\nkind = "loss"'), CrossReferenceError, 6),
    (_replace('boson = "a"\natom = "q"', 'boson = "q"\natom = "a"'), KindMismatchError, 7),
    (_replace('kind = "excited"', 'kind = "fock"\nn = 1'), KindMismatchError, 7),
    (_replace("t_end = 3.0", "t_end = -1.0"), ScenarioError, 2),
    (_replace("cutoff = 5", "cutoff = -2"), ScenarioError, 2),
], ids=["syntax", "unknown-top-key", "unknown-channel-key", "bad-mode-ref", "jc-kinds",
        "fock-on-atom", "negative-time", "negative-cutoff"])
def test_validation_errors(text, exc, code):
    with pytest.raises(exc) as info:
        loads(text)
    assert info.value.exit_code == code


def test_missing_initial_state():
    with pytest.raises(ScenarioError):
        loads(BASE.replace('[initial.q]\nkind = "excited"\n', ""))


def test_set_parameter():
    data = to_dict(parse_scenario("fig1"))
    out = set_parameter(data, "terms.0.rate", 2.0)
    assert out["terms"][0]["rate"] == 2.0 and data["terms"][0]["rate"] == 1.5
    assert from_dict(out).model().terms[0] == Hopping(0, 1, 2.0)
    with pytest.raises(ScenarioError):
        set_parameter(data, "terms.9.rate", 1.0)
    with pytest.raises(ScenarioError):
        set_parameter(data, "name", 1.0)


def test_with_cutoff():
    scen = parse_scenario("fig1").with_cutoff(6)
    assert scen.space.dims == (7, 7)


def test_unknown_file():
    with pytest.raises(FileNotFoundError):
        parse_scenario("/nonexistent/x.toml")
