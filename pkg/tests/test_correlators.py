import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import poch

from u1corr.correlators import (
    IDENTITIES, IdentityMismatch, UndefinedCorrelator, auxiliary_observables,
    build_correlator_set, conservation_report, derivative_crosscheck, derived_series,
    finite_difference, g2_grouped, g2_pair, g_tot, identity_params, normal_ordered_power,
    safe_ratio, standard_observables,
)
from u1corr.dynamics import Coherent, Excited, Fock, Ground, initial_state, integrate
from u1corr.hilbert import HilbertSpace, ModeSpec, total_number_operator
from u1corr.model import DissipatorChannel, Drive, Hopping, Kerr, ModelSpec, build_hamiltonian

from conftest import dense


def _falling(n, m):
    # n (n-1) ... (n-m+1), via the Pochhammer symbol
    return poch(n - m + 1, m)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from([0, 1, 2, 3, -1]), min_size=1, max_size=3), st.integers(2, 4))
def test_normal_ordered_power_is_falling_factorial(cut, m):
    modes = tuple(ModeSpec.two_level(f"q{k}") if c < 0 else ModeSpec.boson(f"b{k}", c)
                  for k, c in enumerate(cut))
    space = HilbertSpace(modes)
    j = dense(normal_ordered_power(space, m))
    total = space.occupations().sum(axis=1).astype(float)
    np.testing.assert_allclose(j, np.diag(_falling(total, m)), atol=1e-10)


def test_j2_equals_n_squared_minus_n():
    space = HilbertSpace((ModeSpec.boson("a", 4), ModeSpec.boson("b", 3), ModeSpec.two_level("q")))
    n = dense(total_number_operator(space))
    np.testing.assert_allclose(dense(normal_ordered_power(space, 2)), n @ n - n, atol=1e-12)


def test_j2_boson_two_level_explicit():
    space = HilbertSpace((ModeSpec.boson("a", 3), ModeSpec.two_level("q")))
    a = np.kron(np.diag(np.sqrt([1.0, 2, 3]), 1), np.eye(2))
    s = np.kron(np.eye(4), [[0.0, 1.0], [0.0, 0.0]])
    expected = a.T @ a.T @ a @ a + 2 * (a.T @ a) @ (s.T @ s)
    np.testing.assert_allclose(dense(normal_ordered_power(space, 2)), expected, atol=1e-12)


def test_order_validation():
    space = HilbertSpace((ModeSpec.boson("a", 2),))
    with pytest.raises(ValueError):
        build_correlator_set(space, 1)


def test_fock_product_value():
    space = HilbertSpace((ModeSpec.boson("a1", 2), ModeSpec.boson("a2", 2)))
    cs = build_correlator_set(space, 2)
    rho = initial_state(space, [Fock(2), Fock(1)])
    assert g_tot(rho, cs) == pytest.approx(6 / 9, abs=1e-14)
    cs3 = build_correlator_set(space, 3)
    assert g_tot(rho, cs3) == pytest.approx(6 / 27, abs=1e-14)


def test_pair_correlators_single_photons():
    space = HilbertSpace((ModeSpec.boson("a1", 2), ModeSpec.boson("a2", 2)))
    cs = build_correlator_set(space, 2)
    rho = initial_state(space, [Fock(1), Fock(1)])
    assert g2_pair(rho, cs, 0, 1) == pytest.approx(1.0)
    assert g2_grouped(rho, cs, 0, 1) == pytest.approx(0.25)
    assert g2_grouped(rho, cs, 0, 0) == pytest.approx(0.0)
    with pytest.raises(UndefinedCorrelator):
        g2_pair(initial_state(space, [Fock(1), Fock(0)]), cs, 0, 1)


def test_coherent_product_is_poissonian():
    space = HilbertSpace((ModeSpec.boson("a1", 20), ModeSpec.boson("a2", 20)))
    rho = initial_state(space, [Coherent.from_mean(1.7), Coherent.from_mean(0.22, 1.0)])
    for m in (2, 3):
        assert g_tot(rho, build_correlator_set(space, m)) == pytest.approx(1.0, abs=1e-9)


def test_boson_plus_excited_atom_value():
    space = HilbertSpace((ModeSpec.boson("a", 8), ModeSpec.two_level("q")))
    rho = initial_state(space, [Coherent.from_mean(0.18), Excited()])
    n = 0.18
    assert g_tot(rho, build_correlator_set(space, 2)) == pytest.approx((n * n + 2 * n) / (1 + n) ** 2, abs=1e-9)


def test_vacuum_undefined():
    space = HilbertSpace((ModeSpec.boson("a", 2), ModeSpec.two_level("q")))
    with pytest.raises(UndefinedCorrelator):
        g_tot(initial_state(space, [Fock(0), Ground()]), build_correlator_set(space, 2))


def test_j_commutes_with_symmetric_hamiltonian(fig1_spec):
    h = build_hamiltonian(fig1_spec)
    j = normal_ordered_power(fig1_spec.space, 2)
    c = h @ j - j @ h
    assert abs(c).max() < 1e-12 * abs(h).max() * abs(j).max()


def test_safe_ratio_and_derived_series():
    np.testing.assert_array_equal(safe_ratio([1.0, 2.0], [2.0, 0.0]), [0.5, np.nan])
    space = HilbertSpace((ModeSpec.boson("a", 2),))
    rec = {"n_a": np.array([2.0, 0.0]), "P_a_a": np.array([2.0, 0.0]),
           "N_total": np.array([2.0, 0.0]), "J_2": np.array([2.0, 0.0])}
    out = derived_series(space, rec, (2,))
    np.testing.assert_array_equal(out["g_tot_2"], [0.5, np.nan])
    # auto term: <a^dag a^dag a a> / (2 n)^2
    np.testing.assert_array_equal(out["G2_a_a"], [0.125, np.nan])


def test_standard_observable_names():
    space = HilbertSpace((ModeSpec.boson("x", 1), ModeSpec.boson("y", 1)))
    assert list(standard_observables(space, (2, 3))) == [
        "n_x", "n_y", "P_x_x", "P_x_y", "P_y_y", "N_total", "J_2", "J_3"]


def test_conservation_report_flags_floor():
    class T:
        records = {"N_total": np.array([1.0, 0.5, 1e-12]), "J_2": np.array([1.0, 0.25, 0.0])}
    space = HilbertSpace((ModeSpec.boson("a", 2),))
    rep = conservation_report(T, build_correlator_set(space, 2))
    assert rep.floor_breached and rep.conserved and rep.series.size == 2


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5), st.floats(0.01, 0.5))
def test_finite_difference_exact_on_quartics(coef, h):
    t = np.arange(12) * h
    y = np.polyval(coef, t)
    d = finite_difference(y, t)
    ref = np.polyval(np.polyder(coef), t)
    np.testing.assert_allclose(d[2:-2], ref[2:-2], rtol=1e-7, atol=1e-7 * (1 + abs(ref).max()))
    assert np.isnan(d[:2]).all() and np.isnan(d[-2:]).all()


def test_finite_difference_needs_uniform_grid():
    with pytest.raises(ValueError):
        finite_difference(np.zeros(5), np.array([0, 1, 2, 4, 5.0]))


def _driven_run(gamma=1.0, f=0.5, g=0.3):
    space = HilbertSpace((ModeSpec.boson("a", 12),))
    spec = ModelSpec(space, [Kerr(0, g), Drive(0, f)], [DissipatorChannel(0, "loss", gamma)])
    obs = standard_observables(space, (2,))
    for name in ("eq15", "eq16", "eq17"):
        obs.update(auxiliary_observables(spec, name))
    traj = integrate(spec, initial_state(space, [Fock(2)]), np.linspace(0, 3, 301), tol=1e-11,
                     observables=obs)
    return spec, traj


def test_single_mode_identities():
    spec, traj = _driven_run()
    for name in ("eq15", "eq16", "eq17"):
        assert derivative_crosscheck(traj, spec, name) < 1e-5


def test_identity_rejects_wrong_scenario():
    spec, _ = _driven_run()
    with pytest.raises(IdentityMismatch):
        identity_params(spec, "eq18")
    with pytest.raises(IdentityMismatch):
        identity_params(spec, "eq99")
    assert {"eq15", "eq16", "eq17", "eq18", "eq19", "eq20"} <= set(IDENTITIES)


def test_pair_identities_small_dimer():
    space = HilbertSpace((ModeSpec.boson("a1", 8), ModeSpec.boson("a2", 8)))
    spec = ModelSpec(space, [Hopping(0, 1, 1.2), Kerr(0, 0.3), Kerr(1, 0.3)],
                     [DissipatorChannel(0, "loss", 0.7), DissipatorChannel(1, "loss", 0.7)])
    obs = standard_observables(space, (2,))
    for name in ("eq18", "eq19", "eq20"):
        obs.update(auxiliary_observables(spec, name))
    rho0 = initial_state(space, [Coherent.from_mean(1.0), Fock(1)])
    traj = integrate(spec, rho0, np.linspace(0, 2, 201), tol=1e-11, observables=obs)
    for name in ("eq18", "eq19", "eq20"):
        assert derivative_crosscheck(traj, spec, name) < 1e-5
