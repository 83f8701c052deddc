"""Equal-time correlators, the total m-th order correlator, and conservation checks."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .hilbert import HilbertSpace, dagger, mode_lowering, total_number_operator
from .model import Detuning, Drive, Hopping, Kerr, ModelSpec

FLOOR = 1e-9
DEFAULT_THRESHOLD = 1e-4


class UndefinedCorrelator(ValueError):
    """Denominator of a normalized correlator fell below the floor."""


class IdentityMismatch(ValueError):
    """The chosen derivative identity does not apply to the model."""


@dataclass(frozen=True)
class CorrelatorSet:
    m: int
    space: HilbertSpace
    J_op: sp.csr_matrix
    N_op: sp.csr_matrix
    n_ops: tuple
    pair_ops: dict  # (i, j) with i <= j -> c_i^dag c_j^dag c_i c_j


def normal_ordered_power(space: HilbertSpace, m: int) -> sp.csr_matrix:
    """:N^m: as the sum over all mode multi-indices of c^dag...c^dag c...c."""
    lows = [mode_lowering(space, i) for i in range(space.n_modes)]
    raises = [dagger(c) for c in lows]
    dim = space.dim
    total = sp.csr_matrix((dim, dim), dtype=complex)
    for idx in itertools.product(range(space.n_modes), repeat=m):
        term = sp.identity(dim, dtype=complex, format="csr")
        for i in idx:
            term = term @ raises[i]
        for i in reversed(idx):
            term = term @ lows[i]
        total = total + term
    total.eliminate_zeros()
    return total.tocsr()


def pair_operator(space: HilbertSpace, i: int, j: int) -> sp.csr_matrix:
    ci, cj = mode_lowering(space, i), mode_lowering(space, j)
    return (dagger(ci) @ dagger(cj) @ ci @ cj).tocsr()


def build_correlator_set(space: HilbertSpace, m: int) -> CorrelatorSet:
    if m < 2:
        raise ValueError(f"correlator order must be >= 2, got {m}")
    lows = [mode_lowering(space, i) for i in range(space.n_modes)]
    n_ops = tuple((dagger(c) @ c).tocsr() for c in lows)
    pairs = {(i, j): pair_operator(space, i, j)
             for i in range(space.n_modes) for j in range(i, space.n_modes)}
    return CorrelatorSet(m=m, space=space, J_op=normal_ordered_power(space, m),
                         N_op=total_number_operator(space), n_ops=n_ops, pair_ops=pairs)


def expect(op, rho: np.ndarray) -> complex:
    return complex(sp.csr_matrix(op).multiply(np.asarray(rho).T).sum())


def _real(val: complex, what: str) -> float:
    if abs(val.imag) > 1e-10:
        raise ValueError(f"{what} has imaginary part {val.imag:.3e}")
    return val.real


def g_tot(rho: np.ndarray, cs: CorrelatorSet, floor: float = FLOOR) -> float:
    n = _real(expect(cs.N_op, rho), "<N>")
    if n < floor:
        raise UndefinedCorrelator(f"<N> = {n:.3e} below floor {floor:.1e}")
    return _real(expect(cs.J_op, rho), "<J>") / n ** cs.m


def _pair(cs: CorrelatorSet, i: int, j: int):
    return cs.pair_ops[(min(i, j), max(i, j))]


def g2_pair(rho: np.ndarray, cs: CorrelatorSet, i: int, j: int, floor: float = FLOOR) -> float:
    ni = _real(expect(cs.n_ops[i], rho), "<n_i>")
    nj = _real(expect(cs.n_ops[j], rho), "<n_j>")
    if ni < floor or nj < floor:
        raise UndefinedCorrelator(f"occupations ({ni:.3e}, {nj:.3e}) below floor")
    return _real(expect(_pair(cs, i, j), rho), "pair correlator") / (ni * nj)


def g2_grouped(rho: np.ndarray, cs: CorrelatorSet, i: int, j: int, floor: float = FLOOR) -> float:
    """<c_i^dag c_j^dag c_i c_j> / (<n_i> + <n_j>)^2, the quantity plotted per mode pair."""
    ni = _real(expect(cs.n_ops[i], rho), "<n_i>")
    nj = _real(expect(cs.n_ops[j], rho), "<n_j>")
    if ni + nj < floor:
        raise UndefinedCorrelator(f"<n_i> + <n_j> = {ni + nj:.3e} below floor")
    return _real(expect(_pair(cs, i, j), rho), "pair correlator") / (ni + nj) ** 2


# -- observable bookkeeping shared by the engines and the CSV writer ---------

def pair_indices(space: HilbertSpace) -> list:
    n = space.n_modes
    return [(i, j) for i in range(n) for j in range(i, n)]


def standard_observables(space: HilbertSpace, orders) -> dict:
    """Operators recorded on every run, keyed by their series names."""
    ops = {}
    lows = [mode_lowering(space, i) for i in range(space.n_modes)]
    for label, c in zip(space.labels, lows):
        ops[f"n_{label}"] = (dagger(c) @ c).tocsr()
    for i, j in pair_indices(space):
        ops[f"P_{space.labels[i]}_{space.labels[j]}"] = pair_operator(space, i, j)
    ops["N_total"] = total_number_operator(space)
    for m in orders:
        ops[f"J_{m}"] = normal_ordered_power(space, m)
    return ops


def safe_ratio(num: np.ndarray, den: np.ndarray, floor: float = FLOOR) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(np.broadcast(num, den).shape, np.nan)
    ok = (den >= floor) & (den != 0)
    np.divide(num, den, out=out, where=ok)
    return out


def derived_series(space: HilbertSpace, records: dict, orders, floor: float = FLOOR) -> dict:
    """G2_<i>_<j> and g_tot_<m> series from the raw records; NaN where undefined."""
    out = {}
    labels = space.labels
    for i, j in pair_indices(space):
        li, lj = labels[i], labels[j]
        den = np.asarray(records[f"n_{li}"]) + np.asarray(records[f"n_{lj}"])
        g = safe_ratio(records[f"P_{li}_{lj}"], den ** 2, 0.0)
        g[den < floor] = np.nan
        out[f"G2_{li}_{lj}"] = g
    n = np.asarray(records["N_total"])
    for m in orders:
        g = safe_ratio(records[f"J_{m}"], n ** m, 0.0)
        g[n < floor] = np.nan
        out[f"g_tot_{m}"] = g
    return out


# -- conservation -------------------------------------------------------------

@dataclass(frozen=True)
class ConservationReport:
    m: int
    series: np.ndarray
    max_abs_dev: float
    max_rel_dev: float
    conserved: bool
    floor_breached: bool

    def as_dict(self) -> dict:
        return {"m": self.m, "max_abs_dev": self.max_abs_dev, "max_rel_dev": self.max_rel_dev,
                "conserved": self.conserved, "floor_breached": self.floor_breached}


def conservation_report(traj, cs: CorrelatorSet, threshold: float = DEFAULT_THRESHOLD,
                        floor: float = FLOOR) -> ConservationReport:
    key = f"J_{cs.m}"
    if key not in traj.records or "N_total" not in traj.records:
        raise KeyError(f"trajectory lacks '{key}' / 'N_total' records")
    n = np.asarray(traj.records["N_total"], dtype=float)
    j = np.asarray(traj.records[key], dtype=float)
    bad = np.nonzero(n < floor)[0]
    breached = bad.size > 0
    stop = bad[0] if breached else n.size
    series = j[:stop] / n[:stop] ** cs.m
    if series.size == 0:
        return ConservationReport(cs.m, series, np.nan, np.nan, False, True)
    dev = np.abs(series - series[0])
    max_abs = float(dev.max())
    max_rel = float(max_abs / abs(series[0])) if series[0] != 0 else max_abs
    return ConservationReport(cs.m, series, max_abs, max_rel, max_rel < threshold, breached)


# -- analytic derivative identities ------------------------------------------

def finite_difference(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Fourth-order centered derivative on a uniform grid; NaN at the two edge points."""
    y = np.asarray(y)
    h = t[1] - t[0]
    if not np.allclose(np.diff(t), h, rtol=1e-9, atol=0):
        raise ValueError("finite differences need a uniform grid")
    d = np.full(y.shape, np.nan, dtype=y.dtype if np.iscomplexobj(y) else float)
    if y.size >= 5:
        d[2:-2] = (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * h)
    return d


@dataclass(frozen=True)
class Identity:
    name: str
    arity: str  # "single", "pair" or "absorber"
    lhs: str
    aux: Callable  # space -> {name: operator}
    rhs: Callable  # (records, params, t) -> array
    description: str


def _single_params(spec: ModelSpec) -> dict:
    sp_ = spec.space
    if sp_.n_modes != 1 or not sp_.modes[0].is_boson:
        raise IdentityMismatch("identity needs exactly one bosonic mode")
    drives = []
    for term in spec.terms:
        if isinstance(term, Drive):
            drives.append(term)
        elif not isinstance(term, (Detuning, Kerr)):
            raise IdentityMismatch(f"term {type(term).__name__} not covered by the single-mode identity")
    gamma = 0.0
    for ch in spec.channels:
        if ch.kind != "loss" or ch.photons != 1:
            raise IdentityMismatch("single-mode identities assume linear loss only")
        gamma += ch.rate

    def drive(t):
        return np.array([sum(d.f * d.envelope(tk) for d in drives) for tk in np.atleast_1d(t)])

    return {"gamma": gamma, "drive": drive}


def _pair_params(spec: ModelSpec) -> dict:
    sp_ = spec.space
    if sp_.n_modes != 2 or not all(m.is_boson for m in sp_.modes):
        raise IdentityMismatch("identity needs exactly two bosonic modes")
    tau = 0.0
    for term in spec.terms:
        if isinstance(term, Hopping):
            tau += term.tau
        elif not isinstance(term, (Detuning, Kerr)):
            raise IdentityMismatch(f"term {type(term).__name__} not covered by the two-mode identity")
    gammas = [0.0, 0.0]
    for ch in spec.channels:
        if ch.kind != "loss" or ch.photons != 1:
            raise IdentityMismatch("two-mode identities assume linear loss only")
        gammas[ch.mode] += ch.rate
    return {"tau": tau, "gamma1": gammas[0], "gamma2": gammas[1]}


def _absorber_params(spec: ModelSpec) -> dict:
    sp_ = spec.space
    if sp_.n_modes != 1 or not sp_.modes[0].is_boson:
        raise IdentityMismatch("absorber identities need exactly one bosonic mode")
    for term in spec.terms:
        if not isinstance(term, (Detuning, Kerr)):
            raise IdentityMismatch(f"term {type(term).__name__} not covered by the absorber identity")
    gamma = 0.0
    for ch in spec.channels:
        if ch.kind != "loss" or ch.photons != 2:
            raise IdentityMismatch("absorber identities assume two-photon loss only")
        gamma += ch.rate
    return {"gamma": gamma}


def _ops1(space):
    a = mode_lowering(space, 0)
    ad = dagger(a)
    n = ad @ a
    return {"a": a, "n": n, "A": ad @ ad @ a @ a, "ad_a_a": ad @ a @ a,
            "n3": n @ n @ n}


def _ops2(space):
    a1, a2 = mode_lowering(space, 0), mode_lowering(space, 1)
    d1, d2 = dagger(a1), dagger(a2)
    n1, n2 = d1 @ a1, d2 @ a2
    return {
        "n1": n1, "n2": n2, "A1": d1 @ d1 @ a1 @ a1, "C": n1 @ n2,
        "d1_a2": d1 @ a2,
        "d1_a1_a1_d2": d1 @ a1 @ a1 @ d2,
        "n2_d1_a2": d2 @ a2 @ d1 @ a2,
        "d2_a1_n1": d2 @ a1 @ d1 @ a1,
        "d1_a2_n1": d1 @ a2 @ d1 @ a1,
        "n2_d2_a1": d2 @ a2 @ d2 @ a1,
    }


def _rhs_eq15(r, p, t):
    # i f [2<a^dag a a> - 2<a^dag a^dag a>] - 4 gamma <a^dag2 a2>
    x = r["ad_a_a"]
    return (1j * p["drive"](t) * (2 * x - 2 * np.conj(x))).real - 4 * p["gamma"] * r["A"]


def _rhs_eq16(r, p, t):
    a = r["a"]
    return (-1j * p["drive"](t) * (np.conj(a) - a)).real - 2 * p["gamma"] * r["n"]


def _lhs_g2(r):
    return np.asarray(r["A"]) / np.asarray(r["n"]) ** 2


def _rhs_eq17(r, p, t):
    n = np.asarray(r["n"])
    g = _lhs_g2(r)
    x, a = r["ad_a_a"], r["a"]
    bracket = 2 * x - 2 * np.conj(x) + 2 * n * g * (np.conj(a) - a)
    return (1j * p["drive"](t) / n ** 2 * bracket).real


def _rhs_eq18(r, p, t):
    x = r["d1_a1_a1_d2"]
    return (2j * p["tau"] * (x - np.conj(x))).real - 4 * p["gamma1"] * r["A1"]


def _rhs_eq19(r, p, t):
    x = r["d1_a2"]
    return (-1j * p["tau"] * (x - np.conj(x))).real - 2 * p["gamma1"] * r["n1"]


def _rhs_eq20(r, p, t):
    u = r["n2_d1_a2"] + r["d2_a1_n1"] - r["d1_a2_n1"] - r["n2_d2_a1"]
    return (-1j * p["tau"] * u).real - 2 * (p["gamma1"] + p["gamma2"]) * r["C"]


def _rhs_absorber_n(r, p, t):
    return -4 * p["gamma"] * np.asarray(r["A"])


def _rhs_absorber_j(r, p, t):
    # 2 gamma <n(n-1)(6-4n)> = 2 gamma (-4 n^3 + 10 n^2 - 6 n)
    n, n3, a = np.asarray(r["n"]), np.asarray(r["n3"]), np.asarray(r["A"])
    n2 = a + n
    return 2 * p["gamma"] * (-4 * n3 + 10 * n2 - 6 * n)


IDENTITIES = {
    "eq15": Identity("eq15", "single", "A", _ops1, _rhs_eq15,
                     "d<a^dag a^dag a a>/dt for a driven single mode"),
    "eq16": Identity("eq16", "single", "n", _ops1, _rhs_eq16,
                     "d<n>/dt for a driven single mode"),
    "eq17": Identity("eq17", "single", "g2", _ops1, _rhs_eq17,
                     "d g2/dt for a driven single mode"),
    "eq18": Identity("eq18", "pair", "A1", _ops2, _rhs_eq18,
                     "d<a1^dag a1^dag a1 a1>/dt for two hopping modes"),
    "eq19": Identity("eq19", "pair", "n1", _ops2, _rhs_eq19,
                     "d<n1>/dt for two hopping modes"),
    "eq20": Identity("eq20", "pair", "C", _ops2, _rhs_eq20,
                     "d<n1 n2>/dt for two hopping modes"),
    "absorber_n": Identity("absorber_n", "absorber", "n", _ops1, _rhs_absorber_n,
                           "d<n>/dt = -4 gamma <a^dag2 a2> under two-photon loss"),
    "absorber_j": Identity("absorber_j", "absorber", "A", _ops1, _rhs_absorber_j,
                           "d<a^dag2 a2>/dt = 2 gamma <n(n-1)(6-4n)> under two-photon loss"),
}

_PARAMS = {"single": _single_params, "pair": _pair_params, "absorber": _absorber_params}


def identity_params(spec: ModelSpec, identity: str) -> dict:
    if identity not in IDENTITIES:
        raise IdentityMismatch(f"unknown identity {identity!r}; choose from {sorted(IDENTITIES)}")
    return _PARAMS[IDENTITIES[identity].arity](spec)


def auxiliary_observables(spec: ModelSpec, identity: str) -> dict:
    identity_params(spec, identity)
    return {f"aux:{k}": v for k, v in IDENTITIES[identity].aux(spec.space).items()}


def derivative_crosscheck(traj, spec: ModelSpec, identity: str) -> float:
    """Max residual between the analytic rate and a finite-difference derivative.

    The residual is normalized by the largest magnitude of the analytic rate
    over the interior points (absolute if that scale vanishes).
    """
    ident = IDENTITIES.get(identity)
    params = identity_params(spec, identity)
    needed = [f"aux:{k}" for k in ident.aux(spec.space)]
    missing = [k for k in needed if k not in traj.records]
    if missing:
        raise KeyError(f"trajectory lacks auxiliary series {missing}")
    r = {k[4:]: np.asarray(traj.records[k]) for k in needed}
    t = np.asarray(traj.times)
    lhs = _lhs_g2(r) if ident.lhs == "g2" else np.real(r[ident.lhs])
    fd = finite_difference(lhs, t)
    rhs = np.asarray(ident.rhs(r, params, t), dtype=float)
    interior = slice(2, -2)
    resid = np.abs(fd[interior] - rhs[interior])
    scale = float(np.max(np.abs(rhs[interior]))) if resid.size else 0.0
    if not resid.size:
        raise ValueError("need at least five grid points for the finite-difference check")
    return float(resid.max() / scale) if scale > 1e-12 else float(resid.max())
