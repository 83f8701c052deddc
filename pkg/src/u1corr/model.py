"""Hamiltonian terms, dissipator channels and the U(1) symmetry analyzer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    HilbertSpace,
    ModeKind,
    commutator,
    dagger,
    frobenius,
    mode_lowering,
    number_operator,
    total_number_operator,
)


class ModelError(ValueError):
    """Invalid model specification (bad index, wrong mode kind, ...)."""


class KindMismatch(ModelError):
    pass


# -- drive envelopes -------------------------------------------------------

@dataclass(frozen=True)
class CW:
    """Constant envelope h(t) = 1."""

    def __call__(self, t: float) -> float:
        return 1.0

    def to_dict(self) -> dict:
        return {"kind": "cw"}


@dataclass(frozen=True)
class GaussianPulse:
    center: float
    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise ModelError("gaussian envelope width must be positive")

    def __call__(self, t: float) -> float:
        return math.exp(-0.5 * ((t - self.center) / self.width) ** 2)

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "center": self.center, "width": self.width}


Envelope = Union[CW, GaussianPulse]


# -- Hamiltonian terms ------------------------------------------------------

@dataclass(frozen=True)
class Detuning:
    mode: int
    omega: float


@dataclass(frozen=True)
class Hopping:
    i: int
    j: int
    tau: float


@dataclass(frozen=True)
class Kerr:
    mode: int
    g: float


@dataclass(frozen=True)
class JCCoupling:
    boson: int
    atom: int
    eta: float


@dataclass(frozen=True)
class Drive:
    mode: int
    f: float
    envelope: Envelope = field(default_factory=CW)


HamiltonianTerm = Union[Detuning, Hopping, Kerr, JCCoupling, Drive]


@dataclass(frozen=True)
class DissipatorChannel:
    mode: int
    kind: str = "loss"  # "loss" or "gain"
    rate: float = 1.0
    photons: int = 1

    def __post_init__(self):
        if self.kind not in ("loss", "gain"):
            raise ModelError(f"unknown channel kind {self.kind!r}")
        if self.rate < 0:
            raise ModelError("channel rates must be non-negative")
        if int(self.photons) != self.photons or self.photons < 1:
            raise ModelError("photon number of a loss channel must be a positive integer")
        if self.kind == "gain" and self.photons != 1:
            raise ModelError("gain channels are single-photon only")

    @property
    def linear(self) -> bool:
        return self.photons == 1


@dataclass(frozen=True)
class ModelSpec:
    space: HilbertSpace
    terms: tuple = ()
    channels: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "channels", tuple(self.channels))
        self.validate()

    def validate(self) -> None:
        n = self.space.n_modes
        modes = self.space.modes

        def check(idx):
            if not isinstance(idx, (int, np.integer)) or not 0 <= idx < n:
                raise ModelError(f"mode index {idx!r} out of range for {n} modes")

        for term in self.terms:
            if isinstance(term, (Detuning, Kerr, Drive)):
                check(term.mode)
                if isinstance(term, Kerr) and not modes[term.mode].is_boson:
                    raise KindMismatch("Kerr term requires a bosonic mode")
            elif isinstance(term, Hopping):
                check(term.i), check(term.j)
                if term.i == term.j:
                    raise ModelError("hopping must connect two distinct modes")
            elif isinstance(term, JCCoupling):
                check(term.boson), check(term.atom)
                if term.boson == term.atom:
                    raise ModelError("JC coupling must connect two distinct modes")
                if not modes[term.boson].is_boson or modes[term.atom].kind is not ModeKind.TWO_LEVEL:
                    raise KindMismatch("JC coupling needs (boson, two-level) modes")
            else:
                raise ModelError(f"unknown Hamiltonian term {term!r}")
        for ch in self.channels:
            check(ch.mode)
            if not modes[ch.mode].is_boson:
                if ch.kind == "gain":
                    raise KindMismatch("gain channel on a two-level mode")
                if ch.photons != 1:
                    raise KindMismatch("multi-photon loss on a two-level mode")

    @property
    def drives(self) -> tuple:
        return tuple(t for t in self.terms if isinstance(t, Drive))

    @property
    def autonomous(self) -> bool:
        return all(isinstance(d.envelope, CW) or d.f == 0 for d in self.drives)


def _term_operator(space: HilbertSpace, term) -> sp.csr_matrix:
    if isinstance(term, Detuning):
        return term.omega * number_operator(space, term.mode)
    if isinstance(term, Hopping):
        ai, aj = mode_lowering(space, term.i), mode_lowering(space, term.j)
        return term.tau * (dagger(ai) @ aj + dagger(aj) @ ai)
    if isinstance(term, Kerr):
        a = mode_lowering(space, term.mode)
        ad = dagger(a)
        return term.g * (ad @ ad @ a @ a)
    if isinstance(term, JCCoupling):
        a, s = mode_lowering(space, term.boson), mode_lowering(space, term.atom)
        return term.eta * (dagger(a) @ s + a @ dagger(s))
    if isinstance(term, Drive):
        c = mode_lowering(space, term.mode)
        return term.f * (c + dagger(c))
    raise ModelError(f"unknown Hamiltonian term {term!r}")


def static_hamiltonian(spec: ModelSpec) -> sp.csr_matrix:
    """Sum of all time-independent terms (everything except drives)."""
    h = sp.csr_matrix((spec.space.dim, spec.space.dim), dtype=complex)
    for term in spec.terms:
        if not isinstance(term, Drive):
            h = h + _term_operator(spec.space, term)
    return h.tocsr()


def drive_operators(spec: ModelSpec) -> list:
    """[(envelope, f * (c + c^dag))] for every drive term."""
    return [(d.envelope, _term_operator(spec.space, d).tocsr()) for d in spec.drives]


def build_hamiltonian(spec: ModelSpec, t: float = 0.0) -> sp.csr_matrix:
    h = static_hamiltonian(spec)
    for envelope, op in drive_operators(spec):
        h = h + envelope(t) * op
    return h.tocsr()


def build_jump_operators(spec: ModelSpec) -> list:
    out = []
    for ch in spec.channels:
        c = mode_lowering(spec.space, ch.mode)
        if ch.kind == "gain":
            f = dagger(c)
        else:
            f = sp.identity(spec.space.dim, dtype=complex, format="csr")
            for _ in range(ch.photons):
                f = f @ c
        out.append((ch.rate, f.tocsr()))
    return out


# -- symmetry analysis ------------------------------------------------------

@dataclass(frozen=True)
class SymmetryReport:
    commutator_norm: float
    is_u1_symmetric: bool
    linear_dissipation: bool
    uniform_rates: bool
    gain_free: bool

    @property
    def predicted_conserved(self) -> bool:
        return self.is_u1_symmetric and self.linear_dissipation and self.uniform_rates and self.gain_free

    def as_dict(self) -> dict:
        return {
            "commutator_norm": self.commutator_norm,
            "is_u1_symmetric": self.is_u1_symmetric,
            "linear_dissipation": self.linear_dissipation,
            "uniform_rates": self.uniform_rates,
            "gain_free": self.gain_free,
            "predicted_conserved": self.predicted_conserved,
        }


def _rates_uniform(spec: ModelSpec) -> bool:
    if not spec.channels:
        return True
    # each mode must lose population at the same per-particle rate
    per_mode = {}
    for ch in spec.channels:
        per_mode[ch.mode] = per_mode.get(ch.mode, 0.0) + ch.rate
    rates = list(per_mode.values())
    if not np.allclose(rates, rates[0], rtol=1e-12, atol=0.0):
        return False
    return set(range(spec.space.n_modes)) <= set(per_mode)


def check_u1_symmetry(spec: ModelSpec, tol: float = 1e-10,
                      sample_times: Sequence[float] = (0.0,)) -> SymmetryReport:
    if tol <= 0:
        raise ValueError("tol must be positive")
    if len(sample_times) == 0:
        raise ValueError("need at least one sample time")
    n_op = total_number_operator(spec.space)
    n_norm = frobenius(n_op)
    worst = 0.0
    for t in sample_times:
        h = build_hamiltonian(spec, t)
        h_norm = frobenius(h)
        if h_norm == 0.0 or n_norm == 0.0:
            continue
        worst = max(worst, frobenius(commutator(h, n_op)) / (h_norm * n_norm))
    return SymmetryReport(
        commutator_norm=worst,
        is_u1_symmetric=worst < tol,
        linear_dissipation=all(ch.linear for ch in spec.channels),
        uniform_rates=_rates_uniform(spec),
        gain_free=all(ch.kind == "loss" for ch in spec.channels),
    )
