"""Lindblad right-hand side, initial states and the adaptive density-matrix integrator."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.integrate import DOP853

from .hilbert import HilbertSpace, ModeKind, dagger, is_hermitian
from .model import ModelSpec, build_jump_operators, drive_operators, static_hamiltonian

log = logging.getLogger(__name__)

CONVENTION = (
    "D(rho) = sum_i gamma_i (2 F_i rho F_i^dag - F_i^dag F_i rho - rho F_i^dag F_i); "
    "single-mode linear loss at rate gamma gives d<n>/dt = -2 gamma <n>"
)

PSD_WARN = -1e-7


class IntegrationError(RuntimeError):
    pass


class TruncationError(IntegrationError):
    """Population at the Fock cutoff exceeded the configured bound."""


# -- initial states ---------------------------------------------------------

@dataclass(frozen=True)
class Coherent:
    alpha: complex

    @classmethod
    def from_mean(cls, n: float, phase: float = 0.0) -> "Coherent":
        return cls(math.sqrt(n) * complex(math.cos(phase), math.sin(phase)))


@dataclass(frozen=True)
class Fock:
    n: int


@dataclass(frozen=True)
class Ground:
    pass


@dataclass(frozen=True)
class Excited:
    pass


InitialStateSpec = Union[Coherent, Fock, Ground, Excited]


def _mode_vector(mode, spec) -> np.ndarray:
    d = mode.dim
    v = np.zeros(d, dtype=complex)
    if isinstance(spec, Coherent):
        if not mode.is_boson:
            raise ValueError(f"coherent state requested on two-level mode {mode.label!r}")
        # log-space amplitudes keep large n finite
        n = np.arange(d)
        log_fact = np.array([math.lgamma(k + 1) for k in n])
        if spec.alpha == 0:
            v[0] = 1.0
        else:
            mag = abs(spec.alpha)
            ph = spec.alpha / mag
            v = np.exp(n * math.log(mag) - 0.5 * log_fact) * ph ** n
        v = v / np.linalg.norm(v)
    elif isinstance(spec, Fock):
        if not mode.is_boson:
            raise ValueError(f"Fock state requested on two-level mode {mode.label!r}")
        if not 0 <= spec.n <= mode.cutoff:
            raise ValueError(f"Fock({spec.n}) exceeds cutoff {mode.cutoff} of mode {mode.label!r}")
        v[spec.n] = 1.0
    elif isinstance(spec, (Ground, Excited)):
        if mode.kind is not ModeKind.TWO_LEVEL:
            raise ValueError(f"{type(spec).__name__} requested on bosonic mode {mode.label!r}")
        v[1 if isinstance(spec, Excited) else 0] = 1.0
    else:
        raise TypeError(f"unknown initial state {spec!r}")
    return v


def initial_state(space: HilbertSpace, specs: Sequence[InitialStateSpec]) -> np.ndarray:
    if len(specs) != space.n_modes:
        raise ValueError(f"need one initial state per mode ({space.n_modes}), got {len(specs)}")
    psi = np.ones(1, dtype=complex)
    for mode, s in zip(space.modes, specs):
        psi = np.kron(psi, _mode_vector(mode, s))
    return np.outer(psi, psi.conj())


# -- right-hand side ----------------------------------------------------------

class LindbladGenerator:
    """Precomputed pieces of the master-equation right-hand side for one model."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.dim = spec.space.dim
        self.jumps = [(rate, f, dagger(f)) for rate, f in build_jump_operators(spec) if rate != 0]
        loss = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for rate, f, fd in self.jumps:
            loss = loss + rate * (fd @ f)
        self.h0 = static_hamiltonian(spec)
        self.heff0 = (self.h0 - 1j * loss).tocsr()
        self.drives = drive_operators(spec)

    def effective_hamiltonian(self, t: float):
        heff = self.heff0
        for envelope, op in self.drives:
            h = envelope(t)
            if h != 0:
                heff = heff + h * op
        return heff

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        heff = self.effective_hamiltonian(t)
        hrho = heff @ rho
        # rho @ heff^dag == (heff @ rho^dag)^dag
        out = -1j * (hrho - (heff @ rho.conj().T).conj().T)
        for rate, f, fd in self.jumps:
            out += (2 * rate) * (f @ (fd.T @ rho.T).T)
        return out


def lindblad_rhs(spec: ModelSpec, rho: np.ndarray, t: float = 0.0) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (spec.space.dim, spec.space.dim):
        raise ValueError(f"density matrix shape {rho.shape} does not match dim {spec.space.dim}")
    return LindbladGenerator(spec)(t, rho)


# -- leakage ------------------------------------------------------------------

def cutoff_mask(space: HilbertSpace) -> np.ndarray:
    occ = space.occupations()
    mask = np.zeros(space.dim, dtype=bool)
    for i, mode in enumerate(space.modes):
        if mode.is_boson:
            mask |= occ[:, i] == mode.cutoff
    return mask


def measure_leakage(rho: np.ndarray, space: HilbertSpace) -> float:
    return float(np.real(np.diagonal(rho)[cutoff_mask(space)]).sum())


# -- integration --------------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    records: dict
    final_state: np.ndarray
    leakage_max: float
    min_eigenvalue: float = 0.0
    n_steps: int = 0
    meta: dict = field(default_factory=dict)

    def series(self, name: str) -> np.ndarray:
        return self.records[name]


class _Observables:
    """Fast expectation values Tr(O rho); diagonal operators use only diag(rho)."""

    def __init__(self, ops: Mapping[str, object]):
        self.names = list(ops)
        self.diag = {}
        self.full = {}
        self.hermitian = {}
        for name, op in ops.items():
            op = sp.csr_matrix(op)
            self.hermitian[name] = is_hermitian(op)
            off = op - sp.diags(op.diagonal())
            off.eliminate_zeros()
            if off.nnz == 0:
                self.diag[name] = op.diagonal()
            else:
                self.full[name] = op.T.tocsr()  # Tr(O rho) = sum(O^T * rho)

    def evaluate(self, rho: np.ndarray) -> dict:
        d = np.diagonal(rho)
        out = {}
        for name in self.names:
            if name in self.diag:
                val = np.dot(self.diag[name], d)
            else:
                val = self.full[name].multiply(rho).sum()
            out[name] = val.real if self.hermitian[name] else complex(val)
        return out


def integrate(spec: ModelSpec, rho0: np.ndarray, times: Sequence[float], tol: float = 1e-9,
              observables: Mapping[str, object] | None = None, max_leakage: float | None = None,
              psd_checks: int = 25) -> Trajectory:
    """Integrate the master equation with an adaptive 8(5,3) Runge-Kutta scheme.

    Observables are recorded at every grid point in ``times``; the state is
    sampled by dense output, so the grid does not constrain the step size.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d grid")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if tol <= 0:
        raise ValueError("tol must be positive")
    space = spec.space
    dim = space.dim
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise ValueError(f"initial state shape {rho0.shape} does not match dim {dim}")

    gen = LindbladGenerator(spec)
    obs = _Observables(observables or {})
    mask = cutoff_mask(space)
    psd_every = max(1, len(times) // max(psd_checks, 1))

    records = {name: [] for name in obs.names}
    records["leakage"] = []
    leak_max = 0.0
    min_eig = 0.0

    def record(k, rho):
        nonlocal min_eig
        for name, val in obs.evaluate(rho).items():
            records[name].append(val)
        records["leakage"].append(float(np.real(np.diagonal(rho)[mask]).sum()))
        if k % psd_every == 0 or k == len(times) - 1:
            lo = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
            min_eig = min(min_eig, lo)
            if lo < PSD_WARN:
                log.warning("density matrix eigenvalue %.3e at t=%.6g", lo, times[k])

    def check_leak(rho, t):
        nonlocal leak_max
        leak = float(np.real(np.diagonal(rho)[mask]).sum())
        leak_max = max(leak_max, leak)
        if max_leakage is not None and leak > max_leakage:
            raise TruncationError(
                f"cutoff population {leak:.3e} exceeds bound {max_leakage:.3e} at t={t:.6g}; raise the cutoff")

    check_leak(rho0, times[0])
    record(0, rho0)
    rho = rho0
    n_steps = 0
    if len(times) > 1:
        fun = lambda t, y: gen(t, y.reshape(dim, dim)).ravel()
        solver = DOP853(fun, times[0], rho0.ravel().copy(), times[-1],
                        rtol=tol, atol=tol * 1e-3)
        k = 1
        while k < len(times):
            msg = solver.step()
            if solver.status == "failed":
                raise IntegrationError(f"integrator failed at t={solver.t:.6g}: {msg}")
            n_steps += 1
            check_leak(solver.y.reshape(dim, dim), solver.t)
            if k < len(times) and times[k] <= solver.t:
                dense = solver.dense_output()
                while k < len(times) and times[k] <= solver.t:
                    rho = solver.y.reshape(dim, dim) if times[k] == solver.t else dense(times[k]).reshape(dim, dim)
                    record(k, rho)
                    k += 1
        rho = solver.y.reshape(dim, dim).copy()

    out = {}
    for name, vals in records.items():
        out[name] = np.asarray(vals)
    return Trajectory(times=times, records=out, final_state=rho, leakage_max=leak_max,
                      min_eigenvalue=min_eig, n_steps=n_steps)
