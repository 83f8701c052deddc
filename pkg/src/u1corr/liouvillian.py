"""Vectorized (superoperator) form of the master equation.

Independent of the matrix-form right-hand side in :mod:`u1corr.dynamics`;
used as the matrix-exponential reference propagator.  Vectorization is
row-major: vec(A rho B) = kron(A, B^T) vec(rho).
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .model import ModelSpec, build_hamiltonian, build_jump_operators


def _left(a, eye):
    return sp.kron(a, eye, format="csr")


def _right(b, eye):
    return sp.kron(eye, b.T, format="csr")


def vectorized_generator(spec: ModelSpec, t: float = 0.0) -> sp.csr_matrix:
    dim = spec.space.dim
    eye = sp.identity(dim, dtype=complex, format="csr")
    h = build_hamiltonian(spec, t)
    gen = -1j * (_left(h, eye) - _right(h, eye))
    for rate, f in build_jump_operators(spec):
        fd = f.conj().T
        fdf = fd @ f
        gen = gen + rate * (2 * sp.kron(f, f.conj(), format="csr") - _left(fdf, eye) - _right(fdf, eye))
    return gen.tocsr()


def propagate_expm(spec: ModelSpec, rho0: np.ndarray, t: float, t0: float = 0.0) -> np.ndarray:
    """exp(L (t - t0)) applied to rho0; autonomous models only."""
    if not spec.autonomous:
        raise ValueError("matrix-exponential propagation needs a time-independent generator")
    dim = spec.space.dim
    gen = vectorized_generator(spec, t0)
    out = expm_multiply(gen * (t - t0), np.asarray(rho0, dtype=complex).ravel())
    return out.reshape(dim, dim)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    diff = rho - sigma
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(diff)).sum())
