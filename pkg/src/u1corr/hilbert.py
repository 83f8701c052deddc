"""Truncated Fock / two-level operators and tensor-product embedding.

Basis convention: occupation basis, lexicographic over modes in declaration
order (first mode is the slowest index).  Two-level modes use index 0 for
the ground state and 1 for the excited state.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import reduce

import numpy as np
import scipy.sparse as sp


class ModeKind(str, Enum):
    BOSON = "boson"
    TWO_LEVEL = "two_level"


@dataclass(frozen=True)
class ModeSpec:
    label: str
    kind: ModeKind
    cutoff: int | None = None

    def __post_init__(self):
        kind = ModeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not self.label or not str(self.label).isidentifier():
            raise ValueError(f"mode label must be an identifier, got {self.label!r}")
        if kind is ModeKind.BOSON:
            if self.cutoff is None or int(self.cutoff) != self.cutoff or self.cutoff < 0:
                raise ValueError(f"boson mode {self.label!r} needs a non-negative integer cutoff")
            object.__setattr__(self, "cutoff", int(self.cutoff))
        elif self.cutoff is not None:
            raise ValueError(f"two-level mode {self.label!r} takes no cutoff")

    @classmethod
    def boson(cls, label: str, cutoff: int) -> "ModeSpec":
        return cls(label, ModeKind.BOSON, cutoff)

    @classmethod
    def two_level(cls, label: str) -> "ModeSpec":
        return cls(label, ModeKind.TWO_LEVEL)

    @property
    def is_boson(self) -> bool:
        return self.kind is ModeKind.BOSON

    @property
    def dim(self) -> int:
        return self.cutoff + 1 if self.is_boson else 2


@dataclass(frozen=True)
class HilbertSpace:
    modes: tuple[ModeSpec, ...]

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ValueError("a Hilbert space needs at least one mode")
        labels = [m.label for m in modes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate mode labels in {labels}")
        object.__setattr__(self, "modes", modes)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.dim for m in self.modes)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(m.label for m in self.modes)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no mode labelled {label!r}") from None

    def occupations(self) -> np.ndarray:
        """Occupation numbers of every basis state, shape (dim, n_modes)."""
        grids = np.indices(self.dims).reshape(self.n_modes, -1)
        return grids.T.copy()


def annihilation_matrix(cutoff: int) -> sp.csr_matrix:
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    n = np.arange(1, cutoff + 1)
    return sp.diags(np.sqrt(n).astype(complex), 1, shape=(cutoff + 1, cutoff + 1), format="csr")


def sigma_minus() -> sp.csr_matrix:
    return sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex))


def lowering_operator(mode: ModeSpec) -> sp.csr_matrix:
    """a for bosons, sigma-minus for two-level modes (single-mode space)."""
    return annihilation_matrix(mode.cutoff) if mode.is_boson else sigma_minus()


def embed(op, mode_index: int, space: HilbertSpace) -> sp.csr_matrix:
    if not 0 <= mode_index < space.n_modes:
        raise IndexError(f"mode index {mode_index} out of range for {space.n_modes} modes")
    d = space.dims[mode_index]
    op = sp.csr_matrix(op, dtype=complex)
    if op.shape != (d, d):
        raise ValueError(f"operator shape {op.shape} does not match mode dimension {d}")
    factors = [sp.identity(n, dtype=complex, format="csr") for n in space.dims]
    factors[mode_index] = op
    return reduce(lambda x, y: sp.kron(x, y, format="csr"), factors).tocsr()


def mode_lowering(space: HilbertSpace, i: int) -> sp.csr_matrix:
    return embed(lowering_operator(space.modes[i]), i, space)


def number_operator(space: HilbertSpace, i: int) -> sp.csr_matrix:
    # built from integer occupations so the diagonal is exact
    occ = np.arange(space.modes[i].dim, dtype=complex)
    return embed(sp.diags(occ, format="csr"), i, space)


def total_number_operator(space: HilbertSpace) -> sp.csr_matrix:
    return sum(number_operator(space, i) for i in range(space.n_modes)).tocsr()


def dagger(op):
    return op.conj().T.tocsr() if sp.issparse(op) else op.conj().T


def commutator(a, b):
    return a @ b - b @ a


def frobenius(op) -> float:
    if sp.issparse(op):
        op = sp.csr_matrix(op)
        op.sum_duplicates()
        return float(np.sqrt(np.sum(np.abs(op.data) ** 2)))
    return float(np.linalg.norm(op))


def is_hermitian(op, tol: float = 1e-12) -> bool:
    scale = max(frobenius(op), 1.0)
    return frobenius(op - dagger(op)) <= tol * scale
