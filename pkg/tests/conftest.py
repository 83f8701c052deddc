import numpy as np
import pytest

from u1corr.hilbert import HilbertSpace, ModeSpec
from u1corr.model import DissipatorChannel, Hopping, Kerr, ModelSpec


@pytest.fixture
def two_boson_space():
    return HilbertSpace((ModeSpec.boson("a1", 2), ModeSpec.boson("a2", 2)))


@pytest.fixture
def fig1_spec():
    space = HilbertSpace((ModeSpec.boson("a1", 12), ModeSpec.boson("a2", 12)))
    return ModelSpec(space, [Hopping(0, 1, 1.5), Kerr(0, 0.25), Kerr(1, 0.25)],
                     [DissipatorChannel(0, "loss", 1.0), DissipatorChannel(1, "loss", 1.0)])


def dense(op):
    return op.toarray() if hasattr(op, "toarray") else np.asarray(op)


def random_density(dim, rng, rank=None):
    rank = rank or dim
    x = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = x @ x.conj().T
    return rho / np.trace(rho)
