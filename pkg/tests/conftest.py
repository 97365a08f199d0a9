import numpy as np
import pytest

from markovsprt.chain import toy_chains


@pytest.fixture
def toy():
    """Null and alternative of the two-state toy problem at eps = 0.5."""
    return toy_chains(0.5)


def positive_chain(rng, m):
    """Strictly positive (hence ergodic) random chain."""
    P = rng.dirichlet(np.ones(m), size=m) + 1e-3
    return P / P.sum(axis=1, keepdims=True)
