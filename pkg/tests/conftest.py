import numpy as np
import pytest
from hypothesis import strategies as st

from rsctmdp.instances import bundled, random_instance_set
from rsctmdp.model import CtmdpModel, random_model


@pytest.fixture(scope="session")
def instances():
    return random_instance_set()


@pytest.fixture
def sym2():
    """Symmetric two-state chain, c = (0, 1), lambda = 1."""
    return bundled("two_state")


@pytest.fixture
def passage2():
    """Rates 0->1 = 1, 1->0 = 2, c = (0, 1), lambda = 1."""
    return bundled("two_state_passage")


@pytest.fixture
def machine():
    return bundled("machine")


def chain(rates, costs, lam=1.0) -> CtmdpModel:
    """Single-action model from an off-diagonal rate matrix."""
    R = np.array(rates, dtype=float)
    np.fill_diagonal(R, 0.0)
    np.fill_diagonal(R, -R.sum(axis=1))
    return CtmdpModel.from_arrays([[row] for row in R], [[c] for c in costs], lam)


@st.composite
def models(draw, max_states=4, max_actions=3, lams=(0.5, 1.0, 2.0)):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(2, max_states))
    acts = draw(st.lists(st.integers(1, max_actions), min_size=n, max_size=n))
    lam = draw(st.sampled_from(lams))
    return random_model(np.random.default_rng(seed), n, acts, lam)
