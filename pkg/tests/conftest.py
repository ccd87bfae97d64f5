import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_cov(rng, p, extra=2, ridge=0.1):
    w = rng.standard_normal((p, p + extra))
    return w @ w.T / p + ridge * np.eye(p)


@st.composite
def linear_cases(draw, p_min=2, p_max=8):
    """(beta, Sigma) pairs with a random well-conditioned covariance."""
    p = draw(st.integers(p_min, p_max))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    beta = rng.standard_normal(p)
    return beta, random_cov(rng, p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
