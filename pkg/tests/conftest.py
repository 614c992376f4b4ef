from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("wpr", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("wpr")


@st.composite
def distributions(draw, d: int | None = None, min_d: int = 2, max_d: int = 16):
    """Strictly positive probability vectors built from bounded weights."""
    n = d if d is not None else draw(st.integers(min_d, max_d))
    w = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    w = np.asarray(w)
    return w / w.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
