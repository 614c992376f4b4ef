from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import jensenshannon
from scipy.stats import entropy

from wpr.divergences import (
    CHISQ,
    FKL,
    JS,
    RKL,
    TV,
    DivergenceKind,
    all_kinds,
    divergence_value,
    f_function,
    token_penalty,
)
from wpr.errors import DomainError
from wpr.types import Distribution

from conftest import distributions

ALPHA = DivergenceKind("Alpha", 0.5)


def closed_form(kind, p, q):
    """Textbook formulas that never go through the generator ``f``."""
    if kind.tag == "RKL":
        return entropy(p, q)
    if kind.tag == "FKL":
        return entropy(q, p)
    if kind.tag == "JS":
        return 2.0 * jensenshannon(p, q) ** 2
    if kind.tag == "TV":
        return 0.5 * np.abs(p - q).sum()
    if kind.tag == "ChiSq":
        return np.sum((p - q) ** 2 / q)
    a = kind.alpha
    return (np.sum(p ** (1 - a) * q ** a) - 1.0) / (a * (a - 1.0))


class TestGenerator:
    @pytest.mark.parametrize("kind", all_kinds())
    def test_vanishes_at_one(self, kind):
        assert f_function(kind, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_chisq_at_two(self):
        assert f_function(CHISQ, 2.0) == 1.0

    def test_vectorized(self):
        np.testing.assert_allclose(f_function(TV, np.array([0.5, 3.0])), [0.25, 1.0])

    @pytest.mark.parametrize("u", [0.0, -1.0, np.nan])
    def test_domain(self, u):
        with pytest.raises(DomainError):
            f_function(RKL, u)

    @pytest.mark.parametrize("kind", all_kinds())
    @given(u=st.floats(0.05, 20.0))
    def test_convex(self, kind, u):
        h = 1e-3
        second = f_function(kind, u + h) - 2 * f_function(kind, u) + f_function(kind, u - h)
        assert second >= -1e-12


class TestTokenPenalty:
    def test_rkl_is_log_ratio(self):
        assert token_penalty(RKL, 0.8, 0.4) == pytest.approx(np.log(2.0), abs=1e-15)

    @given(st.floats(1e-12, 1.0), st.floats(1e-12, 1.0))
    def test_rkl_exact(self, a, b):
        assert token_penalty(RKL, a, b) == np.log(a) - np.log(b)

    @pytest.mark.parametrize("kind", all_kinds())
    def test_equal_probs(self, kind):
        assert token_penalty(kind, 0.37, 0.37) == pytest.approx(0.0, abs=1e-15)

    def test_tv(self):
        assert token_penalty(TV, 0.6, 0.2) == pytest.approx(1.0 / 3.0)

    def test_floor_keeps_zero_finite(self):
        assert np.isfinite(token_penalty(FKL, 0.0, 0.5))


class TestDivergenceValue:
    @pytest.mark.parametrize("kind", all_kinds())
    def test_self_is_zero(self, kind):
        p = Distribution([0.2, 0.3, 0.5])
        assert divergence_value(kind, p, p) == pytest.approx(0.0, abs=1e-15)

    def test_rkl_two_terms(self):
        v = divergence_value(RKL, Distribution([0.9, 0.1]), Distribution([0.5, 0.5]))
        assert v == pytest.approx(0.9 * np.log(1.8) + 0.1 * np.log(0.2), abs=1e-15)
        assert v == pytest.approx(0.3681, abs=1e-4)

    @pytest.mark.parametrize("kind", all_kinds())
    @given(p=distributions(), seed=st.integers(0, 2**31 - 1))
    def test_closed_forms(self, kind, p, seed):
        q = np.random.default_rng(seed).dirichlet(np.ones(p.size))
        assert divergence_value(kind, p, q) == pytest.approx(closed_form(kind, p, q), rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("kind", all_kinds())
    @given(p=distributions(), seed=st.integers(0, 2**31 - 1))
    def test_exact_expectation_of_token_penalties(self, kind, p, seed):
        q = np.random.default_rng(seed).dirichlet(np.ones(p.size))
        expected = float(np.sum(p * token_penalty(kind, p, q)))
        assert abs(expected - divergence_value(kind, p, q)) <= 1e-10

    @pytest.mark.parametrize("kind", all_kinds())
    @given(p=distributions(), q=distributions())
    def test_nonnegative(self, kind, p, q):
        if p.size == q.size:
            assert divergence_value(kind, p, q) >= -1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            divergence_value(TV, [0.5, 0.5], [1.0])

    def test_js_symmetric_pair(self):
        ref = Distribution([0.7, 0.1, 0.1, 0.1])
        a = Distribution([0.1, 0.7, 0.1, 0.1])
        b = Distribution([0.1, 0.1, 0.1, 0.7])
        assert abs(divergence_value(JS, ref, a) - divergence_value(JS, ref, b)) <= 1e-12


class TestParse:
    @pytest.mark.parametrize("text,kind", [
        ("rkl", RKL), ("KL", RKL), ("fkl", FKL), ("js", JS), ("tv", TV), ("chisq", CHISQ),
        ("chi2", CHISQ), ("alpha=0.5", ALPHA), ("alpha:0.5", ALPHA), ("alpha0.5", ALPHA),
    ])
    def test_accepted(self, text, kind):
        assert DivergenceKind.parse(text) == kind

    @pytest.mark.parametrize("text", ["hellinger", "alpha=x", ""])
    def test_rejected(self, text):
        with pytest.raises(ValueError):
            DivergenceKind.parse(text)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
    def test_alpha_domain(self, alpha):
        with pytest.raises(DomainError):
            DivergenceKind("Alpha", alpha)

    def test_names(self):
        assert [k.name for k in all_kinds()] == ["rkl", "fkl", "js", "alpha=0.5", "tv", "chisq"]
