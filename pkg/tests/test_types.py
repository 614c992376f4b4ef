from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wpr.errors import NegativeMass, NotNormalizable
from wpr.types import CostMatrix, Coupling, Distribution, validate_distribution


class TestValidateDistribution:
    def test_identity(self):
        d = validate_distribution([0.5, 0.3, 0.2])
        np.testing.assert_array_equal(d.probs, [0.5, 0.3, 0.2])

    def test_point_mass(self):
        np.testing.assert_array_equal(validate_distribution([1.0, 0.0, 0.0]).probs, [1, 0, 0])

    def test_negative_mass(self):
        with pytest.raises(NegativeMass):
            validate_distribution([0.5, 0.5, -0.1])

    def test_roundoff_negative_is_zeroed(self):
        d = validate_distribution([0.5, 0.5, -1e-14])
        assert d.probs[2] == 0.0

    def test_small_sum_error_is_renormalized(self):
        d = validate_distribution([0.5, 0.5 + 1e-8])
        assert abs(d.probs.sum() - 1.0) < 1e-15

    @pytest.mark.parametrize("raw", [[0.5, 0.4], [0.0, 0.0], [], [np.nan, 1.0]])
    def test_not_normalizable(self, raw):
        with pytest.raises(NotNormalizable):
            validate_distribution(raw)

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20).filter(lambda w: sum(w) > 0))
    def test_normalized_input_round_trips(self, w):
        p = np.asarray(w) / sum(w)
        d = validate_distribution(p)
        assert np.all(d.probs >= 0)
        assert abs(d.probs.sum() - 1.0) <= 1e-12

    def test_immutable(self):
        d = Distribution([0.5, 0.5])
        with pytest.raises(ValueError):
            d.probs[0] = 1.0


class TestCostAndCoupling:
    def test_cost_requires_zero_diagonal(self):
        with pytest.raises(ValueError):
            CostMatrix(np.ones((2, 2)))

    def test_coupling_marginals(self):
        p = Coupling(np.array([[0.25, 0.25], [0.0, 0.5]]))
        np.testing.assert_allclose(p.row_sums(), [0.5, 0.5])
        np.testing.assert_allclose(p.col_sums(), [0.25, 0.75])
