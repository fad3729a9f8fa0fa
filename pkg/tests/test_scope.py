import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beatmatch import tensor as T
from beatmatch.scope import (SIGMA_GRID, UndefinedRatioError, estimate_sigma, gaussian_scope, mean_pn_ratio,
                             pn_ratio, pn_table, scope_mask, weighted_bce_loss)
from beatmatch.tensor import Tensor

from oracles import hand_scope

S1 = math.exp(-1 / 1.62)


class TestGaussianScope:
    def test_peak(self):
        assert gaussian_scope(4, 4, 0.9) == 1.0

    def test_unit_distance(self):
        assert gaussian_scope(3, 4, 0.9) == pytest.approx(0.5394, abs=1e-4)
        assert gaussian_scope(5, 4, 0.9) == pytest.approx(S1, abs=1e-12)

    def test_wide_limit(self):
        assert gaussian_scope(0, 3, 1e6) == pytest.approx(1.0)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ValueError):
            gaussian_scope(0, 1, sigma)


class TestScopeMask:
    def test_single_positive(self):
        m = scope_mask([0, 1, 0], 0.9)
        assert m.enabled
        np.testing.assert_allclose(m.weights, [S1, 1.0, S1], atol=1e-6)

    def test_adjacent_positives(self):
        np.testing.assert_allclose(scope_mask([1, 1], 0.9).weights, [1.0, 1.0])

    def test_all_zero_disables(self):
        m = scope_mask([0, 0, 0, 0])
        assert not m.enabled
        np.testing.assert_array_equal(m.effective(), np.ones(4))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=30).filter(any),
           st.sampled_from(SIGMA_GRID))
    def test_matches_hand_sum_and_is_bounded(self, y, sigma):
        w = scope_mask(y, sigma).weights
        np.testing.assert_allclose(w, hand_scope(y, sigma), rtol=1e-12)
        assert w.max() == pytest.approx(1.0) and w.min() >= 0.0
        assert w[int(np.argmax(w))] == 1.0


class TestPNRatio:
    def test_two_units(self):
        assert pn_ratio([1, 0], 0.9) == pytest.approx(1 / S1)
        assert pn_ratio([1, 0], 0.9) == pytest.approx(1.854, abs=1e-3)

    def test_wide_limit_is_class_ratio(self):
        assert pn_ratio([1, 0, 0, 1, 0], 1e6) == pytest.approx(2 / 3, rel=1e-6)

    @pytest.mark.parametrize("y", [[0, 0, 0], [1, 1]])
    def test_degenerate(self, y):
        with pytest.raises(UndefinedRatioError):
            pn_ratio(y)

    def test_estimate_on_two_units_matches_brute_force(self):
        best = min(SIGMA_GRID, key=lambda s: (abs(1 / math.exp(-1 / (2 * s * s)) - 1), s))
        assert estimate_sigma([[1, 0]]) == best

    def test_single_grid_point(self):
        assert estimate_sigma([[0, 1, 0, 0, 0]], grid=[0.7]) == 0.7

    def test_no_eligible_vectors(self):
        with pytest.raises(UndefinedRatioError):
            estimate_sigma([[0, 0], [1, 1]])

    def test_table_covers_grid(self):
        table = pn_table([[0, 0, 1, 0, 0, 0, 0, 1, 0, 0]])
        assert [s for s, _ in table] == list(SIGMA_GRID)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_mean_ratio_decreases_along_grid(self, seed):
        rng = np.random.default_rng(seed)
        labels = []
        for _ in range(10):
            y = np.zeros(rng.integers(20, 80), dtype=np.int8)
            y[rng.choice(y.size, rng.integers(1, 6), replace=False)] = 1
            labels.append(y)
        ratios = [mean_pn_ratio(labels, s) for s in SIGMA_GRID]
        assert all(a > b for a, b in zip(ratios, ratios[1:]))


class TestWeightedBCE:
    def test_half_everywhere(self):
        loss = weighted_bce_loss(Tensor(np.full(5, 0.5)), np.array([0, 1, 0, 0, 1]))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-7)

    def test_perfect_prediction(self):
        loss = weighted_bce_loss(Tensor(np.array([0.0, 1.0, 0.0])), np.array([0, 1, 0]))
        assert loss.item() <= -math.log(1 - 1e-7) + 1e-12

    def test_hand_value_with_scope(self):
        p = np.array([0.2, 0.9, 0.2])
        y = np.array([0, 1, 0])
        want = -(S1 * math.log(0.8) + math.log(0.9) + S1 * math.log(0.8)) / 3
        got = weighted_bce_loss(Tensor(p), y, scope_mask(y, 0.9)).item()
        assert got == pytest.approx(want, rel=1e-6)

    def test_disabled_mask_is_plain_bce(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.01, 0.99, 20)
        y = np.zeros(20)
        plain = -np.mean(np.log(1 - p))
        assert weighted_bce_loss(Tensor(p), y, scope_mask(y)).item() == pytest.approx(plain, abs=1e-7)

    def test_length_mismatch(self):
        with pytest.raises(T.ShapeError):
            weighted_bce_loss(Tensor(np.full(3, 0.5)), np.zeros(4))

    def test_gradient(self):
        with T.default_dtype(np.float64):
            p = Tensor(np.array([0.3, 0.8, 0.4, 0.1]), requires_grad=True)
            y = np.array([0, 1, 0, 0])
            mask = scope_mask(y, 0.9)
            assert T.grad_check(lambda: weighted_bce_loss(p, y, mask), [p], eps=1e-6) < 1e-6
