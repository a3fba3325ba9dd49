import math

import numpy as np
import pytest

from weak_mlmc.enumeration import (
    EnumerationBudgetExceeded,
    OutcomeLattice,
    enumerate_level0,
    lattice_index,
    outcome_count,
    outcome_probability,
)
from weak_mlmc.models import constant_payoff, first_component, linear_sde
from weak_mlmc.sde import SchemeKind

# published level-0 lattice sizes by finest level L and Wiener dimension m
PUBLISHED_COUNTS = {
    (8, 1): 257, (8, 2): 66_049, (8, 3): 16_974_593, (8, 4): 4_362_470_401,
    (9, 1): 513, (9, 2): 263_169, (9, 3): 135_005_697,
    (10, 1): 1_025, (10, 2): 1_050_625, (10, 3): 1_076_890_625,
    (11, 1): 2_049, (11, 2): 4_198_401, (11, 3): 8_602_523_649,
}
PUBLISHED_DASHES = [(9, 4), (10, 4), (11, 4)]


class TestOutcomeCount:
    @pytest.mark.parametrize("key", sorted(PUBLISHED_COUNTS))
    def test_table_cells(self, key):
        L, m = key
        assert outcome_count(L, 0, m) == PUBLISHED_COUNTS[key]

    @pytest.mark.parametrize("key", PUBLISHED_DASHES)
    def test_dashes_exceed_ten_billion(self, key):
        assert outcome_count(key[0], 0, key[1]) > 10**10

    def test_trivial(self):
        assert outcome_count(0, 0, 1) == 2

    def test_big_integer_for_fine_levels(self):
        # 3^(2^9 * 2) overflows 64 bits many times over
        n = outcome_count(10, 9, 2)
        assert n == 3 ** 1024 and n.bit_length() > 1000

    def test_contract(self):
        with pytest.raises(ValueError):
            outcome_count(2, 3, 1)
        with pytest.raises(ValueError):
            outcome_count(2, 0, 0)


class TestOutcomeProbability:
    def test_single_component(self):
        assert outcome_probability([0.0], 1) == 0.5

    def test_product_rule(self):
        dL = 0.5
        assert outcome_probability([0.0, 2 * math.sqrt(dL)], 1) == 0.125

    def test_off_lattice_rejected(self):
        with pytest.raises(ValueError):
            outcome_probability([0.1], 1)
        with pytest.raises(ValueError):
            outcome_probability([10.0], 1)

    def test_lattice_index_round_trip(self):
        lat = OutcomeLattice(6, 1, horizon=2.0)
        for k, v in enumerate(lat.values):
            assert lattice_index(v, 6, 2.0) == k

    @pytest.mark.parametrize("L, m", [(0, 1), (3, 2), (5, 3), (8, 2)])
    def test_normalisation(self, L, m):
        lat = OutcomeLattice(L, m)
        total = math.fsum(math.fsum(p.tolist()) for _, p in lat.chunks(chunk=1000))
        assert abs(total - 1.0) < 1e-10

    def test_points_match_outcome_probability(self, rng):
        lat = OutcomeLattice(4, 2, horizon=1.5)
        idx = rng.integers(0, lat.size, 20)
        pts, prob = lat.points(idx)
        for x, p in zip(pts, prob):
            assert p == pytest.approx(outcome_probability(x, 4, 1.5), rel=1e-15)


class TestEnumerateLevel0:
    @pytest.mark.parametrize("scheme", list(SchemeKind))
    def test_unit_payoff(self, basket, scheme):
        model, _ = basket
        res = enumerate_level0(model, constant_payoff(1.0), scheme, 6)
        assert abs(res.expectation - 1.0) < 1e-10
        assert res.outcomes_evaluated == res.cost_units == 65**2

    def test_degenerate_model_returns_x0(self):
        model = linear_sde([[0.0]], [[[0.0]]], [1.75], 1.0)
        res = enumerate_level0(model, first_component, SchemeKind.MILSTEIN_NO_LEVY, 5)
        assert res.expectation == pytest.approx(1.75, abs=1e-15)

    def test_gbm_mean_is_exact_for_linear_payoff(self, gbm):
        # one Milstein step: E[1 + r + s xi + s^2/2 (xi^2 - 1)] = 1 + r since E xi^2 = T
        res = enumerate_level0(gbm, first_component, SchemeKind.MILSTEIN_NO_LEVY, 8)
        assert res.expectation == pytest.approx(1.2, abs=1e-14)

    def test_matches_brute_force_monte_carlo(self, gbm):
        L, n = 8, 10**7
        rng = np.random.default_rng(77)
        # oracle draws straight from numpy, not from the package sampler
        xi = (2 * rng.binomial(2**L, 0.5, size=n) - 2**L) * math.sqrt(2.0**-L)
        x1 = 1 + 0.2 + 0.1 * xi + 0.5 * 0.01 * (xi**2 - 1)
        res = enumerate_level0(gbm, lambda x: np.maximum(x[:, 0] - 1.2, 0.0), SchemeKind.MILSTEIN_NO_LEVY, L)
        mc = np.maximum(x1 - 1.2, 0.0)
        assert abs(res.expectation - mc.mean()) < 3 * mc.std() / math.sqrt(n)

    def test_repeatable_and_order_independent(self, basket, rng):
        model, payoff = basket
        a = enumerate_level0(model, payoff, SchemeKind.MILSTEIN_NO_LEVY, 7)
        b = enumerate_level0(model, payoff, SchemeKind.MILSTEIN_NO_LEVY, 7)
        assert a.expectation == b.expectation
        order = rng.permutation(129**2)
        c = enumerate_level0(model, payoff, SchemeKind.MILSTEIN_NO_LEVY, 7, chunk=1000, order=order)
        assert abs(c.expectation - a.expectation) < 1e-12

    def test_budget_refusal_reports_count(self, basket):
        model, payoff = basket
        with pytest.raises(EnumerationBudgetExceeded) as info:
            enumerate_level0(model, payoff, SchemeKind.MILSTEIN_NO_LEVY, 11, budget=10**6)
        assert info.value.count == 4_198_401 and info.value.budget == 10**6
