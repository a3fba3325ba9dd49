import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from weak_mlmc.models import basket_model, gbm_model, linear_sde
from weak_mlmc.sde import (
    SchemeKind,
    SdeModel,
    SimulationFault,
    antithetic_increments,
    euler_step,
    level_of,
    milstein_step_no_levy,
    simulate_path,
)


def additive_model(sigma=(0.3, -0.2), drift=0.0):
    """Scalar state, two Wiener components, constant diffusion."""
    sig = np.array(sigma, dtype=float)

    return SdeModel(
        dim_state=1,
        dim_wiener=len(sig),
        drift=lambda x: drift * x,
        diffusion_col=lambda x, j: np.full_like(x, sig[j]),
        diffusion_col_jac=lambda x, j: np.zeros((1, 1)),
        x0=[1.0],
        horizon=1.0,
    )


def nonlinear_model():
    """d=2, m=2 model with state-dependent Jacobians."""

    def drift(x):
        return np.stack([np.sin(x[:, 1]), -0.5 * x[:, 0]], axis=1)

    def col(x, j):
        if j == 0:
            return np.stack([0.3 * np.cos(x[:, 0]), 0.1 * x[:, 0] * x[:, 1]], axis=1)
        return np.stack([0.2 * x[:, 1] ** 2, 0.4 * np.sin(x[:, 0] + x[:, 1])], axis=1)

    def jac(x, j):
        n = x.shape[0]
        out = np.zeros((n, 2, 2))
        if j == 0:
            out[:, 0, 0] = -0.3 * np.sin(x[:, 0])
            out[:, 1, 0] = 0.1 * x[:, 1]
            out[:, 1, 1] = 0.1 * x[:, 0]
        else:
            out[:, 0, 1] = 0.4 * x[:, 1]
            c = 0.4 * np.cos(x[:, 0] + x[:, 1])
            out[:, 1, 0] = c
            out[:, 1, 1] = c
        return out

    return SdeModel(2, 2, drift, col, jac, x0=[0.5, 1.0], horizon=1.0)


class TestModel:
    def test_default_correlation_is_identity(self):
        m = basket_model()
        assert np.array_equal(m.correlation, np.eye(2))
        assert m.independent_noise

    def test_rejects_bad_correlation(self):
        with pytest.raises(ValueError, match="symmetric"):
            linear_sde([[0.0]], [[[1.0]], [[1.0]]], [1.0], 1.0, correlation=[[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(ValueError, match="unit diagonal"):
            linear_sde([[0.0]], [[[1.0]], [[1.0]]], [1.0], 1.0, correlation=[[2.0, 0.0], [0.0, 1.0]])

    def test_rejects_nonpositive_horizon(self):
        with pytest.raises(ValueError):
            gbm_model(horizon=0.0)

    def test_x0_is_read_only(self):
        m = gbm_model()
        with pytest.raises(ValueError):
            m.x0[0] = 2.0

    @pytest.mark.parametrize("factory", [basket_model, nonlinear_model])
    def test_jacobian_matches_central_differences(self, factory):
        model = factory()
        rng = np.random.default_rng(3)
        h = 1e-6
        d = model.dim_state
        for _ in range(20):
            x = rng.uniform(0.2, 2.0, size=(1, d))
            for j in range(model.dim_wiener):
                jac = np.broadcast_to(model.diffusion_col_jac(x, j), (1, d, d))[0]
                fd = np.empty((d, d))
                for b in range(d):
                    e = np.zeros((1, d))
                    e[0, b] = h
                    fd[:, b] = (model.diffusion_col(x + e, j) - model.diffusion_col(x - e, j))[0] / (2 * h)
                scale = max(np.abs(jac).max(), 1e-12)
                assert np.abs(fd - jac).max() / scale < 1e-6


class TestEulerStep:
    def test_deterministic_ode_step(self):
        m = linear_sde([[0.2]], [[[0.0]]], [1.0], 1.0)
        assert euler_step(m, [1.0], 1.0, [0.0])[0] == pytest.approx(1.2, abs=1e-15)

    def test_identity_without_drift_or_noise(self):
        m = linear_sde([[0.0]], [[[0.7]]], [1.0], 1.0)
        x = np.array([1.2345])
        assert euler_step(m, x, 0.3, [0.0])[0] == x[0]

    def test_scalar_gbm_formula(self):
        m = gbm_model(rate=0.2, vol=0.1)
        assert euler_step(m, [1.0], 0.5, [0.3])[0] == pytest.approx(1.13, abs=1e-15)

    def test_batched_matches_single(self, rng):
        m = basket_model()
        x = rng.uniform(0.5, 1.5, (7, 2))
        xi = rng.normal(size=(7, 2))
        batch = euler_step(m, x, 0.1, xi)
        for i in range(7):
            # batched and single inputs take different matmul paths, so allow one ulp
            np.testing.assert_allclose(batch[i], euler_step(m, x[i], 0.1, xi[i]), rtol=1e-15, atol=1e-16)

    def test_contract_violations(self):
        m = basket_model()
        with pytest.raises(ValueError):
            euler_step(m, [1.0, 1.0], 0.0, [0.0, 0.0])
        with pytest.raises(ValueError):
            euler_step(m, [1.0, 1.0], 0.1, [0.0])

    def test_non_finite_output_is_a_fault(self):
        m = linear_sde([[1.0]], [[[0.0]]], [1.0], 1.0)
        with pytest.raises(SimulationFault):
            euler_step(m, [1e308], 10.0, [0.0])


class TestMilsteinStep:
    def test_correction_vanishes_when_xi_squared_equals_dt(self):
        m = gbm_model(rate=0.0, vol=0.2)
        assert milstein_step_no_levy(m, [1.0], 0.25, [0.5])[0] == pytest.approx(1.1, abs=1e-15)

    def test_scalar_gbm_against_symbolic_evaluation(self):
        x, r, s, dt, xi = sp.symbols("x r s dt xi")
        # scalar Milstein: sigma(x) = s x, sigma'(x) = s
        one_step = x + r * x * dt + s * x * xi + sp.Rational(1, 2) * s * (s * x) * (xi**2 - dt)
        exact = one_step.subs({x: 1, r: 0, s: sp.Rational(1, 5), dt: sp.Rational(1, 4), xi: 1})
        assert exact == sp.Rational(243, 200)  # 1.215
        m = gbm_model(rate=0.0, vol=0.2)
        assert milstein_step_no_levy(m, [1.0], 0.25, [1.0])[0] == pytest.approx(float(exact), abs=1e-15)

    def test_multidimensional_against_symbolic_evaluation(self):
        xs = sp.symbols("x1 x2")
        xis = sp.symbols("w1 w2")
        r, s1, s2, s3, s4 = (sp.Rational(1, 5), sp.Rational(1, 20), sp.Rational(1, 10),
                             sp.Rational(3, 20), sp.Rational(1, 5))
        dt = sp.Rational(1, 8)
        X = sp.Matrix(xs)
        cols = [sp.Matrix([s1 * xs[0], s3 * xs[1]]), sp.Matrix([s2 * (xs[0] + xs[1]), s4 * xs[1]])]
        out = X + r * X * dt + sum((cols[j] * xis[j] for j in range(2)), sp.zeros(2, 1))
        for j in range(2):
            J = cols[j].jacobian(X)
            for k in range(2):
                out += sp.Rational(1, 2) * J * cols[k] * (xis[j] * xis[k] - (1 if j == k else 0) * dt)
        vals = {xs[0]: sp.Rational(9, 10), xs[1]: sp.Rational(6, 5), xis[0]: sp.Rational(3, 10),
                xis[1]: sp.Rational(-1, 5)}
        expected = np.array([float(v) for v in out.subs(vals)])
        got = milstein_step_no_levy(basket_model(), [0.9, 1.2], 0.125, [0.3, -0.2])
        np.testing.assert_allclose(got, expected, rtol=1e-14)

    def test_additive_noise_equals_euler_bitwise(self, rng):
        m = additive_model(drift=0.1)
        x = rng.normal(size=(50, 1))
        xi = rng.normal(size=(50, 2))
        np.testing.assert_array_equal(milstein_step_no_levy(m, x, 0.01, xi), euler_step(m, x, 0.01, xi))

    def test_correlation_enters_the_correction(self):
        corr = np.array([[1.0, 0.5], [0.5, 1.0]])
        m0 = linear_sde([[0.0]], [[[0.1]], [[0.2]]], [1.0], 1.0)
        m1 = linear_sde([[0.0]], [[[0.1]], [[0.2]]], [1.0], 1.0, correlation=corr)
        dt = 0.25
        diff = milstein_step_no_levy(m0, [1.0], dt, [0.0, 0.0]) - milstein_step_no_levy(m1, [1.0], dt, [0.0, 0.0])
        # only the j != k terms differ: 1/2 * (0.1*0.2 + 0.2*0.1) * 0.5 * dt
        assert diff[0] == pytest.approx(0.5 * 0.04 * 0.5 * dt, rel=1e-12)


class TestSimulatePath:
    def test_level_zero_is_one_step(self):
        m = gbm_model(rate=0.2, vol=0.1)
        out = simulate_path(m, SchemeKind.WEAK_EULER, [[0.3]])
        assert out[0] == euler_step(m, [1.0], 1.0, [0.3])[0]

    def test_zero_increments_no_drift_returns_x0(self):
        m = linear_sde([[0.0, 0.0], [0.0, 0.0]], [np.eye(2)], [1.5, -0.5], 2.0)
        out = simulate_path(m, SchemeKind.WEAK_EULER, np.zeros((8, 1)))
        np.testing.assert_array_equal(out, m.x0)

    def test_level_one_composes_two_hand_steps(self):
        x, xi = sp.symbols("x xi")
        s, dt = sp.Rational(1, 5), sp.Rational(1, 2)
        step = x + s * x * xi + sp.Rational(1, 2) * s * s * x * (xi**2 - dt)
        x1 = step.subs({x: 1, xi: sp.Rational(1, 2)})
        x2 = step.subs({x: x1, xi: sp.Rational(-1, 2)})
        assert x1 == sp.Rational(219, 200) and x2 == sp.Rational(196005, 200000)
        m = gbm_model(rate=0.0, vol=0.2, horizon=1.0)
        out = simulate_path(m, SchemeKind.MILSTEIN_NO_LEVY, [[0.5], [-0.5]])
        assert out[0] == pytest.approx(float(x2), abs=1e-15)

    def test_batch_equals_individual_paths(self, rng):
        m = basket_model()
        incs = rng.normal(scale=0.25, size=(16, 5, 2))
        batch = simulate_path(m, SchemeKind.MILSTEIN_NO_LEVY, incs)
        for i in range(5):
            single = simulate_path(m, SchemeKind.MILSTEIN_NO_LEVY, incs[:, i])
            np.testing.assert_allclose(batch[i], single, rtol=1e-13)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            simulate_path(gbm_model(), SchemeKind.WEAK_EULER, np.zeros((3, 1)))
        assert level_of(1) == 0 and level_of(64) == 6

    def test_blow_up_reports_step(self):
        m = SdeModel(1, 1, lambda x: x**2, lambda x, j: 0 * x, lambda x, j: np.zeros((1, 1)), [10.0], 16.0)
        with pytest.raises(SimulationFault) as info:
            simulate_path(m, SchemeKind.WEAK_EULER, np.zeros((16, 1)))
        # 10 -> 110 -> 12210 -> ... squares past the float range on the ninth step
        assert info.value.step == 8 and info.value.level == 4


class TestAntithetic:
    def test_pair_swap(self):
        assert antithetic_increments(np.array([1, 2, 3, 4])).tolist() == [2, 1, 4, 3]

    def test_fixed_point(self):
        assert antithetic_increments(np.array([5.0, 5.0])).tolist() == [5.0, 5.0]

    def test_odd_length_rejected(self):
        with pytest.raises(ValueError):
            antithetic_increments(np.zeros(3))

    @given(st.lists(st.floats(allow_nan=False, width=32), min_size=1, max_size=32).map(
        lambda v: v if len(v) % 2 == 0 else v + [0.0]))
    def test_involution_and_multiset(self, values):
        a = np.array(values)
        swapped = antithetic_increments(a)
        np.testing.assert_array_equal(antithetic_increments(swapped), a)
        np.testing.assert_array_equal(np.sort(swapped), np.sort(a))

    @settings(max_examples=50)
    @given(st.lists(st.integers(-8, 8), min_size=4, max_size=4).flatmap(
        lambda _: st.lists(st.integers(-16, 16), min_size=16, max_size=16)))
    def test_symmetric_step_map_gives_identical_terminal_state(self, ks):
        # dyadic increments keep every sum exact, so the equality is bitwise
        m = additive_model(sigma=(0.5, 0.25))
        incs = np.array(ks, dtype=float).reshape(8, 2) / 8.0
        for scheme in SchemeKind:
            a = simulate_path(m, scheme, incs)
            b = simulate_path(m, scheme, antithetic_increments(incs))
            np.testing.assert_array_equal(a, b)
