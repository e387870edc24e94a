"""Dual objective, solvers, oracle agreement and gradients."""

import math

import numpy as np
import pytest

from cfdro.divergences import DivergenceKind
from cfdro.dro import (
    dual_gradient,
    dual_gradient_policy,
    dual_objective,
    kl_reduced_dual,
    kl_softmax_risk,
    optimistic_risk_dual,
    primal_oracle,
    robust_risk_dual,
)
from cfdro.estimators import importance_weights

from conftest import make_two_record_log, make_two_record_policy

ALL_KINDS = list(DivergenceKind)


def minimize_scalar_golden(fn, lo, hi, iters=140):
    """Plain golden-section minimizer used as a one-dimensional oracle."""
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = fn(d)
    return min(fc, fd)


class TestDualObjective:
    def test_chi_square_closed_form_at_zero_location(self):
        z = np.array([-0.9, -0.4, -0.1])
        eps, gamma = 0.3, 2.0  # all z >= -2 gamma, so the quadratic branch is active
        expected = gamma * eps + z.mean() + np.mean(z**2) / (4 * gamma)
        got = dual_objective(z, DivergenceKind.CHI_SQUARE, eps, 0.0, gamma)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_zero_scale_convention(self):
        z = np.array([-1.0, -0.2])
        assert dual_objective(z, DivergenceKind.KL, 0.1, -0.5, 0.0) == math.inf
        assert dual_objective(z, DivergenceKind.KL, 0.1, 0.0, 0.0) == 0.0

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_jointly_convex_in_the_dual_pair(self, kind):
        rng = np.random.default_rng(0)
        z = rng.uniform(-2, 0, 12)
        for _ in range(40):
            b1, b2 = rng.uniform(-0.5, 1.0, 2)
            g1, g2 = rng.uniform(0.3, 3.0, 2)
            v1 = dual_objective(z, kind, 0.2, b1, g1)
            v2 = dual_objective(z, kind, 0.2, b2, g2)
            vm = dual_objective(z, kind, 0.2, (b1 + b2) / 2, (g1 + g2) / 2)
            if math.isfinite(v1) and math.isfinite(v2):
                assert vm <= (v1 + v2) / 2 + 1e-9


class TestRobustSolver:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_zero_radius_returns_the_mean(self, kind):
        z = np.array([-1.3, -0.4, -0.9])
        point = robust_risk_dual(z, kind, 0.0)
        assert point.value == pytest.approx(float(z.mean()), abs=1e-15)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_constant_vector_is_a_fixed_point(self, kind):
        z = np.full(7, -0.6)
        assert robust_risk_dual(z, kind, 0.8).value == pytest.approx(-0.6, abs=1e-12)
        assert optimistic_risk_dual(z, kind, 0.8).value == pytest.approx(-0.6, abs=1e-12)

    def test_two_point_chi_square_closed_form(self):
        z = np.array([-1.0, 0.0])
        got = robust_risk_dual(z, DivergenceKind.CHI_SQUARE, 0.5).value
        assert got == pytest.approx(-(1 - math.sqrt(0.5)) / 2, abs=1e-7)
        got = optimistic_risk_dual(z, DivergenceKind.CHI_SQUARE, 0.5).value
        assert got == pytest.approx(-(1 + math.sqrt(0.5)) / 2, abs=1e-7)

    @pytest.mark.parametrize(
        "kind,saturating_eps",
        [
            (DivergenceKind.CHI_SQUARE, 4.0),  # vertex divergence is n - 1
            (DivergenceKind.KL, 3.0),  # vertex divergence is log n
            (DivergenceKind.HELLINGER, 2.5),  # vertex divergence is below 2
        ],
    )
    def test_large_radius_saturates_at_the_maximum(self, kind, saturating_eps):
        z = np.array([-1.0, -0.7, -0.2])
        got = robust_risk_dual(z, kind, saturating_eps).value
        assert got == pytest.approx(-0.2, abs=1e-6)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_monotone_in_the_radius(self, kind):
        rng = np.random.default_rng(1)
        z = rng.uniform(-2, 0, 15)
        values = [robust_risk_dual(z, kind, eps).value for eps in (0.01, 0.1, 0.5, 2.0)]
        assert all(a <= b + 1e-9 for a, b in zip(values[:-1], values[1:]))
        optimistic = [optimistic_risk_dual(z, kind, eps).value for eps in (0.01, 0.1, 0.5, 2.0)]
        assert all(a >= b - 1e-9 for a, b in zip(optimistic[:-1], optimistic[1:]))

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_sandwich(self, kind):
        rng = np.random.default_rng(2)
        for _ in range(10):
            z = rng.uniform(-2, 0, rng.integers(2, 30))
            eps = rng.uniform(0.01, 1.5)
            lo = optimistic_risk_dual(z, kind, eps).value
            hi = robust_risk_dual(z, kind, eps).value
            assert lo <= z.mean() + 1e-8
            assert z.mean() <= hi + 1e-8

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_translation_equivariance(self, kind):
        rng = np.random.default_rng(3)
        z = rng.uniform(-2, 0, 25)
        base = robust_risk_dual(z, kind, 0.07).value
        shifted = robust_risk_dual(z + 0.4, kind, 0.07).value
        assert shifted == pytest.approx(base + 0.4, abs=1e-8)

    def test_variance_sensitivity(self):
        # equal means, different spreads: the wider vector is riskier
        narrow = np.array([-0.6, -0.5, -0.7, -0.6])
        wide = np.array([-0.6, -0.2, -1.0, -0.6])
        eps = 3.841459 / narrow.size
        r_narrow = robust_risk_dual(narrow, DivergenceKind.CHI_SQUARE, eps).value
        r_wide = robust_risk_dual(wide, DivergenceKind.CHI_SQUARE, eps).value
        assert narrow.mean() == wide.mean()
        assert r_wide > r_narrow + 1e-6

    def test_rejects_negative_radius(self):
        with pytest.raises(ValueError):
            robust_risk_dual(np.array([-1.0, 0.0]), DivergenceKind.KL, -0.1)


class TestPrimalOracle:
    def test_single_atom(self):
        assert primal_oracle(np.array([-0.4]), DivergenceKind.KL, 0.7) == -0.4

    def test_matches_dual_on_two_atoms(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            z = rng.uniform(-2, 0, 2)
            for kind in ALL_KINDS:
                dual = robust_risk_dual(z, kind, 0.4).value
                oracle = primal_oracle(z, kind, 0.4, grid_resolution=1e-4)
                assert dual == pytest.approx(oracle, abs=1e-3)

    def test_rejects_negative_radius(self):
        with pytest.raises(ValueError):
            primal_oracle(np.array([-1.0, 0.0]), DivergenceKind.KL, -0.5)

    def test_strong_duality_spot_check(self):
        # the full 200-instance sweep runs in the acceptance suite
        rng = np.random.default_rng(5)
        for i in range(40):
            n = 2 if i % 2 == 0 else 3
            z = rng.uniform(-2, 0, n)
            res = 1e-4 if n == 2 else 5e-4
            for kind in ALL_KINDS:
                for eps in (0.1, 0.5, 2.0):
                    dual = robust_risk_dual(z, kind, eps).value
                    oracle = primal_oracle(z, kind, eps, res)
                    assert -1e-7 <= dual - oracle <= 2e-3


class TestKlClosedForm:
    def test_constant_vector(self):
        z = np.full(5, -0.3)
        for gamma in (0.05, 0.5, 2.0):
            assert kl_reduced_dual(z, 0.4, gamma) == pytest.approx(-0.3 + gamma * 0.4, abs=1e-12)

    def test_one_dimensional_minimization_matches_the_solver(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            z = rng.uniform(-2, 0, 20)
            eps = rng.uniform(0.01, 1.0)
            oracle = minimize_scalar_golden(
                lambda t: kl_reduced_dual(z, eps, math.exp(t)), math.log(1e-8), math.log(1e3)
            )
            assert robust_risk_dual(z, DivergenceKind.KL, eps).value == pytest.approx(
                oracle, abs=1e-6
            )

    def test_large_temperature_limits(self):
        rng = np.random.default_rng(7)
        z = rng.uniform(-2, 0, 12)
        assert kl_softmax_risk(z, 1e7) == pytest.approx(float(z.mean()), abs=1e-6)
        eps = 0.3
        big = 1e6
        assert kl_reduced_dual(z, eps, big) == pytest.approx(big * eps + z.mean(), rel=1e-6)

    def test_softmax_form_requires_positive_temperature(self):
        with pytest.raises(ValueError):
            kl_softmax_risk(np.array([-1.0, 0.0]), 0.0)
        with pytest.raises(ValueError):
            kl_reduced_dual(np.array([-1.0, 0.0]), 0.1, -1.0)


class TestDualGradient:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_matches_central_finite_differences(self, kind):
        rng = np.random.default_rng(8)
        checked = 0
        while checked < 20:
            z = rng.uniform(-2, 0, 12)
            beta = rng.uniform(-0.5, 0.5)
            gamma = rng.uniform(0.4, 2.0)
            u = (z - beta) / gamma
            if kind is DivergenceKind.CHI_SQUARE and np.min(np.abs(u + 2.0)) < 0.1:
                continue
            if kind in (DivergenceKind.BURG, DivergenceKind.HELLINGER) and u.max() > 0.8:
                continue
            eps = 0.2
            gb, gg = dual_gradient(z, kind, eps, beta, gamma)
            h = 1e-6
            fd_b = (
                dual_objective(z, kind, eps, beta + h, gamma)
                - dual_objective(z, kind, eps, beta - h, gamma)
            ) / (2 * h)
            fd_g = (
                dual_objective(z, kind, eps, beta, gamma + h)
                - dual_objective(z, kind, eps, beta, gamma - h)
            ) / (2 * h)
            assert gb == pytest.approx(fd_b, rel=1e-6, abs=1e-8)
            assert gg == pytest.approx(fd_g, rel=1e-6, abs=1e-8)
            checked += 1

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_small_gradient_at_the_solution(self, kind):
        rng = np.random.default_rng(9)
        z = rng.uniform(-2, 0, 30)
        point = robust_risk_dual(z, kind, 0.15)
        gb, gg = dual_gradient(z, kind, 0.15, point.beta, max(point.gamma, 1e-12))
        assert math.hypot(gb, gg) <= 1e-3

    def test_policy_gradient_matches_finite_differences(self):
        log = make_two_record_log()
        policy = make_two_record_policy()
        kind, eps, beta, gamma = DivergenceKind.CHI_SQUARE, 0.3, -0.2, 1.5
        _, _, g_theta = dual_gradient_policy(log, policy, kind, eps, beta, gamma)
        h = 1e-6
        from dataclasses import replace

        for i in range(policy.theta.shape[0]):
            for j in range(policy.theta.shape[1]):
                up, down = policy.theta.copy(), policy.theta.copy()
                up[i, j] += h
                down[i, j] -= h
                f_up = dual_objective(
                    importance_weights(log, replace(policy, theta=up)).values,
                    kind, eps, beta, gamma,
                )
                f_down = dual_objective(
                    importance_weights(log, replace(policy, theta=down)).values,
                    kind, eps, beta, gamma,
                )
                fd = (f_up - f_down) / (2 * h)
                assert g_theta[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_unit_weight_policy_reduces_to_conjugate_chain(self):
        # with all weights equal to one, the parameter gradient is the
        # conjugate-derivative-weighted mean of cost-scaled score vectors
        log = make_two_record_log()
        theta = np.array([[np.log(0.3), np.log(0.7)], [np.log(0.4), np.log(0.6)], [0.0, 0.0]])
        from cfdro.policies import LinearPolicy, Multiclass
        from cfdro.divergences import conjugate_derivative

        matching = LinearPolicy(theta=theta, action_space=Multiclass(2))
        wc = importance_weights(log, matching)
        np.testing.assert_allclose(wc.weights, 1.0, atol=1e-12)
        kind, eps, beta, gamma = DivergenceKind.KL, 0.2, -0.5, 1.0
        _, _, g_theta = dual_gradient_policy(log, matching, kind, eps, beta, gamma)
        d1 = np.asarray(conjugate_derivative(kind, (wc.values - beta) / gamma))
        manual = sum(
            d1[i] * wc.values[i] * matching.grad_log_prob(log.features[i], int(log.actions[i]))
            for i in range(log.n)
        ) / log.n
        np.testing.assert_allclose(g_theta, manual, atol=1e-12)

    def test_rejects_boundary_points(self):
        z = np.array([-0.2, 0.0])
        with pytest.raises(ValueError):
            dual_gradient(z, DivergenceKind.BURG, 0.1, -2.0, 0.5)
        with pytest.raises(ValueError):
            dual_gradient(z, DivergenceKind.KL, 0.1, 0.0, 0.0)
