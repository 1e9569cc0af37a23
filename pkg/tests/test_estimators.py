import math
import unittest

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import Ridge

from core.errors import InputError
from core.estimators import (
    FilterSpec,
    cg_interpolated,
    cg_solve,
    cg_time_grid,
    default_step,
    filter_estimate,
    gradient_descent,
    gradient_flow,
    residual_polynomial,
    rho_at,
    ridge,
    tau,
)
from core.spectral import Dataset, decompose


def make_spec(n=8, p=5, lam=0.1, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = X @ rng.standard_normal(p) + rng.standard_normal(n)
    return decompose(Dataset(X, y), lam)


def scalar_spec(s, y, lam=0.0):
    return decompose(Dataset(np.array([[math.sqrt(s)]]), np.array([float(y)])), lam)


class TestFilterSpec(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(InputError):
            FilterSpec("XX", 1.0)
        with self.assertRaises(InputError):
            FilterSpec.gf(-1.0)
        with self.assertRaises(InputError):
            FilterSpec.gd(0.1, 2.5)
        with self.assertRaises(InputError):
            FilterSpec("GD", 3)

    def test_cg_has_no_linear_residual(self):
        with self.assertRaises(InputError):
            FilterSpec.cg(1.0).residual(make_spec())

    def test_gd_residual(self):
        spec = make_spec()
        R = FilterSpec.gd(0.1, 3).residual(spec).multipliers
        np.testing.assert_allclose(R, (1.0 - 0.1 * spec.sl) ** 3)


class TestRidge(unittest.TestCase):
    def test_matches_dense_solve(self):
        rng = np.random.default_rng(3)
        X = np.diag(np.sqrt(3.0 * np.array([2.0, 1.0, 0.5])))
        y = rng.standard_normal(3)
        spec = decompose(Dataset(X, y), 0.2)
        oracle = np.linalg.solve(X.T @ X / 3 + np.eye(3), X.T @ y / 3)
        np.testing.assert_allclose(spec.to_original(ridge(spec, 1.0)), oracle, rtol=1e-10)

    def test_matches_sklearn(self):
        spec = make_spec(n=10, p=6, lam=0.3, seed=4)
        X, y = spec.data.X, spec.data.y
        model = Ridge(alpha=10 * 0.7, fit_intercept=False).fit(X, y)
        np.testing.assert_allclose(spec.to_original(ridge(spec, 0.7)), model.coef_, rtol=1e-8)

    def test_large_penalty_vanishes(self):
        spec = make_spec()
        scale = np.linalg.norm(ridge(spec, 0.0))
        self.assertLessEqual(np.linalg.norm(ridge(spec, 1e12)), 1e-6 * scale)
        np.testing.assert_array_equal(ridge(spec, math.inf), 0.0)

    def test_filter_vanishes_at_lambda(self):
        spec = make_spec(lam=0.4)
        R = FilterSpec.rr(0.4).residual(spec)
        np.testing.assert_allclose(R.multipliers, 0.0, atol=1e-15)
        np.testing.assert_allclose(filter_estimate(spec, R), ridge(spec, 0.4), rtol=1e-12)


class TestGradientMethods(unittest.TestCase):
    def test_gd_zero_steps(self):
        path = gradient_descent(make_spec(), 0.1, 0)
        self.assertEqual(path.steps, 0)
        np.testing.assert_array_equal(path.iterates[0], 0.0)

    def test_gd_scalar_recursion(self):
        spec = scalar_spec(2.0, 1.0)
        path = gradient_descent(spec, 0.25, 6)
        for k in range(7):
            expected = (1.0 - 0.5**k) / math.sqrt(2.0)
            self.assertAlmostEqual(float(spec.to_original(path.iterates[k])[0]), expected, places=12)

    def test_gd_converges_to_ridge(self):
        spec = make_spec(n=20, p=3, lam=0.5, seed=5)
        path = gradient_descent(spec, default_step(spec), 10_000)
        target = ridge(spec, spec.lam)
        self.assertLessEqual(np.linalg.norm(path.iterates[-1] - target), 1e-6 * np.linalg.norm(target))
        self.assertFalse(path.diverging)

    def test_gd_flags_divergence(self):
        spec = make_spec()
        path = gradient_descent(spec, 2.5 / spec.norm, 3)
        self.assertTrue(path.diverging)

    def test_gf_limits(self):
        spec = make_spec(lam=0.2)
        np.testing.assert_array_equal(gradient_flow(spec, 0.0), 0.0)
        target = ridge(spec, spec.lam)
        late = gradient_flow(spec, 1e3 / spec.sl[-1])
        self.assertLessEqual(np.linalg.norm(late - target), 1e-6 * np.linalg.norm(target))

    def test_gd_approaches_gf_at_first_order(self):
        spec = make_spec(n=20, p=5, lam=0.3, seed=9)
        t = 2.0
        target = gradient_flow(spec, t)
        ks = [2**j for j in range(10, 15)]
        gaps = [np.linalg.norm(gradient_descent(spec, t / k, k).iterates[-1] - target) for k in ks]
        # k·|GD_k − GF_t| stabilizuje się: błąd rzędu C/k
        scaled = np.array(gaps) * np.array(ks)
        np.testing.assert_allclose(scaled[1:] / scaled[:-1], 1.0, atol=0.02)
        self.assertLessEqual(gaps[-1], 1.05 * scaled[0] / ks[-1])

    def test_gf_scalar(self):
        spec = scalar_spec(1.0, 1.0)
        self.assertAlmostEqual(float(spec.to_original(gradient_flow(spec, 1.0))[0]), 1.0 - math.exp(-1.0), places=14)


def brute_force_cg(spec, k):
    """Minimalizator ‖y_λ − Σ̂_λ^{1/2}β‖ po podprzestrzeni Kryłowa rzędu k (baza ortonormalna)."""
    x, y = spec.sl, spec.y_lambda_coords
    if k == 0:
        return np.zeros_like(y)
    basis = []
    w = np.sqrt(x) * y
    for _ in range(k):
        for _ in range(2):
            for q in basis:
                w = w - (q @ w) * q
        basis.append(w / np.linalg.norm(w))
        w = x * basis[-1]
    Q = np.column_stack(basis)
    c, *_ = np.linalg.lstsq(np.sqrt(x)[:, None] * Q, y, rcond=None)
    return Q @ c


class TestConjugateGradients(unittest.TestCase):
    def setUp(self):
        self.spec = make_spec(n=6, p=4, lam=0.1, seed=0)
        self.trace = cg_solve(self.spec)

    def test_start_and_terminal(self):
        np.testing.assert_array_equal(self.trace.iterates[0], 0.0)
        self.assertEqual(self.trace.stop_index, self.spec.p_tilde)
        target = ridge(self.spec, self.spec.lam)
        self.assertLessEqual(np.linalg.norm(self.trace.iterates[-1] - target), 1e-8 * np.linalg.norm(target))

    def test_residual_orthogonality(self):
        # reszty CG są Σ̂_λ-ortogonalne; zwykłe iloczyny dają ⟨R_j y, R_k y⟩ = ‖R_k y‖² dla j < k
        spec, trace = self.spec, self.trace
        y = spec.y_lambda_coords
        residuals = [y - np.sqrt(spec.sl) * trace.iterates[k] for k in range(trace.stop_index + 1)]
        scale = float(y @ (spec.sl * y))
        for j in range(len(residuals)):
            for k in range(j + 1, len(residuals)):
                self.assertLessEqual(abs(residuals[j] @ (spec.sl * residuals[k])), 1e-8 * scale)
                self.assertAlmostEqual(residuals[j] @ residuals[k], residuals[k] @ residuals[k], delta=1e-8 * (y @ y))

    def test_ritz_values(self):
        trace = self.trace
        for k in range(1, trace.stop_index + 1):
            np.testing.assert_allclose(np.linalg.eigvalsh(trace.tridiag(k)), trace.ritz[k], rtol=1e-10)
            self.assertTrue(np.all(trace.ritz[k] > 0))
        for k in range(1, trace.stop_index):
            self.assertTrue(np.all(trace.ritz[k + 1][:-1] <= trace.ritz[k] * (1 + 1e-12)))
            self.assertTrue(np.all(trace.ritz[k] <= trace.ritz[k + 1][1:] * (1 + 1e-12)))
        self.assertTrue(np.all(np.diff(trace.rho) > 0))

    def test_terminal_rho(self):
        expected = float(np.sum(1.0 / (self.spec.distinct_eigenvalues + self.spec.lam)))
        self.assertAlmostEqual(self.trace.rho[-1] / expected, 1.0, places=8)

    def test_max_iter_cap(self):
        trace = cg_solve(self.spec, max_iter=2)
        self.assertEqual(trace.stop_index, 2)
        self.assertFalse(trace.stopped_by_tolerance)

    def test_zero_response(self):
        spec = decompose(Dataset(self.spec.data.X, np.zeros(6)), 0.1)
        trace = cg_solve(spec)
        self.assertEqual(trace.stop_index, 0)
        self.assertTrue(trace.stopped_by_tolerance)

    def test_invalid_tolerance(self):
        with self.assertRaises(InputError):
            cg_solve(self.spec, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_iterates_match_krylov_minimiser(seed):
    spec = make_spec(n=7 + seed, p=5, lam=0.1 + 0.2 * seed, seed=seed)
    trace = cg_solve(spec)
    for k in range(trace.stop_index + 1):
        oracle = brute_force_cg(spec, k)
        np.testing.assert_allclose(trace.iterates[k], oracle, rtol=1e-8, atol=1e-10 * np.linalg.norm(oracle))


@pytest.mark.parametrize("seed", range(20))
def test_terminal_iterate_is_ridge(seed):
    rng = np.random.default_rng(100 + seed)
    n, p = int(rng.integers(4, 15)), int(rng.integers(2, 12))
    spec = make_spec(n=n, p=p, lam=float(rng.uniform(0.05, 2.0)), seed=100 + seed)
    trace = cg_solve(spec)
    target = ridge(spec, spec.lam)
    assert trace.stop_index <= spec.p_tilde
    assert np.linalg.norm(trace.iterates[trace.stop_index] - target) <= 1e-8 * np.linalg.norm(target)


class TestResidualPolynomial(unittest.TestCase):
    def setUp(self):
        self.spec = make_spec(n=30, p=12, lam=0.5, seed=6)
        self.trace = cg_solve(self.spec)

    def test_start(self):
        poly = residual_polynomial(self.trace, 0.0)
        np.testing.assert_array_equal(poly(self.spec.sl), 1.0)
        self.assertEqual(poly.rho_t, 0.0)
        self.assertTrue(math.isinf(poly.x1_t))

    def test_zeros_at_integer_times(self):
        for k in range(1, self.trace.stop_index + 1):
            values = residual_polynomial(self.trace, k)(self.trace.ritz[k])
            self.assertLessEqual(np.abs(values).max(), 1e-9)

    def test_bounds_below_first_zero(self):
        for t in np.linspace(0.0, self.trace.stop_index, 41):
            poly = residual_polynomial(self.trace, t)
            upper = poly.x1_t if math.isfinite(poly.x1_t) else self.spec.norm
            xs = np.linspace(0.0, upper, 100)
            values = poly(xs)
            self.assertTrue(np.all(np.maximum(1.0 - poly.rho_t * xs, 0.0) <= values + 1e-9))
            self.assertTrue(np.all(values <= np.exp(-poly.rho_t * xs) + 1e-9))

    def test_truncation_split(self):
        poly = residual_polynomial(self.trace, 2.5)
        below, above = poly.truncated(self.spec.sl)
        np.testing.assert_allclose(below + above, poly(self.spec.sl))
        self.assertTrue(np.all(above[self.spec.sl <= poly.x1_t] == 0.0))

    def test_interpolated_estimator(self):
        k = 2
        mid = cg_interpolated(self.trace, k + 0.5)
        np.testing.assert_allclose(mid, 0.5 * (self.trace.iterates[k] + self.trace.iterates[k + 1]))
        np.testing.assert_array_equal(cg_interpolated(self.trace, 3.0), self.trace.iterates[3])
        for t in (0.3, 1.75, self.trace.stop_index - 0.2):
            R = residual_polynomial(self.trace, t)(self.spec.sl)
            oracle = (1.0 - R) * self.spec.y_lambda_coords / np.sqrt(self.spec.sl)
            np.testing.assert_allclose(cg_interpolated(self.trace, t), oracle, rtol=1e-8, atol=1e-12)

    def test_out_of_range(self):
        with self.assertRaises(InputError):
            residual_polynomial(self.trace, self.trace.stop_index + 0.5)


class TestTau(unittest.TestCase):
    def setUp(self):
        self.trace = cg_solve(make_spec(n=30, p=12, lam=0.5, seed=7))

    def test_knots(self):
        self.assertEqual(tau(self.trace, 0.0), 0.0)
        for k in range(1, self.trace.stop_index + 1):
            self.assertAlmostEqual(tau(self.trace, self.trace.rho[k] / 2.0), k, places=10)

    def test_saturates(self):
        self.assertEqual(tau(self.trace, 10 * self.trace.rho[-1]), float(self.trace.stop_index))


@settings(max_examples=50, deadline=None)
@given(fraction=st.floats(0.0, 0.999))
def test_tau_inverts_rho(fraction):
    trace = cg_solve(make_spec(n=30, p=12, lam=0.5, seed=7))
    t = 0.5 * fraction * trace.rho[-1]
    tau_t = tau(trace, t)
    assert tau_t < trace.stop_index
    assert math.isclose(rho_at(trace, tau_t), 2.0 * t, rel_tol=1e-10, abs_tol=1e-14)


@pytest.mark.parametrize("subdivisions", [1, 4, 8])
def test_time_grid(subdivisions):
    trace = cg_solve(make_spec())
    grid = cg_time_grid(trace, subdivisions)
    assert grid.shape == (trace.stop_index * subdivisions + 1,)
    assert grid[0] == 0.0 and grid[-1] == trace.stop_index


def test_time_grid_rejects_zero_subdivisions():
    with pytest.raises(InputError):
        cg_time_grid(cg_solve(make_spec()), 0)


if __name__ == "__main__":
    unittest.main()
