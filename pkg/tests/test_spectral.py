import math
import unittest

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import InputError, NumericalError
from core.spectral import Dataset, ModelTruth, apply_filter, decompose, min_norm_project


def random_instance(n=6, p=4, lam=0.5, sigma2=1.0, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta0 = rng.standard_normal(p)
    y = X @ beta0 + math.sqrt(sigma2) * rng.standard_normal(n)
    return decompose(Dataset(X, y), lam, ModelTruth(beta0, sigma2))


class TestDataset(unittest.TestCase):
    def test_shapes_validated(self):
        with self.assertRaises(InputError):
            Dataset(np.zeros(3), np.zeros(3))
        with self.assertRaises(InputError):
            Dataset(np.zeros((3, 2)), np.zeros(4))
        with self.assertRaises(InputError):
            Dataset(np.array([[1.0, math.nan]]), np.zeros(1))

    def test_arrays_read_only(self):
        data = Dataset(np.eye(2), np.ones(2))
        with self.assertRaises(ValueError):
            data.X[0, 0] = 5.0

    def test_covariance_checked(self):
        with self.assertRaises(InputError):
            ModelTruth(np.zeros(2), 1.0, np.array([[1.0, 0.5], [0.0, 1.0]]))
        with self.assertRaises(InputError):
            ModelTruth(np.zeros(2), 1.0, np.array([[1.0, 2.0], [2.0, 1.0]]))
        with self.assertRaises(InputError):
            ModelTruth(np.zeros(2), -1.0)


class TestDecompose(unittest.TestCase):
    def test_identity_design(self):
        spec = decompose(Dataset(np.eye(3), np.array([1.0, -2.0, 0.5])), 0.0)
        np.testing.assert_allclose(spec.s, np.full(3, 1.0 / 3.0), rtol=1e-12)
        self.assertEqual(spec.p_tilde, 1)

    def test_eigenvalues_match_dense_solver(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((5, 3))
        spec = decompose(Dataset(X, rng.standard_normal(5)), 0.0)
        oracle = np.sort(np.linalg.eigvalsh(X.T @ X / 5))[::-1]
        np.testing.assert_allclose(spec.s, oracle, rtol=1e-10)

    def test_reconstruction(self):
        spec = random_instance(n=7, p=9)
        X = spec.data.X
        recon = (spec.V * spec.s) @ spec.V.T
        self.assertLessEqual(np.abs(recon - X.T @ X / 7).max(), 1e-8 * spec.s[0])
        np.testing.assert_allclose(spec.V.T @ spec.V, np.eye(9), atol=1e-12)

    def test_rank_deficient_zero_eigenvalues(self):
        spec = random_instance(n=3, p=5)
        self.assertEqual(int(np.sum(spec.s > 0)), 3)
        self.assertTrue(np.all(spec.s[3:] == 0.0))
        # jądro X nie wchodzi do p̃
        self.assertEqual(spec.p_tilde, 3)

    def test_decomposition_identity(self):
        spec = random_instance(n=8, p=5, lam=0.3)
        lhs = np.sqrt(spec.sl) * spec.beta_lambda_coords + spec.eps_lambda_coords
        np.testing.assert_allclose(lhs, spec.y_lambda_coords, atol=1e-10 * np.abs(spec.y_lambda_coords).max())

    def test_negative_lambda_rejected(self):
        with self.assertRaises(InputError):
            decompose(Dataset(np.eye(2), np.ones(2)), -0.1)

    def test_require_truth(self):
        spec = decompose(Dataset(np.eye(2), np.ones(2)), 0.1)
        self.assertFalse(spec.has_truth)
        with self.assertRaises(InputError):
            spec.require_truth("decompose_linear")

    def test_with_response_reuses_eigenpairs(self):
        spec = random_instance(n=6, p=4)
        y = np.arange(6.0)
        other = spec.with_response(spec.data.with_response(y))
        np.testing.assert_array_equal(other.s, spec.s)
        fresh = decompose(Dataset(spec.data.X, y), spec.lam)
        np.testing.assert_allclose(np.abs(other.y_lambda_coords), np.abs(fresh.y_lambda_coords), atol=1e-10)
        with self.assertRaises(InputError):
            spec.with_response(Dataset(spec.data.X + 1.0, y))


def diagonal_design(values):
    n = len(values)
    return Dataset(np.diag(np.sqrt(n * np.asarray(values, dtype=float))), np.ones(n))


@pytest.mark.parametrize(
    "f, expected",
    [
        (lambda x: np.ones_like(x), [1.0, 1.0, 1.0]),
        (lambda x: x, [2.0, 1.0, 0.0]),
        (lambda x: np.exp(-x), [math.exp(-2.0), math.exp(-1.0), 1.0]),
        (lambda x: math.exp(-x), [math.exp(-2.0), math.exp(-1.0), 1.0]),
    ],
)
def test_apply_filter_multipliers(f, expected):
    spec = decompose(diagonal_design([2.0, 1.0, 0.0]), 0.0)
    np.testing.assert_allclose(apply_filter(spec, f).multipliers, expected, rtol=1e-12)


def test_apply_filter_acts_on_eigenvectors():
    spec = random_instance(n=5, p=4, lam=0.2)
    op = apply_filter(spec, lambda x: x)
    Sigma_l = spec.data.X.T @ spec.data.X / 5 + 0.2 * np.eye(4)
    v = np.random.default_rng(1).standard_normal(4)
    np.testing.assert_allclose(spec.to_original(op(spec.to_coords(v))), Sigma_l @ v, atol=1e-10)


def test_apply_filter_rejects_non_finite():
    spec = decompose(diagonal_design([2.0, 1.0, 0.0]), 0.0)
    with pytest.raises(NumericalError):
        apply_filter(spec, lambda x: 1.0 / x)


def test_min_norm_project_full_rank_is_identity():
    rng = np.random.default_rng(1)
    data = Dataset(rng.standard_normal((6, 3)), np.zeros(6))
    beta = rng.standard_normal(3)
    np.testing.assert_allclose(min_norm_project(data, beta), beta, atol=1e-12)


def test_min_norm_project_kills_null_space():
    X = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    data = Dataset(X, np.zeros(2))
    np.testing.assert_allclose(min_norm_project(data, np.array([0.0, 0.0, 3.0])), 0.0, atol=1e-14)


def test_min_norm_project_matches_pseudo_inverse():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 4))
    beta = rng.standard_normal(4)
    data = Dataset(X, np.zeros(5))
    oracle = np.linalg.pinv(X) @ (X @ beta)
    np.testing.assert_allclose(min_norm_project(data, beta), oracle, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 5.0))
def test_p_tilde_counts_distinct_positive_eigenvalues(seed, lam):
    spec = random_instance(n=4, p=6, lam=lam, seed=seed)
    assert spec.p_tilde == 4
    assert spec.distinct_eigenvalues.shape == (4,)


if __name__ == "__main__":
    unittest.main()
