import math

import numpy as np
import pytest
from scipy import linalg

from itergp import InputError, ModelSpec, NumericalError
from itergp.exact import (
    DensePosterior,
    conditional_cholesky_update,
    mll,
    mll_grad,
    posterior,
    sample_affine,
    spectral_basis,
    spectral_projection_error,
)
from itergp.kernels import grad_H_all

from conftest import all_models, se_model


def naive(model, X, y, Xs):
    Hinv = np.linalg.inv(model.H(X))
    r = y - model.mean
    mean = model.mean + model.K(Xs, X) @ Hinv @ r
    cov = model.K(Xs) - model.K(Xs, X) @ Hinv @ model.K(X, Xs)
    n = len(y)
    sign, logdet = np.linalg.slogdet(model.H(X))
    value = -0.5 * r @ Hinv @ r - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)
    grad = [0.5 * r @ Hinv @ dH @ Hinv @ r - 0.5 * np.trace(Hinv @ dH) for dH in grad_H_all(model, X)]
    return mean, cov, value, np.array(grad)


def test_empty_data_gives_prior():
    m = se_model(1, mean=0.3)
    Xs = np.linspace(0, 1, 4)[:, None]
    post = posterior(m, np.zeros((0, 1)), np.zeros(0), Xs)
    np.testing.assert_array_equal(post.mean, np.full(4, 0.3))
    np.testing.assert_array_equal(post.cov, m.K(Xs))


def test_huge_noise_returns_prior(rng):
    m = se_model(1, noise=1e4)  # noise variance 1e8
    X = rng.uniform(0, 1, (10, 1))
    y = rng.standard_normal(10)
    post = posterior(m, X, y, X)
    assert np.max(np.abs(post.mean - m.mean)) <= 1e-4 * np.linalg.norm(y)
    np.testing.assert_allclose(post.cov, m.K(X), atol=1e-4)


def test_near_noiseless_interpolation():
    # Noise must be positive, so 1e-8 on the scale stands in for zero.
    m = se_model(1, noise=1e-8)
    post = posterior(m, [[0.4]], [1.7], [[0.4]])
    assert post.mean[0] == pytest.approx(1.7, abs=1e-12)
    assert post.cov[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_mll_closed_forms():
    m = se_model(1, noise=1e-8)
    assert mll(m, [[0.0]], [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert mll(m, [[0.0]], [0.0]) == pytest.approx(-0.918939, abs=1e-6)
    m2 = se_model(1, noise=1.0)
    assert mll(m2, [[0.0]], [2.0]) == pytest.approx(-2.265512, abs=1e-6)


@pytest.mark.parametrize("name", ["se", "matern32", "periodic", "product"])
def test_against_naive_inverse(name, rng):
    base = all_models(2)[name]
    m = ModelSpec(base.kernel, base.kernel_params, base.noise_scale, 0.2)
    X = rng.uniform(-2, 2, (64, 2))
    y = rng.standard_normal(64)
    Xs = rng.uniform(-2, 2, (7, 2))
    mean, cov, value, grad = naive(m, X, y, Xs)
    post = posterior(m, X, y, Xs)
    np.testing.assert_allclose(post.mean, mean, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(post.cov, cov, rtol=1e-8, atol=1e-10)
    assert mll(m, X, y) == pytest.approx(value, rel=1e-8)
    np.testing.assert_allclose(mll_grad(m, X, y), grad, rtol=1e-8, atol=1e-10)


def test_posterior_cov_is_psd(rng):
    m = all_models(1)["matern52"]
    X = rng.uniform(0, 3, (40, 1))
    post = posterior(m, X, rng.standard_normal(40), np.linspace(0, 3, 50)[:, None])
    np.testing.assert_array_equal(post.cov, post.cov.T)
    lam = np.linalg.eigvalsh(post.cov)
    assert lam.min() >= -1e-8 * np.trace(post.cov) / 50


@pytest.mark.parametrize("name", list(all_models(2)))
def test_mll_grad_central_differences(name, rng):
    m = all_models(2)[name]
    X = rng.uniform(-1.5, 1.5, (32, 2))
    y = rng.standard_normal(32)
    g = mll_grad(m, X, y)
    h = 1e-6
    for k in range(m.n_params):
        e = np.zeros(m.n_params)
        e[k] = h
        fd = (mll(m.with_theta(m.theta + e), X, y) - mll(m.with_theta(m.theta - e), X, y)) / (2 * h)
        assert abs(fd - g[k]) <= 1e-5 * max(abs(g[k]), 1e-3)


def test_noise_gradient_with_zero_targets(rng):
    m = se_model(1, noise=0.3)
    X = rng.uniform(0, 2, (20, 1))
    g = mll_grad(m, X, np.zeros(20))
    assert g[m.noise_index] == pytest.approx(-0.3 * np.trace(np.linalg.inv(m.H(X))), rel=1e-10)


def test_doubling_targets_quadruples_data_term(rng):
    m = all_models(1)["se"]
    X = rng.uniform(0, 2, (20, 1))
    y = rng.standard_normal(20)
    complexity = mll_grad(m, X, np.zeros(20))
    fit1 = mll_grad(m, X, y) - complexity
    fit2 = mll_grad(m, X, 2 * y) - complexity
    np.testing.assert_allclose(fit2, 4 * fit1, rtol=1e-10, atol=1e-12)


def test_mll_permutation_invariant(rng):
    m = all_models(2)["matern12"]
    X = rng.standard_normal((50, 2))
    y = rng.standard_normal(50)
    p = rng.permutation(50)
    assert mll(m, X[p], y[p]) == pytest.approx(mll(m, X, y), abs=1e-10)


def test_dense_guard_and_shape_errors():
    m = se_model(1)
    with pytest.raises(InputError):
        mll(m, np.zeros((5, 1)), np.zeros(5), max_n=4)
    with pytest.raises(InputError):
        mll(m, np.zeros((5, 1)), np.zeros(4))


def test_sample_affine_trivial():
    post = DensePosterior(np.array([0.0]), np.array([[4.0]]))
    assert sample_affine(post, [1.0])[0] == 2.0
    post = DensePosterior(np.array([1.0, -1.0]), np.eye(2))
    np.testing.assert_array_equal(sample_affine(post, np.zeros(2)), [1.0, -1.0])


def test_sample_affine_covariance(rng):
    m = se_model(1, 0.5)
    X = np.linspace(0, 1, 6)[:, None]
    post = posterior(m, X[:3], [0.1, 0.2, -0.3], X)
    S = sample_affine(post, rng.standard_normal((6, 8192)))
    emp = np.cov(S)
    C = post.cov
    se = np.sqrt((C**2 + np.outer(np.diag(C), np.diag(C))) / 8192)
    assert np.all(np.abs(emp - C) <= 5 * se + 1e-12)
    assert np.all(np.abs(S.mean(axis=1) - post.mean) <= 5 * np.sqrt(np.diag(C) / 8192) + 1e-12)


def test_sample_affine_jitter_on_singular_cov():
    v = np.array([1.0, 2.0, 3.0])
    post = DensePosterior(np.zeros(3), np.outer(v, v))
    s = sample_affine(post, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(s, v, atol=1e-4)


def test_sample_affine_fails_on_indefinite():
    post = DensePosterior(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NumericalError):
        sample_affine(post, np.zeros(2))


def test_conditional_update_closed_form():
    m = se_model(1, noise=1e-3)
    L11 = np.array([[1.0]])
    L21, L22 = conditional_cholesky_update(L11, m.K([[0.0]], [[1.0]]), m.K([[1.0]]))
    assert L21[0, 0] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert L22[0, 0] == pytest.approx(math.sqrt(1 - math.exp(-1)), abs=1e-15)


def test_conditional_update_reconstructs_joint(rng):
    m = all_models(2)["matern32"]
    X = rng.standard_normal((12, 2))
    K = m.K(X) + 1e-6 * np.eye(12)
    L11 = linalg.cholesky(K[:8, :8], lower=True)
    L21, L22 = conditional_cholesky_update(L11, K[:8, 8:], K[8:, 8:])
    L = np.block([[L11, np.zeros((8, 4))], [L21, L22]])
    assert np.linalg.norm(L @ L.T - K) <= 1e-8 * np.linalg.norm(K)
    np.testing.assert_allclose(L, linalg.cholesky(K, lower=True), atol=1e-8)


def test_conditional_update_duplicate_points(rng):
    m = se_model(1)
    X = rng.standard_normal((4, 1))
    K = m.K(X)
    L11 = linalg.cholesky(K, lower=True)
    _, L22 = conditional_cholesky_update(L11, K, K)
    assert np.max(np.abs(L22)) <= 1e-3


def test_conditional_update_shape_check():
    with pytest.raises(InputError):
        conditional_cholesky_update(np.eye(2), np.zeros((3, 1)), np.eye(1))


def test_spectral_basis_invariants(rng):
    m = all_models(2)["se"]
    X = rng.standard_normal((30, 2))
    b = spectral_basis(m, X)
    U, lam = b.eigenvectors, b.eigenvalues
    assert np.all(np.diff(lam) <= 0)
    np.testing.assert_allclose(U.T @ U, np.eye(30), atol=1e-8)
    K = m.K(X)
    assert np.linalg.norm(U @ np.diag(lam) @ U.T - K) <= 1e-8 * np.linalg.norm(K)


def test_spectral_projection_error(rng):
    m = all_models(1)["matern32"]
    X = rng.standard_normal((20, 1))
    b = spectral_basis(m, X)
    v = rng.standard_normal(20)
    per, semi = spectral_projection_error(b, v, v)
    assert semi == 0.0 and np.all(per == 0.0)

    per, semi = spectral_projection_error(b, v, v + b.eigenvectors[:, 0])
    np.testing.assert_allclose(per, np.eye(20)[0], atol=1e-12)
    assert semi == pytest.approx(math.sqrt(b.eigenvalues[0]), rel=1e-10)

    w = rng.standard_normal(20)
    idx = [0, 3, 7]
    per, semi = spectral_projection_error(b, v, w, idx)
    loop = [abs(sum(b.eigenvectors[k, i] * (w[k] - v[k]) for k in range(20))) for i in idx]
    np.testing.assert_allclose(per, loop, atol=1e-12)
    expected = math.sqrt(sum(max(b.eigenvalues[i], 0) * e**2 for i, e in zip(idx, loop)))
    assert semi == pytest.approx(expected, rel=1e-10)
