import numpy as np
import pytest
from scipy import stats

from itergp import InputError, Matern, ModelSpec, Periodic, SquaredExponential
from itergp.features import (
    DEFAULT_NUM_FEATURES,
    PriorSample,
    draw_prior_samples,
    feature_input_grad,
    feature_matrix,
    prior_sample_eval,
    sample_features,
)

from conftest import all_models, se_model


def test_default_feature_count():
    assert DEFAULT_NUM_FEATURES == 2000


def test_se_frequency_std():
    fs = sample_features(SquaredExponential(2), [2.0, 2.0], 50_000, seed=0)
    std = fs.omega.std(axis=0)
    se = 0.5 / np.sqrt(2 * 50_000)  # standard error of a Gaussian sample std
    assert np.all(np.abs(std - 0.5) <= 3 * se)


def test_matern12_frequencies_heavy_tailed():
    fs = sample_features(Matern(0.5, 1), [1.0], 50_000, seed=1)
    assert stats.kurtosis(fs.omega[:, 0], fisher=False) > 3.0


def test_same_seed_same_frequencies():
    a = sample_features(Matern(1.5, 3), [1.0, 0.5, 2.0], 100, seed=7)
    b = sample_features(Matern(1.5, 3), [1.0, 0.5, 2.0], 100, seed=7)
    np.testing.assert_array_equal(a.omega, b.omega)


def test_unit_norm_single_point():
    fs = sample_features(SquaredExponential(3), np.ones(3), 64, seed=2)
    phi = feature_matrix(fs, np.array([[0.3, -1.0, 2.0]]))
    assert phi @ phi.T == pytest.approx(1.0, abs=1e-14)


def test_se_kernel_approximation(rng):
    X = rng.uniform(-1, 1, (16, 2))
    fs = sample_features(SquaredExponential(2), [1.0, 1.0], 50_000, seed=3)
    Phi = feature_matrix(fs, X)
    assert np.max(np.abs(Phi @ Phi.T - SquaredExponential(2).gram([1.0, 1.0], X))) <= 0.02


@pytest.mark.parametrize("name", ["matern32", "periodic", "product"])
def test_other_kernels_approximation(name, rng):
    m = all_models(2)[name]
    X = rng.uniform(-1, 1, (10, 2))
    fs = sample_features(m.kernel, m.kernel_params, 50_000, seed=4, input_dim=2)
    Phi = feature_matrix(fs, X)
    assert np.max(np.abs(Phi @ Phi.T - m.K(X))) <= 0.03


def test_cos_phase_at_origin():
    fs = sample_features(SquaredExponential(1), [1.0], 20, seed=5, variant="cos-phase")
    phi = feature_matrix(fs, np.zeros((1, 1)))[0]
    np.testing.assert_allclose(phi, np.sqrt(2 / 20) * np.cos(fs.phases), atol=1e-15)


def test_zero_weights_give_prior_mean():
    m = se_model(2, mean=0.0)
    fs = sample_features(m.kernel, m.kernel_params, 10, seed=0)
    ps = PriorSample(fs, np.zeros(fs.dim))
    assert np.all(prior_sample_eval(ps, np.ones((3, 2))) == 0.0)


def test_prior_sample_covariance(rng):
    m = se_model(1, 0.7, 1.5)
    X = np.linspace(-1, 1, 8)[:, None]
    ps = draw_prior_samples(m, 4096, 2000, seed=6)
    F = ps(X)
    emp = np.cov(F)
    K = m.K(X)
    # Var of a sample covariance entry for jointly Gaussian variables.
    se = np.sqrt((K**2 + np.outer(np.diag(K), np.diag(K))) / 4096)
    assert np.all(np.abs(emp - K) <= 5 * se + 0.02)


def test_prior_sample_evaluation_is_deterministic(rng):
    ps = draw_prior_samples(se_model(2), 3, 100, seed=9)
    X = rng.standard_normal((5, 2))
    np.testing.assert_array_equal(ps(X), ps(X))


def test_joint_cross_covariance(rng):
    m = ModelSpec(Matern(1.5, 1), [0.5], 0.1)
    X, Xs = np.array([[0.0], [0.3]]), np.array([[0.1], [1.0]])
    ps = draw_prior_samples(m, 8000, 2000, seed=11)
    A, B = ps(X), ps(Xs)
    cross = A @ B.T / A.shape[1]
    K = m.K(X, Xs)
    se = np.sqrt((K**2 + 1.0) / 8000)
    assert np.all(np.abs(cross - K) <= 5 * se + 0.02)


def test_with_params_reuses_randomness():
    fs = sample_features(SquaredExponential(1), [1.0], 50, seed=0)
    fs2 = fs.with_params([2.0])
    np.testing.assert_allclose(fs2.omega, fs.omega / 2.0)


def test_feature_input_grad_matches_finite_differences(rng):
    fs = sample_features(Matern(2.5, 2), [0.8, 1.3], 40, seed=1)
    X = rng.standard_normal((3, 2))
    G = feature_input_grad(fs, X)
    h = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (feature_matrix(fs, X + e) - feature_matrix(fs, X - e)) / (2 * h)
        np.testing.assert_allclose(G[:, :, d], fd, atol=1e-8)


def test_errors():
    with pytest.raises(InputError):
        sample_features(SquaredExponential(1), [1.0], 0)
    with pytest.raises(InputError):
        sample_features(SquaredExponential(1), [1.0], 10, variant="orthogonal")
    fs = sample_features(SquaredExponential(2), [1.0, 1.0], 10, seed=0)
    with pytest.raises(InputError):
        feature_matrix(fs, np.zeros((2, 3)))


def test_periodic_harmonics_are_integer_multiples():
    fs = sample_features(Periodic(1), [0.8, 2.0], 500, seed=0)
    k = fs.omega[:, 0] * 2.0 / (2 * np.pi)
    np.testing.assert_allclose(k, np.round(k), atol=1e-9)
