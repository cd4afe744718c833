import json

import numpy as np
import pytest

from itergp import InputError, NumericalError
from itergp.exact import mll, mll_grad
from itergp.kernels import grad_H_all
from itergp.mll import (
    DEFAULT_NUM_PROBES,
    OuterConfig,
    grad_estimate_pathwise,
    grad_estimate_standard,
    initial_distance_stats,
    make_probes,
    optimize,
    quadratic_forms,
)
from itergp.solvers import SolverConfig

from conftest import all_models, se_model


def gp_data(rng, model, n, dims=1):
    X = rng.uniform(-2, 2, (n, dims))
    L = np.linalg.cholesky(model.H(X))
    return X, model.mean + L @ rng.standard_normal(n)


def dense_traces(model, X):
    Hinv = np.linalg.inv(model.H(X))
    return np.array([np.trace(Hinv @ dH) for dH in grad_H_all(model, X)])


def test_default_probe_count():
    assert DEFAULT_NUM_PROBES == 64
    assert OuterConfig().lr == 0.1 and OuterConfig().steps == 100


def test_quadratic_forms_match_dense(rng):
    m = all_models(2)["product"]
    X = rng.standard_normal((30, 2))
    U, V = rng.standard_normal((30, 3)), rng.standard_normal((30, 3))
    Q = quadratic_forms(m, X, U, V, block_size=7)
    dense = np.array([[U[:, j] @ dH @ V[:, j] for j in range(3)] for dH in grad_H_all(m, X)])
    np.testing.assert_allclose(Q, dense, rtol=1e-12, atol=1e-12)


def test_standard_probes_have_unit_covariance(rng):
    m = se_model(1)
    X = rng.standard_normal((6, 1))
    p = make_probes("standard", m, X, 20_000, seed=1)
    C = np.cov(p.rhs(m, X))
    assert np.all(np.abs(C - np.eye(6)) <= 5 * np.sqrt((1 + np.eye(6)) / 20_000))


@pytest.mark.parametrize("prior, slack", [("exact", 0.0), ("rff", 0.05)])
def test_pathwise_probes_have_covariance_H(prior, slack, rng):
    m = se_model(1, 0.7, noise=0.4)
    X = rng.uniform(-1, 1, (6, 1))
    p = make_probes("pathwise", m, X, 20_000, seed=2, prior=prior)
    H = m.H(X)
    C = np.cov(p.rhs(m, X))
    se = np.sqrt((H**2 + np.outer(np.diag(H), np.diag(H))) / 20_000)
    assert np.all(np.abs(C - H) <= 5 * se + slack)


def test_pathwise_probes_follow_theta(rng):
    m = se_model(1, 0.7)
    X = rng.standard_normal((5, 1))
    p = make_probes("pathwise", m, X, 3, seed=0)
    m2 = m.with_theta(m.theta * 1.5)
    assert not np.allclose(p.rhs(m, X), p.rhs(m2, X))
    assert p.fingerprint() == make_probes("pathwise", m, X, 3, seed=0).fingerprint()


def test_probe_errors(rng):
    m = se_model(1)
    X = rng.standard_normal((5, 1))
    with pytest.raises(InputError):
        make_probes("rademacher", m, X)
    with pytest.raises(InputError):
        make_probes("standard", m, X, 0)
    p = make_probes("standard", m, X, 2)
    with pytest.raises(InputError):
        grad_estimate_pathwise(m, X, np.zeros(5), p)
    with pytest.raises(InputError):
        p.prior_values(m, X)


@pytest.mark.parametrize("kind", ["standard", "pathwise"])
def test_trace_estimate_unbiased(kind, rng):
    m = all_models(1)["matern32"]
    X, y = gp_data(rng, m, 24)
    probes = make_probes(kind, m, X, 4096, seed=3, prior="exact")
    est = (grad_estimate_standard if kind == "standard" else grad_estimate_pathwise)(
        m, X, y, probes, solver="exact"
    )
    se = est.trace_terms.std(axis=1, ddof=1) / np.sqrt(4096)
    assert np.all(np.abs(est.trace - dense_traces(m, X)) <= 5 * se)


def test_identity_derivative_reduces_to_hutchinson(rng):
    m = se_model(1, noise=0.5)
    X, y = gp_data(rng, m, 24)
    probes = make_probes("standard", m, X, 4096, seed=4)
    est = grad_estimate_standard(m, X, y, probes, solver="exact")
    # dH/dsigma = 2 sigma I, so the noise row divided by 2 sigma estimates tr(H^-1).
    hutch = est.trace_terms[m.noise_index] / (2 * m.noise_scale)
    Hinv_tr = np.trace(np.linalg.inv(m.H(X)))
    assert abs(hutch.mean() - Hinv_tr) <= 5 * hutch.std(ddof=1) / np.sqrt(4096)


@pytest.mark.parametrize("kind", ["standard", "pathwise"])
def test_gradient_near_exact_with_many_probes(kind, rng):
    m = se_model(1, 0.6, 1.2, noise=0.3)
    X, y = gp_data(rng, m, 24)
    probes = make_probes(kind, m, X, 4096, seed=5, prior="exact")
    fn = grad_estimate_standard if kind == "standard" else grad_estimate_pathwise
    est = fn(m, X, y, probes, solver="cg", cfg=SolverConfig(tol=1e-12))
    g = mll_grad(m, X, y)
    assert np.linalg.norm(est.grad - g) <= 0.02 * np.linalg.norm(g) + 5 * np.linalg.norm(
        0.5 * est.trace_terms.std(axis=1, ddof=1) / np.sqrt(4096)
    )


def test_pathwise_estimate_returns_posterior_samples(rng):
    m = se_model(1, 0.5)
    X, y = gp_data(rng, m, 20)
    probes = make_probes("pathwise", m, X, 8, seed=0)
    est = grad_estimate_pathwise(m, X, y, probes, cfg=SolverConfig(tol=1e-10))
    assert est.samples is not None and est.samples.num_samples == 8
    Xs = np.linspace(-2, 2, 4)[:, None]
    v_y, U = est.solutions[:, 0], est.solutions[:, 1:]
    expected = probes.prior_sample(m)(Xs) + m.K(Xs, X) @ (v_y[:, None] - U)
    np.testing.assert_allclose(est.samples(Xs), expected, atol=1e-12)


def test_pathwise_variance_not_larger(rng):
    worse = 0
    for i in range(5):
        r = np.random.default_rng(100 + i)
        m = se_model(1, r.uniform(0.3, 1.0), noise=r.uniform(0.2, 0.6))
        X, y = gp_data(r, m, 16)
        st = grad_estimate_standard(m, X, y, make_probes("standard", m, X, 2000, seed=i), solver="exact")
        pw = grad_estimate_pathwise(m, X, y, make_probes("pathwise", m, X, 2000, seed=i, prior="exact"),
                                    solver="exact")
        for k in range(m.n_params):
            a, b = pw.trace_terms[k], st.trace_terms[k]
            se = np.sqrt(np.var((a - a.mean()) ** 2) / 2000 + np.var((b - b.mean()) ** 2) / 2000)
            worse += a.var() > b.var() + 3 * se
    assert worse == 0


def test_initial_distances(rng):
    m = all_models(1)["matern52"]
    X = rng.uniform(-1, 1, (20, 1))
    for kind in ["standard", "pathwise"]:
        est, se, ref = initial_distance_stats(m, X, kind, trials=4000, seed=1)
        assert abs(est - ref) <= 5 * se
    assert initial_distance_stats(m, X, "pathwise", 10)[2] == 20.0
    with pytest.raises(InputError):
        initial_distance_stats(m, X, "other")


def test_initial_distance_without_signal():
    m = se_model(1, signal=1e-12, noise=0.5)
    X = np.linspace(0, 1, 10)[:, None]
    _, _, ref = initial_distance_stats(m, X, "standard", trials=2)
    assert ref == pytest.approx(10 / 0.25, rel=1e-10)


def test_zero_steps_returns_initial_model(rng):
    m = all_models(1)["se"]
    X, y = gp_data(rng, m, 10)
    traj = optimize(m, X, y, OuterConfig(steps=0))
    np.testing.assert_allclose(traj.model.theta, m.theta, rtol=1e-14)
    assert traj.records == []


def test_exact_estimator_ascends(rng):
    truth = se_model(1, 0.5, 1.0, noise=0.2)
    X, y = gp_data(rng, truth, 60)
    start = se_model(1, 1.5, 0.5, noise=0.6)
    traj = optimize(start, X, y, OuterConfig(steps=40, estimator="exact", track_mll=True))
    values = [r.mll for r in traj.records]
    assert values[-1] > values[0] + 1.0
    assert mll(traj.model, X, y) > values[0]


@pytest.mark.parametrize("estimator", ["standard", "pathwise"])
def test_warm_start_keeps_probes_fixed(estimator, rng):
    m = se_model(1, 0.8)
    X, y = gp_data(rng, m, 40)
    cfg = OuterConfig(steps=5, estimator=estimator, num_probes=4, warm_start=True, num_features=200)
    prints = {r.probe_fingerprint for r in optimize(m, X, y, cfg).records}
    assert len(prints) == 1
    cold = optimize(m, X, y, OuterConfig(steps=5, estimator=estimator, num_probes=4, num_features=200))
    assert len({r.probe_fingerprint for r in cold.records}) == 5


def test_warm_start_saves_iterations(rng):
    truth = se_model(1, 0.4, noise=0.2)
    X, y = gp_data(rng, truth, 100)
    start = se_model(1, 1.0, noise=0.5)
    base = dict(steps=15, estimator="pathwise", num_probes=8, solver_cfg=SolverConfig(tol=1e-3, criterion="split"),
                num_features=500, lr=0.05)
    warm = optimize(start, X, y, OuterConfig(warm_start=True, **base))
    cold = optimize(start, X, y, OuterConfig(warm_start=False, **base))
    assert warm.total_iterations < cold.total_iterations


def test_same_seed_same_trajectory(rng):
    m = se_model(1, 0.8)
    X, y = gp_data(rng, m, 30)
    cfg = OuterConfig(steps=4, estimator="pathwise", num_probes=4, num_features=100, warm_start=True)
    a = [r.to_dict() for r in optimize(m, X, y, cfg).records]
    b = [r.to_dict() for r in optimize(m, X, y, cfg).records]
    for ra, rb in zip(a, b):
        ra.pop("wall_time"), rb.pop("wall_time")
        assert ra == rb
    json.dumps(a)


def test_repeated_divergence_aborts(rng):
    m = se_model(1, 0.8)
    X, y = gp_data(rng, m, 30)
    seen = []
    cfg = OuterConfig(steps=10, estimator="standard", num_probes=2, solver="sdd",
                      solver_cfg=SolverConfig(step=1e4, max_iters=500, batch_size=4))
    with pytest.raises(NumericalError):
        optimize(m, X, y, cfg, callback=seen.append)
    assert seen == []


def test_outer_config_validation():
    with pytest.raises(InputError):
        OuterConfig(steps=-1)
    with pytest.raises(InputError):
        OuterConfig(lr=0.0)
    with pytest.raises(InputError):
        OuterConfig(estimator="hutch++")
    assert OuterConfig().to_dict()["solver_cfg"]["criterion"] == "split"
