"""Primal stochastic gradient descent for representer weights.

The objective is the kernel ridge regression loss with a mini-batch data term
and a random-feature estimate of the RKHS regularizer,

    n / (2p) sum_{i in batch} (t_i - K_{x_i Z} v)^2 + noise_var / 2 ||Phi_Z^T (v - c)||^2,

where Phi_Z holds ``num_features`` freshly drawn random features per step.
A full batch on the training inputs uses the exact regularizer instead.
Targets t = y and centre c = 0 give the posterior mean weights. For posterior
samples the noise draw is moved into the regularizer (t = f_X, c = w / sigma),
which leaves the minimizer unchanged but removes it from the data term.
"""

from __future__ import annotations

import time

import numpy as np

from ..errors import InputError
from ..kernels import ModelSpec
from .base import (
    Callback,
    SolverConfig,
    SolverReport,
    column_norms,
    criterion_met,
    criterion_value,
    relative_residuals,
)
from .operators import KernelOperator
from .sdd import estimate_max_eigenvalue

__all__ = [
    "solve_sgd_primal_mean",
    "solve_sgd_primal_sample",
    "primal_gradient",
    "DEFAULT_SGD_STEPS",
]

DEFAULT_SGD_STEPS = 100_000
DEFAULT_SGD_BATCH = 512


def primal_gradient(K, targets, center, noise_var, alpha, idx=None, Phi=None) -> np.ndarray:
    """Gradient of the (optionally stochastic) primal objective, unnormalized.

    With ``idx=None`` the data term uses every row; with ``Phi=None`` the
    regularizer uses the exact K. ``center`` may be 0.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    alpha = np.asarray(alpha, dtype=float)
    shifted = alpha - center
    if idx is None:
        data = -K @ (targets - K @ alpha)
    else:
        idx = np.asarray(idx)
        Kb = K[idx]
        data = -(n / len(idx)) * Kb.T @ (targets[idx] - Kb @ alpha)
    reg = K @ shifted if Phi is None else Phi @ (Phi.T @ shifted)
    return data + noise_var * reg


def _clip_columns(G: np.ndarray, max_norm: float) -> np.ndarray:
    norms = np.linalg.norm(G, axis=0)
    factor = np.where(norms > max_norm, max_norm / np.where(norms > 0, norms, 1.0), 1.0)
    return G * factor


def _primal_sgd(
    model: ModelSpec,
    X,
    targets,
    center,
    cfg: SolverConfig,
    Z=None,
    V0=None,
    callback: Callback | None = None,
    op: KernelOperator | None = None,
):
    start = time.perf_counter()
    X = model.kernel.check_inputs(X)
    T = np.asarray(targets, dtype=float)
    squeeze = T.ndim == 1
    T = T[:, None] if squeeze else T
    n = X.shape[0]
    if T.shape[0] != n:
        raise InputError(f"targets have {T.shape[0]} rows, inputs have {n}")
    C = np.zeros_like(T) if center is None else np.asarray(center, dtype=float).reshape(T.shape)
    noise_var = model.noise_var
    rng = np.random.default_rng(cfg.seed)

    same_basis = Z is None
    if same_basis:
        op = op if op is not None else KernelOperator(model, X)
        Zm = X
    else:
        Zm = model.kernel.check_inputs(Z, "Z")
    m = Zm.shape[0]
    batch = min(cfg.batch_size or DEFAULT_SGD_BATCH, n)

    # Residuals are measured on the system the minimizer solves: H v = t + noise_var c
    # when Z = X, and the normal equations of the inducing objective otherwise.
    if same_basis:
        rhs = T + noise_var * C

        def residual(V):
            return rhs - op.matvec(V, count=False)

        lam = max(estimate_max_eigenvalue(op) - noise_var, 1e-12)
        curvature = lam * (lam + noise_var) / n
    else:
        Kzx = model.K(Zm, X)
        Kzz = model.K(Zm)
        rhs = Kzx @ T + noise_var * Kzz @ C

        def residual(V):
            return rhs - (Kzx @ (Kzx.T @ V) + noise_var * Kzz @ V)

        curvature = float(np.linalg.eigvalsh(Kzx @ Kzx.T + noise_var * Kzz)[-1]) / n
    b_norms = column_norms(rhs)

    # The largest curvature of the objective divided by n bounds stable steps.
    step = cfg.step if cfg.step is not None else min(0.5, 1.0 / max(curvature, 1e-12))

    limits = []
    if cfg.max_iters is not None:
        limits.append(cfg.max_iters)
    if cfg.max_epochs is not None:
        limits.append(int(np.floor(cfg.max_epochs * n * n / (batch * m) + 1e-9)))
    budget = min(limits) if limits else DEFAULT_SGD_STEPS
    avg_start = int(np.floor((1.0 - cfg.polyak_fraction) * budget))
    check_interval = max(1, int(np.ceil(cfg.check_every * n * n / (batch * m))))

    V = np.zeros((m, T.shape[1])) if V0 is None else np.array(V0, dtype=float).reshape(m, T.shape[1])
    momentum = np.zeros_like(V)
    avg_sum = np.zeros_like(V)
    avg_count = 0
    entries = 0
    monitor = 0.0

    rel = relative_residuals(residual(V), b_norms)
    initial = criterion_value(rel, cfg.criterion)
    history = [initial]
    termination = "tolerance" if criterion_met(rel, cfg.tol, cfg.criterion) else "budget"

    kernel, params = model.kernel, model.kernel_params
    full = np.arange(n)
    exact_reg = same_basis and batch == n
    it = 0
    while termination == "budget" and it < budget:
        idx = full if batch == n else rng.integers(0, n, size=batch)
        if same_basis:
            Kb = op.kernel_rows(idx)
        else:
            Kb = model.K(X[idx], Zm)
        entries += batch * m
        if exact_reg:
            # Every kernel row is at hand, so the regularizer costs one more product.
            reg = Kb @ (V - C)
        else:
            omega = kernel.frequencies(params, kernel.spectral_base(cfg.num_features, rng), Zm.shape[1])
            proj = Zm @ omega.T
            Phi = np.sqrt(kernel.variance(params) / cfg.num_features) * np.concatenate(
                [np.sin(proj), np.cos(proj)], axis=1
            )
            reg = Phi @ (Phi.T @ (V - C))
        # Gradient of the objective divided by n; the step then is beta * n.
        G = -(Kb.T @ (T[idx] - Kb @ V)) / batch + (noise_var / n) * reg
        G = _clip_columns(G, cfg.clip)
        momentum = cfg.momentum * momentum + G
        V = V - step * (cfg.momentum * momentum + G)
        it += 1
        if it > avg_start:
            avg_sum += V
            avg_count += 1
        candidate = avg_sum / avg_count if avg_count else V
        if callback is not None:
            callback(it, {"iterate": V, "average": candidate})
        if not np.all(np.isfinite(V)):
            termination = "divergence"
            break
        if it % check_interval == 0:
            monitor += 1.0
            rel = relative_residuals(residual(candidate), b_norms)
            value = criterion_value(rel, cfg.criterion)
            history.append(value)
            if value > cfg.divergence_factor * max(initial, 1e-300):
                termination = "divergence"
            elif criterion_met(rel, cfg.tol, cfg.criterion):
                termination = "tolerance"

    result = avg_sum / avg_count if avg_count else V
    if np.all(np.isfinite(result)):
        rel = relative_residuals(residual(result), b_norms)
    else:
        rel = np.full(T.shape[1], np.inf)
        termination = "divergence"
    report = SolverReport(
        iterations=it,
        epochs=entries / float(n) ** 2,
        residuals=rel,
        termination=termination,
        wall_time=time.perf_counter() - start,
        monitor_epochs=monitor,
        history=history,
    )
    return (result[:, 0] if squeeze else result), report


def solve_sgd_primal_mean(
    model: ModelSpec,
    X,
    y,
    cfg: SolverConfig | None = None,
    Z=None,
    V0=None,
    callback: Callback | None = None,
    op: KernelOperator | None = None,
):
    """Representer weights of the posterior mean by primal SGD."""
    return _primal_sgd(model, X, y, None, cfg or SolverConfig(), Z, V0, callback, op)


def solve_sgd_primal_sample(
    model: ModelSpec,
    X,
    f_X,
    w,
    cfg: SolverConfig | None = None,
    Z=None,
    V0=None,
    callback: Callback | None = None,
    op: KernelOperator | None = None,
):
    """Weights alpha with (K + noise_var I) alpha = f_X + sigma w, by primal SGD.

    ``w`` is the standard-normal draw behind the observation noise; it enters
    only through the regularizer centre w / sigma.
    """
    center = np.asarray(w, dtype=float) / model.noise_scale
    return _primal_sgd(model, X, f_X, center, cfg or SolverConfig(), Z, V0, callback, op)
