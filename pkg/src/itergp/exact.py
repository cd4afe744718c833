"""Dense Cholesky-based reference computations.

These routines are the ground truth the iterative paths are tested against,
and the backend behind ``--solver exact`` for small problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalError
from .kernels import ModelSpec, grad_H_all

__all__ = [
    "DensePosterior",
    "SpectralBasis",
    "posterior",
    "mll",
    "mll_grad",
    "sample_affine",
    "cholesky_with_jitter",
    "conditional_cholesky_update",
    "spectral_basis",
    "spectral_projection_error",
    "MAX_DENSE_N",
]

MAX_DENSE_N = 20_000
JITTER_START = 1e-10
JITTER_ATTEMPTS = 3


@dataclass(frozen=True)
class DensePosterior:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenpairs of K_XX sorted by decreasing eigenvalue."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _check_data(model: ModelSpec, X, y=None, max_n: int = MAX_DENSE_N):
    X = model.kernel.check_inputs(X)
    if X.shape[0] > max_n:
        raise InputError(f"dense path limited to n <= {max_n}, got n = {X.shape[0]}")
    if y is None:
        return X, None
    y = np.asarray(y, dtype=float)
    if y.shape[0] != X.shape[0]:
        raise InputError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    return X, y


def _cholesky(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            f"Cholesky factorization of {what} failed (min diag {np.min(np.diag(A)):.3e})"
        ) from exc


def posterior(model: ModelSpec, X, y, Xs, max_n: int = MAX_DENSE_N) -> DensePosterior:
    """Exact posterior mean and covariance at test inputs Xs."""
    X, y = _check_data(model, X, y, max_n)
    Xs = model.kernel.check_inputs(Xs, "Xs")
    Kss = model.K(Xs)
    if X.shape[0] == 0:
        return DensePosterior(np.full(Xs.shape[0], model.mean), Kss)
    L = _cholesky(model.H(X), "K + noise I")
    Ksx = model.K(Xs, X)
    alpha = linalg.cho_solve((L, True), y - model.mean)
    A = linalg.solve_triangular(L, Ksx.T, lower=True)
    cov = Kss - A.T @ A
    return DensePosterior(model.mean + Ksx @ alpha, 0.5 * (cov + cov.T))


def mll(model: ModelSpec, X, y, max_n: int = MAX_DENSE_N) -> float:
    """Log marginal likelihood log N(y; mean, K + noise I)."""
    X, y = _check_data(model, X, y, max_n)
    n = X.shape[0]
    L = _cholesky(model.H(X), "K + noise I")
    r = y - model.mean
    a = linalg.solve_triangular(L, r, lower=True)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2.0 * np.pi))


def mll_grad(model: ModelSpec, X, y, max_n: int = MAX_DENSE_N) -> np.ndarray:
    """Gradient of :func:`mll` with respect to the constrained hyperparameters."""
    X, y = _check_data(model, X, y, max_n)
    H = model.H(X)
    L = _cholesky(H, "K + noise I")
    v = linalg.cho_solve((L, True), y - model.mean)
    Hinv = linalg.cho_solve((L, True), np.eye(X.shape[0]))
    return np.array(
        [0.5 * v @ dH @ v - 0.5 * np.sum(Hinv * dH) for dH in grad_H_all(model, X)]
    )


def cholesky_with_jitter(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of A, adding relative diagonal jitter only if needed.

    Returns the factor and the absolute jitter that was added (0 if none).
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros_like(A), 0.0
    try:
        return linalg.cholesky(A, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    scale = max(float(np.mean(np.abs(np.diag(A)))), np.finfo(float).tiny)
    jitter = JITTER_START * scale
    for _ in range(JITTER_ATTEMPTS):
        try:
            return linalg.cholesky(A + jitter * np.eye(A.shape[0]), lower=True), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"matrix not positive definite even with jitter {jitter / 10.0:.3e} "
        f"(min eigenvalue {np.linalg.eigvalsh(A)[0]:.3e})"
    )


def sample_affine(post: DensePosterior, w) -> np.ndarray:
    """mean + L w with L L^T = cov. Also see :func:`cholesky_with_jitter`."""
    w = np.asarray(w, dtype=float)
    L, _ = cholesky_with_jitter(post.cov)
    return (post.mean if w.ndim == 1 else post.mean[:, None]) + L @ w


def conditional_cholesky_update(L11, K_xs, K_ss) -> tuple[np.ndarray, np.ndarray]:
    """Extend a Cholesky factor of K_XX to the joint Gram of (X, X*).

    Returns L21 = (L11^{-1} K_XX*)^T and L22 = chol(K_X*X* - L21 L21^T), with
    jitter on the Schur complement when it is numerically singular.
    """
    L11 = np.asarray(L11, dtype=float)
    K_xs = np.asarray(K_xs, dtype=float)
    K_ss = np.asarray(K_ss, dtype=float)
    if K_xs.shape != (L11.shape[0], K_ss.shape[0]):
        raise InputError("inconsistent block shapes for the Cholesky update")
    L21 = linalg.solve_triangular(L11, K_xs, lower=True).T
    schur = K_ss - L21 @ L21.T
    schur = 0.5 * (schur + schur.T)
    try:
        L22, _ = cholesky_with_jitter(schur)
    except NumericalError:
        # Duplicated inputs leave a Schur complement that is zero up to rounding.
        scale = max(float(np.abs(np.diag(K_ss)).mean()), 1.0)
        if np.linalg.eigvalsh(schur)[0] < -1e-8 * scale:
            raise
        L22, _ = cholesky_with_jitter(schur + 1e-8 * scale * np.eye(schur.shape[0]))
    return L21, L22


def spectral_basis(model: ModelSpec, X) -> SpectralBasis:
    """Eigendecomposition of K_XX (without the noise term)."""
    lam, U = linalg.eigh(model.K(X))
    order = np.argsort(lam)[::-1]
    return SpectralBasis(lam[order], U[:, order])


def spectral_projection_error(basis: SpectralBasis, v_hat, v_star, indices=None):
    """Per-direction errors |u_i^T (v* - v_hat)| and the seminorm over ``indices``.

    The seminorm is sqrt(sum_i lambda_i (u_i^T delta)^2); with all indices it is
    the K-norm of the error.
    """
    delta = np.asarray(v_star, dtype=float) - np.asarray(v_hat, dtype=float)
    proj = basis.eigenvectors.T @ delta
    idx = np.arange(len(proj)) if indices is None else np.asarray(indices)
    per_direction = np.abs(proj[idx])
    lam = np.clip(basis.eigenvalues[idx], 0.0, None)
    return per_direction, float(np.sqrt(np.sum(lam * proj[idx] ** 2)))
