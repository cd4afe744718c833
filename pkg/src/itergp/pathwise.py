"""Posterior function samples by pathwise conditioning.

A posterior sample is a prior sample plus a data-dependent correction,

    f_post(.) = f(.) + K(., X) H^{-1} (y - (f(X) + eps)),   eps = sigma * w,

so drawing s samples costs one batched linear solve and evaluating them
anywhere afterwards needs no further solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalError
from .exact import cholesky_with_jitter
from .features import DEFAULT_NUM_FEATURES, PriorSample, draw_prior_samples
from .kernels import ModelSpec
from .solvers import (
    KernelOperator,
    MatrixOperator,
    SolverConfig,
    SolverReport,
    solve_cg,
    solve_sgd_primal_mean,
    solve_sgd_primal_sample,
    solve_system,
)

__all__ = [
    "TabulatedPrior",
    "PosteriorSampleRep",
    "InducingSampleRep",
    "draw_posterior_samples",
    "predictive_moments",
    "gaussian_nll",
    "inducing_weights",
    "draw_inducing_samples",
    "DEFAULT_NUM_SAMPLES",
]

DEFAULT_NUM_SAMPLES = 64


class TabulatedPrior:
    """Prior draws known only at a fixed set of points (exact joint sampling).

    Evaluation looks points up by exact coordinates and fails for points that
    were not part of the joint draw.
    """

    def __init__(self, points: np.ndarray, values: np.ndarray):
        self.points = np.asarray(points, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self._index = {}
        for i, row in enumerate(self.points):
            self._index.setdefault(row.tobytes(), i)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        try:
            idx = [self._index[row.tobytes()] for row in np.ascontiguousarray(X)]
        except KeyError as exc:
            raise InputError("exact prior samples are only available at the points drawn jointly") from exc
        return self.values[idx]

    def column(self, j: int) -> "TabulatedPrior":
        return TabulatedPrior(self.points, self.values[:, [j]])




def _prior_column(prior, j: int):
    if isinstance(prior, PriorSample):
        return PriorSample(prior.features, prior.weights[:, [j]], prior.mean)
    return prior.column(j)


@dataclass(frozen=True)
class PosteriorSampleRep:
    """s posterior function samples sharing one training set.

    ``weights`` (n, s) solve H weights = y - (f_X + eps) up to the tolerance
    recorded in ``report``. Calling the object returns an (n*, s) array.
    """

    model: ModelSpec
    X: np.ndarray
    prior: PriorSample | TabulatedPrior
    weights: np.ndarray
    report: SolverReport | None = None

    @property
    def num_samples(self) -> int:
        return self.weights.shape[1]

    def __len__(self) -> int:
        return self.num_samples

    def update(self, Xs) -> np.ndarray:
        return self.model.K(Xs, self.X) @ self.weights

    def __call__(self, Xs) -> np.ndarray:
        Xs = self.model.kernel.check_inputs(Xs, "Xs")
        return self.prior(Xs) + self.update(Xs)

    def __getitem__(self, j: int) -> "PosteriorSampleRep":
        return PosteriorSampleRep(
            self.model, self.X, _prior_column(self.prior, j), self.weights[:, [j]], self.report
        )

    def split(self) -> list["PosteriorSampleRep"]:
        return [self[j] for j in range(self.num_samples)]


def _prior_draws(model, X, num_samples, rng, prior, num_features, X_extra):
    n = X.shape[0]
    if prior == "rff":
        ps = draw_prior_samples(model, num_samples, num_features, rng, input_dim=X.shape[1])
        return ps, ps(X)
    if prior == "exact":
        points = X if X_extra is None else np.vstack([X, model.kernel.check_inputs(X_extra, "X_test")])
        L, _ = cholesky_with_jitter(model.K(points))
        values = model.mean + L @ rng.standard_normal((points.shape[0], num_samples))
        return TabulatedPrior(points, values), values[:n]
    raise InputError(f"unknown prior {prior!r}; choose 'rff' or 'exact'")


def draw_posterior_samples(
    model: ModelSpec,
    X,
    y,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    solver: str = "cg",
    cfg: SolverConfig | None = None,
    seed: int | np.random.Generator | None = 0,
    prior: str = "rff",
    num_features: int = DEFAULT_NUM_FEATURES,
    X_test=None,
    op=None,
) -> PosteriorSampleRep:
    """Draw posterior samples with one batched solve.

    ``prior="rff"`` uses random Fourier features so the samples can be
    evaluated anywhere. ``prior="exact"`` draws the prior jointly by Cholesky on
    X and ``X_test``, after which the samples can be evaluated on those points
    only. With ``solver="sgd"`` the mean and the sample weights are obtained
    from separate primal objectives, the latter in variance-reduced form.
    """
    X = model.kernel.check_inputs(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise InputError(f"y must have shape ({X.shape[0]},), got {y.shape}")
    if num_samples < 1:
        raise InputError("need at least one sample")
    rng = np.random.default_rng(seed)
    prior_fn, f_X = _prior_draws(model, X, num_samples, rng, prior, num_features, X_test)
    w = rng.standard_normal((X.shape[0], num_samples))
    cfg = cfg or SolverConfig()
    op = op if op is not None else KernelOperator(model, X)

    if solver == "sgd":
        v_mean, report = solve_sgd_primal_mean(model, X, y - model.mean, cfg, op=op)
        alpha, _ = solve_sgd_primal_sample(model, X, f_X - model.mean, w, cfg.replace(seed=cfg.seed + 1), op=op)
        weights = v_mean[:, None] - alpha
    else:
        rhs = y[:, None] - (f_X + model.noise_scale * w)
        weights, report = solve_system(solver, op, rhs, cfg)
    if report.termination == "divergence":
        raise NumericalError(f"solver diverged while drawing samples: {report.to_dict()}")
    return PosteriorSampleRep(model, X, prior_fn, weights, report)


def predictive_moments(values, noise_var: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and predictive variance (unbiased latent variance + noise).

    ``values`` has shape (n*, s) with s >= 2.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] < 2:
        raise InputError("predictive moments need at least two samples per point")
    return values.mean(axis=1), values.var(axis=1, ddof=1) + noise_var


def gaussian_nll(y, mean, var) -> float:
    """Average negative log density of y under independent N(mean, var)."""
    y, mean, var = (np.asarray(a, dtype=float) for a in (y, mean, var))
    return float(np.mean(0.5 * np.log(2.0 * np.pi * var) + 0.5 * (y - mean) ** 2 / var))


# ---------------------------------------------------------------------------
# Inducing points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InducingSampleRep:
    """Samples f(.) + K(., Z)(v* - alpha*) with m inducing inputs Z."""

    model: ModelSpec
    Z: np.ndarray
    prior: PriorSample
    mean_weights: np.ndarray
    sample_weights: np.ndarray

    def mean(self, Xs) -> np.ndarray:
        return self.model.mean + self.model.K(Xs, self.Z) @ self.mean_weights

    def __call__(self, Xs) -> np.ndarray:
        Xs = self.model.kernel.check_inputs(Xs, "Xs")
        return self.prior(Xs) + self.model.K(Xs, self.Z) @ (
            self.mean_weights[:, None] - self.sample_weights
        )


def inducing_weights(
    model: ModelSpec,
    X,
    y,
    Z,
    sample_targets=None,
    solver: str = "cg",
    cfg: SolverConfig | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Solve (noise_var K_ZZ + K_ZX K_XZ) v = K_ZX t for t = y and t = f_X + eps.

    ``sample_targets`` is an (n, s) array of f_X + eps columns (or None).
    Returns (v*, alpha*) with alpha* of shape (m, s) or None.
    """
    X = model.kernel.check_inputs(X)
    Z = model.kernel.check_inputs(Z, "Z")
    y = np.asarray(y, dtype=float) - model.mean
    targets = y[:, None]
    if sample_targets is not None:
        targets = np.hstack([targets, np.asarray(sample_targets, dtype=float).reshape(X.shape[0], -1) - model.mean])
    cfg = cfg or SolverConfig()

    if solver == "sgd":
        V, report = solve_sgd_primal_mean(model, X, targets, cfg, Z=Z)
    else:
        Kzx = model.K(Z, X)
        A = model.noise_var * model.K(Z) + Kzx @ Kzx.T
        rhs = Kzx @ targets
        if solver == "exact":
            # K_ZX K_XZ squares the conditioning of K, so near-duplicate inducing
            # points routinely need a little jitter.
            L, _ = cholesky_with_jitter(0.5 * (A + A.T))
            V = linalg.cho_solve((L, True), rhs)
            report = None
        elif solver == "cg":
            V, report = solve_cg(MatrixOperator(A, 0.0), rhs, cfg)
        else:
            raise InputError(f"inducing weights support solvers 'cg', 'exact' and 'sgd', got {solver!r}")
    if report is not None and report.termination == "divergence":
        raise NumericalError(f"solver diverged on the inducing system: {report.to_dict()}")
    alpha = V[:, 1:] if sample_targets is not None else None
    return V[:, 0], alpha


def draw_inducing_samples(
    model: ModelSpec,
    X,
    y,
    Z,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    solver: str = "cg",
    cfg: SolverConfig | None = None,
    seed: int | np.random.Generator | None = 0,
    num_features: int = DEFAULT_NUM_FEATURES,
) -> InducingSampleRep:
    """Inducing-point posterior samples; the prior at X stands in for its
    projection onto the inducing points."""
    X = model.kernel.check_inputs(X)
    rng = np.random.default_rng(seed)
    ps = draw_prior_samples(model, num_samples, num_features, rng, input_dim=X.shape[1])
    targets = ps(X) + model.noise_scale * rng.standard_normal((X.shape[0], num_samples))
    v, alpha = inducing_weights(model, X, y, Z, targets, solver, cfg)
    return InducingSampleRep(model, model.kernel.check_inputs(Z, "Z"), ps, v, alpha)
