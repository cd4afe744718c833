"""Random Fourier features for stationary kernels and the prior samples built on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import InputError, UnsupportedKernelError
from .kernels import Kernel, ModelSpec

__all__ = [
    "FourierFeatureSet",
    "PriorSample",
    "sample_features",
    "feature_matrix",
    "prior_sample_eval",
    "draw_prior_samples",
    "DEFAULT_NUM_FEATURES",
]

DEFAULT_NUM_FEATURES = 2000
VARIANTS = ("sin-cos", "cos-phase")


@dataclass(frozen=True)
class FourierFeatureSet:
    """Frequencies drawn from a kernel's spectral measure plus the feature variant.

    ``base`` holds the parameter-free randomness so that the same draw can be
    re-expressed at new hyperparameters via :meth:`with_params`.
    """

    kernel: Kernel
    params: np.ndarray
    base: Any
    phases: np.ndarray | None
    variant: str
    seed: int | None
    input_dim: int
    omega: np.ndarray
    scale: float

    @property
    def m(self) -> int:
        return self.omega.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.m if self.variant == "sin-cos" else self.m

    def with_params(self, params) -> "FourierFeatureSet":
        params = self.kernel.check_params(params)
        return FourierFeatureSet(
            kernel=self.kernel,
            params=params,
            base=self.base,
            phases=self.phases,
            variant=self.variant,
            seed=self.seed,
            input_dim=self.input_dim,
            omega=self.kernel.frequencies(params, self.base, self.input_dim),
            scale=float(np.sqrt(self.kernel.variance(params))),
        )

    def __call__(self, X) -> np.ndarray:
        return feature_matrix(self, X)


def sample_features(
    kernel: Kernel,
    params,
    m: int = DEFAULT_NUM_FEATURES,
    seed: int | np.random.Generator | None = None,
    variant: str = "sin-cos",
    input_dim: int | None = None,
) -> FourierFeatureSet:
    """Draw m frequencies from the spectral density of a stationary kernel."""
    if not kernel.stationary:
        raise UnsupportedKernelError(f"random features need a stationary kernel, got {kernel!r}")
    if variant not in VARIANTS:
        raise InputError(f"unknown feature variant {variant!r}; choose from {VARIANTS}")
    if m < 1:
        raise InputError("number of features must be positive")
    params = kernel.check_params(params)
    input_dim = kernel.input_dim if input_dim is None else int(input_dim)
    rng = np.random.default_rng(seed)
    base = kernel.spectral_base(m, rng)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=m) if variant == "cos-phase" else None
    return FourierFeatureSet(
        kernel=kernel,
        params=params,
        base=base,
        phases=phases,
        variant=variant,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
        input_dim=input_dim,
        omega=kernel.frequencies(params, base, input_dim),
        scale=float(np.sqrt(kernel.variance(params))),
    )


def feature_matrix(fs: FourierFeatureSet, X) -> np.ndarray:
    """Rows phi(x_i) such that Phi_X Phi_X'^T approximates K_XX'."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != fs.input_dim:
        raise InputError(f"expected inputs with {fs.input_dim} columns, got shape {X.shape}")
    proj = X @ fs.omega.T
    if fs.variant == "sin-cos":
        return (fs.scale / np.sqrt(fs.m)) * np.concatenate([np.sin(proj), np.cos(proj)], axis=1)
    return (fs.scale * np.sqrt(2.0 / fs.m)) * np.cos(proj + fs.phases)


def feature_input_grad(fs: FourierFeatureSet, X) -> np.ndarray:
    """d phi_j(x_i) / d x_i with shape (n, D, d)."""
    X = np.asarray(X, dtype=float)
    proj = X @ fs.omega.T
    if fs.variant == "sin-cos":
        c = fs.scale / np.sqrt(fs.m)
        dcoef = np.concatenate([c * np.cos(proj), -c * np.sin(proj)], axis=1)
        freqs = np.concatenate([fs.omega, fs.omega], axis=0)
    else:
        dcoef = -(fs.scale * np.sqrt(2.0 / fs.m)) * np.sin(proj + fs.phases)
        freqs = fs.omega
    return dcoef[:, :, None] * freqs[None, :, :]


@dataclass(frozen=True)
class PriorSample:
    """Function draws f(x) = mean + phi(x)^T w; ``weights`` may hold several columns."""

    features: FourierFeatureSet
    weights: np.ndarray
    mean: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape[0] != self.features.dim:
            raise InputError(f"weights have {w.shape[0]} rows, features have {self.features.dim}")
        object.__setattr__(self, "weights", w)

    def __call__(self, X) -> np.ndarray:
        return prior_sample_eval(self, X)

    def with_params(self, params) -> "PriorSample":
        return PriorSample(self.features.with_params(params), self.weights, self.mean)


def prior_sample_eval(ps: PriorSample, X) -> np.ndarray:
    return ps.mean + feature_matrix(ps.features, X) @ ps.weights


def draw_prior_samples(
    model: ModelSpec,
    num_samples: int,
    m: int = DEFAULT_NUM_FEATURES,
    seed: int | np.random.Generator | None = None,
    variant: str = "sin-cos",
    input_dim: int | None = None,
) -> PriorSample:
    """Feature set plus a (D, num_samples) standard-normal weight matrix."""
    rng = np.random.default_rng(seed)
    fs = sample_features(model.kernel, model.kernel_params, m, rng, variant, input_dim)
    w = rng.standard_normal((fs.dim, num_samples))
    return PriorSample(fs, w, model.mean)
