"""Kernel expressions, hyperparameters and analytic derivatives of K + noise * I.

Kernels are immutable structure objects. Hyperparameter values live outside the
kernel in a flat, strictly positive vector so that the same expression can be
evaluated at many parameter settings (the outer optimizer relies on this).

Every base kernel acts on a subset of input columns (``dims``). Stationary base
kernels are combined through :class:`Product` and given a signal variance
through :class:`Scaled`.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import special

from .errors import InputError, UnsupportedKernelError

__all__ = [
    "Kernel",
    "SquaredExponential",
    "Matern",
    "Periodic",
    "Product",
    "Scaled",
    "ModelSpec",
    "softplus",
    "softplus_inverse",
    "kernel_eval",
    "gram",
    "gram_row_blocks",
    "grad_H",
    "kernel_from_dict",
    "model_from_dict",
    "model_to_dict",
]

DEFAULT_BLOCK_SIZE = 1024


# ---------------------------------------------------------------------------
# Positivity transform
# ---------------------------------------------------------------------------


def softplus(x):
    """log(1 + exp(x)) evaluated without overflow."""
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """Inverse of :func:`softplus` for y > 0."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise InputError("softplus inverse requires strictly positive values")
    # log(exp(y) - 1) = y + log(1 - exp(-y))
    return y + np.log(-np.expm1(-y))


def softplus_grad(x):
    """Derivative of softplus, i.e. the logistic sigmoid."""
    return special.expit(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Kernel expression tree
# ---------------------------------------------------------------------------


def _as_2d(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"{name} must be a 2-D array of inputs, got shape {X.shape}")
    return X


class Kernel(ABC):
    """A covariance function with an ordered list of positive hyperparameters."""

    stationary: bool = False

    @property
    @abstractmethod
    def n_params(self) -> int: ...

    @abstractmethod
    def param_names(self) -> list[str]: ...

    @property
    @abstractmethod
    def input_dim(self) -> int:
        """Smallest number of input columns the kernel can act on."""

    @abstractmethod
    def _gram(self, params: np.ndarray, X: np.ndarray, X2: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _gram_grads(
        self, params: np.ndarray, X: np.ndarray, X2: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray]]: ...

    def _input_grad(self, params: np.ndarray, Xs: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise UnsupportedKernelError(f"{type(self).__name__} has no input gradient")

    # Spectral sampling hooks used by random Fourier features. ``spectral_base``
    # draws parameter-free randomness; ``frequencies`` maps it to frequencies
    # for a given parameter vector, so feature sets survive parameter updates.
    def spectral_base(self, m: int, rng: np.random.Generator):
        raise UnsupportedKernelError(
            f"{type(self).__name__} is not stationary; random features are unavailable"
        )

    def frequencies(self, params: np.ndarray, base, input_dim: int) -> np.ndarray:
        raise UnsupportedKernelError(
            f"{type(self).__name__} is not stationary; random features are unavailable"
        )

    def variance(self, params: np.ndarray) -> float:
        """k(x, x) for stationary kernels."""
        raise UnsupportedKernelError(f"{type(self).__name__} is not stationary")

    @abstractmethod
    def to_dict(self, params: np.ndarray) -> dict: ...

    # Public wrappers -------------------------------------------------------

    def check_params(self, params) -> np.ndarray:
        params = np.asarray(params, dtype=float).reshape(-1)
        if params.shape[0] != self.n_params:
            raise InputError(
                f"{type(self).__name__} expects {self.n_params} parameters, got {params.shape[0]}"
            )
        if np.any(~np.isfinite(params)) or np.any(params <= 0):
            raise InputError("kernel parameters must be finite and strictly positive")
        return params

    def check_inputs(self, X, name="X") -> np.ndarray:
        X = _as_2d(X, name)
        if X.shape[1] < self.input_dim:
            raise InputError(
                f"{name} has {X.shape[1]} columns but the kernel reads {self.input_dim}"
            )
        return X

    def gram(self, params, X, X2=None) -> np.ndarray:
        params = self.check_params(params)
        X = self.check_inputs(X)
        X2 = X if X2 is None else self.check_inputs(X2, "X2")
        if X.shape[1] != X2.shape[1]:
            raise InputError("X and X2 have different numbers of columns")
        return self._gram(params, X, X2)

    def gram_and_grads(self, params, X, X2=None) -> tuple[np.ndarray, list[np.ndarray]]:
        params = self.check_params(params)
        X = self.check_inputs(X)
        X2 = X if X2 is None else self.check_inputs(X2, "X2")
        if X.shape[1] != X2.shape[1]:
            raise InputError("X and X2 have different numbers of columns")
        return self._gram_grads(params, X, X2)

    def input_grad(self, params, Xs, X) -> np.ndarray:
        """Derivatives d k(xs_i, x_j) / d xs_i as an array of shape (n*, n, d)."""
        params = self.check_params(params)
        Xs = self.check_inputs(Xs, "Xs")
        X = self.check_inputs(X)
        return self._input_grad(params, Xs, X)

    def __mul__(self, other: "Kernel") -> "Product":
        return Product([self, other])


def _normalize_dims(dims) -> tuple[int, ...]:
    if isinstance(dims, (int, np.integer)):
        if dims < 1:
            raise InputError("a kernel needs at least one input dimension")
        return tuple(range(int(dims)))
    dims = tuple(int(d) for d in dims)
    if not dims or len(set(dims)) != len(dims) or min(dims) < 0:
        raise InputError(f"invalid active dimensions {dims}")
    return dims


class _BaseKernel(Kernel):
    """Stationary kernel acting on the columns listed in ``dims``."""

    stationary = True

    def __init__(self, dims: int | Sequence[int] = 1):
        self.dims = _normalize_dims(dims)

    @property
    def input_dim(self) -> int:
        return max(self.dims) + 1

    def _diffs(self, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
        idx = list(self.dims)
        return X[:, None, idx] - X2[None, :, idx]

    def variance(self, params) -> float:
        return 1.0

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dims={list(self.dims)})"


class _RadialKernel(_BaseKernel):
    """Kernels of the lengthscale-scaled Euclidean distance r with ARD lengthscales.

    Subclasses provide the profile k(r) and g(r) = k'(r) / r, which is finite at
    zero for every profile except the exponential one (where the terms it
    multiplies vanish anyway).
    """

    @property
    def n_params(self) -> int:
        return len(self.dims)

    def param_names(self) -> list[str]:
        return [f"lengthscale[{d}]" for d in self.dims]

    @abstractmethod
    def _profile(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    def _scaled(self, params, X, X2):
        diffs = self._diffs(X, X2)
        scaled_sq = (diffs / params) ** 2
        r = np.sqrt(scaled_sq.sum(axis=-1))
        return diffs, r

    def _gram(self, params, X, X2):
        _, r = self._scaled(params, X, X2)
        return self._profile(r)[0]

    def _gram_grads(self, params, X, X2):
        diffs, r = self._scaled(params, X, X2)
        K, g = self._profile(r)
        # dk/dl_d = k'(r) * dr/dl_d = -g(r) * diff_d^2 / l_d^3
        grads = [-g * diffs[..., j] ** 2 / params[j] ** 3 for j in range(len(self.dims))]
        return K, grads

    def _input_grad(self, params, Xs, X):
        diffs, r = self._scaled(params, Xs, X)
        _, g = self._profile(r)
        out = np.zeros((Xs.shape[0], X.shape[0], Xs.shape[1]))
        out[..., list(self.dims)] = g[..., None] * diffs / params**2
        return out

    def to_dict(self, params) -> dict:
        return {"type": self._type_name, "dims": list(self.dims), "lengthscale": list(map(float, params))}


class SquaredExponential(_RadialKernel):
    """exp(-r^2 / 2) with ARD lengthscales."""

    _type_name = "se"

    def _profile(self, r):
        k = np.exp(-0.5 * r**2)
        return k, -k

    def spectral_base(self, m, rng):
        return rng.standard_normal((m, len(self.dims)))

    def frequencies(self, params, base, input_dim):
        out = np.zeros((base.shape[0], input_dim))
        out[:, list(self.dims)] = base / params
        return out


class Matern(_RadialKernel):
    """Matérn kernel with smoothness nu in {1/2, 3/2, 5/2} and ARD lengthscales."""

    _type_name = "matern"
    SUPPORTED = (0.5, 1.5, 2.5)

    def __init__(self, nu: float = 1.5, dims: int | Sequence[int] = 1):
        super().__init__(dims)
        nu = float(nu)
        if not any(np.isclose(nu, s) for s in self.SUPPORTED):
            raise InputError(f"Matern smoothness must be one of {self.SUPPORTED}, got {nu}")
        self.nu = min(self.SUPPORTED, key=lambda s: abs(s - nu))

    def _profile(self, r):
        if self.nu == 0.5:
            e = np.exp(-r)
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(r > 0, -e / np.where(r > 0, r, 1.0), 0.0)
            return e, g
        if self.nu == 1.5:
            s = np.sqrt(3.0) * r
            e = np.exp(-s)
            return (1.0 + s) * e, -3.0 * e
        s = np.sqrt(5.0) * r
        e = np.exp(-s)
        return (1.0 + s + s**2 / 3.0) * e, -(5.0 / 3.0) * (1.0 + s) * e

    def spectral_base(self, m, rng):
        z = rng.standard_normal((m, len(self.dims)))
        u = rng.chisquare(2.0 * self.nu, size=m)
        return z, u

    def frequencies(self, params, base, input_dim):
        z, u = base
        out = np.zeros((z.shape[0], input_dim))
        out[:, list(self.dims)] = z * np.sqrt(2.0 * self.nu / u)[:, None] / params
        return out

    def to_dict(self, params) -> dict:
        d = super().to_dict(params)
        d["nu"] = self.nu
        return d

    def __repr__(self) -> str:
        return f"Matern(nu={self.nu}, dims={list(self.dims)})"


class Periodic(_BaseKernel):
    """exp(-2 sum_d sin^2(pi (x_d - x'_d) / period) / lengthscale^2).

    One lengthscale and one period are shared across the active dimensions.
    With a single active dimension this is the usual periodic kernel; with
    several it is the product of one-dimensional periodic kernels, which keeps
    it positive semi-definite.
    """

    _type_name = "periodic"

    @property
    def n_params(self) -> int:
        return 2

    def param_names(self) -> list[str]:
        return ["lengthscale", "period"]

    def _parts(self, params, X, X2):
        ell, period = params
        diffs = self._diffs(X, X2)
        phase = np.pi * diffs / period
        s2 = (np.sin(phase) ** 2).sum(axis=-1)
        K = np.exp(-2.0 * s2 / ell**2)
        return diffs, phase, s2, K

    def _gram(self, params, X, X2):
        return self._parts(params, X, X2)[3]

    def _gram_grads(self, params, X, X2):
        ell, period = params
        diffs, phase, s2, K = self._parts(params, X, X2)
        d_ell = K * 4.0 * s2 / ell**3
        d_period = K * (2.0 * np.pi / (ell**2 * period**2)) * (diffs * np.sin(2.0 * phase)).sum(axis=-1)
        return K, [d_ell, d_period]

    def _input_grad(self, params, Xs, X):
        ell, period = params
        _, phase, _, K = self._parts(params, Xs, X)
        out = np.zeros((Xs.shape[0], X.shape[0], Xs.shape[1]))
        out[..., list(self.dims)] = (
            K[..., None] * (-2.0 * np.pi / (ell**2 * period)) * np.sin(2.0 * phase)
        )
        return out

    @staticmethod
    def _harmonic_cdf(ell: float) -> np.ndarray:
        # exp(-2 sin^2(pi t / p) / l^2) = sum_k e^{-z} I_|k|(z) cos(2 pi k t / p), z = 1/l^2
        z = 1.0 / ell**2
        kmax = int(np.ceil(z + 12.0 * np.sqrt(z) + 30.0))
        weights = special.ive(np.arange(kmax + 1), z)
        weights[1:] *= 2.0
        cdf = np.cumsum(weights)
        return cdf / cdf[-1]

    def spectral_base(self, m, rng):
        u = rng.uniform(size=(m, len(self.dims)))
        sign = rng.choice([-1.0, 1.0], size=(m, len(self.dims)))
        return u, sign

    def frequencies(self, params, base, input_dim):
        ell, period = params
        u, sign = base
        harmonics = np.searchsorted(self._harmonic_cdf(ell), u, side="right")
        out = np.zeros((u.shape[0], input_dim))
        out[:, list(self.dims)] = sign * 2.0 * np.pi * harmonics / period
        return out

    def to_dict(self, params) -> dict:
        return {
            "type": "periodic",
            "dims": list(self.dims),
            "lengthscale": float(params[0]),
            "period": float(params[1]),
        }


class Product(Kernel):
    """Pointwise product of kernels; parameters are concatenated in factor order."""

    def __init__(self, factors: Sequence[Kernel]):
        factors = list(factors)
        if not factors:
            raise InputError("a product needs at least one factor")
        flat: list[Kernel] = []
        for f in factors:
            flat.extend(f.factors if isinstance(f, Product) else [f])
        self.factors = flat
        self.stationary = all(f.stationary for f in flat)
        self._offsets = np.cumsum([0] + [f.n_params for f in flat])

    @property
    def n_params(self) -> int:
        return int(self._offsets[-1])

    @property
    def input_dim(self) -> int:
        return max(f.input_dim for f in self.factors)

    def param_names(self) -> list[str]:
        return [f"{i}.{name}" for i, f in enumerate(self.factors) for name in f.param_names()]

    def split(self, params) -> list[np.ndarray]:
        o = self._offsets
        return [params[o[i] : o[i + 1]] for i in range(len(self.factors))]

    def _gram(self, params, X, X2):
        K = np.ones((X.shape[0], X2.shape[0]))
        for f, p in zip(self.factors, self.split(params)):
            K = K * f._gram(p, X, X2)
        return K

    def _gram_grads(self, params, X, X2):
        parts = [f._gram_grads(p, X, X2) for f, p in zip(self.factors, self.split(params))]
        grams = [K for K, _ in parts]
        K = np.prod(grams, axis=0)
        grads = []
        for i, (_, dKs) in enumerate(parts):
            others = np.prod([grams[j] for j in range(len(grams)) if j != i], axis=0) if len(grams) > 1 else 1.0
            grads.extend(dK * others for dK in dKs)
        return K, grads

    def _input_grad(self, params, Xs, X):
        ps = self.split(params)
        grams = [f._gram(p, Xs, X) for f, p in zip(self.factors, ps)]
        out = np.zeros((Xs.shape[0], X.shape[0], Xs.shape[1]))
        for i, (f, p) in enumerate(zip(self.factors, ps)):
            others = np.prod([grams[j] for j in range(len(grams)) if j != i], axis=0) if len(grams) > 1 else 1.0
            out += f._input_grad(p, Xs, X) * np.asarray(others)[..., None]
        return out

    def variance(self, params) -> float:
        return float(np.prod([f.variance(p) for f, p in zip(self.factors, self.split(params))]))

    def spectral_base(self, m, rng):
        return [f.spectral_base(m, rng) for f in self.factors]

    def frequencies(self, params, base, input_dim):
        # The spectral measure of a product is the convolution of the factors'
        # measures, so frequencies drawn per factor are summed.
        return sum(
            f.frequencies(p, b, input_dim) for f, p, b in zip(self.factors, self.split(params), base)
        )

    def to_dict(self, params) -> dict:
        return {
            "type": "product",
            "factors": [f.to_dict(p) for f, p in zip(self.factors, self.split(params))],
        }

    def __repr__(self) -> str:
        return f"Product({self.factors!r})"


class Scaled(Kernel):
    """signal_variance * k(x, x'); the variance is the first parameter."""

    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self.stationary = kernel.stationary

    @property
    def n_params(self) -> int:
        return 1 + self.kernel.n_params

    @property
    def input_dim(self) -> int:
        return self.kernel.input_dim

    def param_names(self) -> list[str]:
        return ["signal_variance"] + self.kernel.param_names()

    def _gram(self, params, X, X2):
        return params[0] * self.kernel._gram(params[1:], X, X2)

    def _gram_grads(self, params, X, X2):
        K, grads = self.kernel._gram_grads(params[1:], X, X2)
        return params[0] * K, [K] + [params[0] * g for g in grads]

    def _input_grad(self, params, Xs, X):
        return params[0] * self.kernel._input_grad(params[1:], Xs, X)

    def variance(self, params) -> float:
        return float(params[0]) * self.kernel.variance(params[1:])

    def spectral_base(self, m, rng):
        return self.kernel.spectral_base(m, rng)

    def frequencies(self, params, base, input_dim):
        return self.kernel.frequencies(params[1:], base, input_dim)

    def to_dict(self, params) -> dict:
        return {
            "type": "scaled",
            "signal_variance": float(params[0]),
            "kernel": self.kernel.to_dict(params[1:]),
        }

    def __repr__(self) -> str:
        return f"Scaled({self.kernel!r})"


# ---------------------------------------------------------------------------
# Model specification: kernel + hyperparameters + noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """A kernel together with its positive hyperparameters and noise scale.

    ``theta`` concatenates the kernel parameters and, last, the noise standard
    deviation sigma, so that H = K + sigma^2 I.
    """

    kernel: Kernel
    kernel_params: np.ndarray
    noise_scale: float
    mean: float = 0.0
    _theta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        params = self.kernel.check_params(self.kernel_params)
        if not np.isfinite(self.noise_scale) or self.noise_scale <= 0:
            raise InputError("noise scale must be finite and strictly positive")
        object.__setattr__(self, "kernel_params", params)
        object.__setattr__(self, "noise_scale", float(self.noise_scale))
        object.__setattr__(self, "_theta", np.append(params, self.noise_scale))

    @property
    def theta(self) -> np.ndarray:
        return self._theta.copy()

    @property
    def noise_var(self) -> float:
        return self.noise_scale**2

    @property
    def n_params(self) -> int:
        return self.kernel.n_params + 1

    @property
    def noise_index(self) -> int:
        return self.kernel.n_params

    def param_names(self) -> list[str]:
        return self.kernel.param_names() + ["noise_scale"]

    def with_theta(self, theta) -> "ModelSpec":
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.n_params:
            raise InputError(f"expected {self.n_params} hyperparameters, got {theta.shape[0]}")
        return ModelSpec(self.kernel, theta[:-1], float(theta[-1]), self.mean)

    def unconstrained(self) -> np.ndarray:
        return softplus_inverse(self._theta)

    @classmethod
    def from_unconstrained(cls, kernel: Kernel, nu, mean: float = 0.0) -> "ModelSpec":
        theta = softplus(nu)
        return cls(kernel, theta[:-1], float(theta[-1]), mean)

    def K(self, X, X2=None) -> np.ndarray:
        return self.kernel.gram(self.kernel_params, X, X2)

    def H(self, X) -> np.ndarray:
        K = self.K(X)
        K[np.diag_indices_from(K)] += self.noise_var
        return K


def kernel_eval(model: ModelSpec, x, x2) -> float:
    """k(x, x') for two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.ndim != 1 or x.shape != x2.shape:
        raise InputError(f"points must be 1-D with equal length, got {x.shape} and {x2.shape}")
    return float(model.K(x[None, :], x2[None, :])[0, 0])


def gram(model: ModelSpec, X, X2=None) -> np.ndarray:
    return model.K(X, X2)


def gram_row_blocks(
    model: ModelSpec, X, X2=None, block_size: int = DEFAULT_BLOCK_SIZE, grads: bool = False
) -> Iterator[tuple[slice, np.ndarray] | tuple[slice, np.ndarray, list[np.ndarray]]]:
    """Yield ``(rows, K[rows, :])`` blocks, optionally with derivative blocks.

    Derivative blocks are with respect to the kernel parameters only; the noise
    derivative is handled by callers since it is diagonal.
    """
    X = model.kernel.check_inputs(X)
    X2 = X if X2 is None else model.kernel.check_inputs(X2, "X2")
    if block_size < 1:
        raise InputError("block size must be positive")
    for start in range(0, X.shape[0], block_size):
        rows = slice(start, min(start + block_size, X.shape[0]))
        if grads:
            K, dK = model.kernel.gram_and_grads(model.kernel_params, X[rows], X2)
            yield rows, K, dK
        else:
            yield rows, model.kernel.gram(model.kernel_params, X[rows], X2)


def grad_H(model: ModelSpec, X, k: int) -> np.ndarray:
    """dH/dtheta_k for H = K_XX + sigma^2 I, with respect to constrained theta."""
    if not 0 <= k < model.n_params:
        raise InputError(f"parameter index {k} out of range for {model.n_params} parameters")
    X = model.kernel.check_inputs(X)
    if k == model.noise_index:
        return 2.0 * model.noise_scale * np.eye(X.shape[0])
    _, grads = model.kernel.gram_and_grads(model.kernel_params, X)
    return grads[k]


def grad_H_all(model: ModelSpec, X) -> list[np.ndarray]:
    """All derivative matrices dH/dtheta_k in parameter order."""
    X = model.kernel.check_inputs(X)
    _, grads = model.kernel.gram_and_grads(model.kernel_params, X)
    return list(grads) + [2.0 * model.noise_scale * np.eye(X.shape[0])]


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------


def kernel_from_dict(d: dict) -> tuple[Kernel, np.ndarray]:
    """Parse a kernel node into (kernel, parameter vector)."""
    if not isinstance(d, dict) or "type" not in d:
        raise InputError(f"kernel node must be an object with a 'type', got {d!r}")
    kind = str(d["type"]).lower()
    try:
        if kind in ("se", "rbf", "squared_exponential"):
            ls = np.atleast_1d(np.asarray(d.get("lengthscale", 1.0), dtype=float))
            dims = d.get("dims", len(ls))
            k = SquaredExponential(dims)
            return k, np.broadcast_to(ls, (k.n_params,)).copy()
        if kind == "matern":
            ls = np.atleast_1d(np.asarray(d.get("lengthscale", 1.0), dtype=float))
            dims = d.get("dims", len(ls))
            k = Matern(d.get("nu", 1.5), dims)
            return k, np.broadcast_to(ls, (k.n_params,)).copy()
        if kind == "periodic":
            k = Periodic(d.get("dims", 1))
            return k, np.array([float(d.get("lengthscale", 1.0)), float(d.get("period", 1.0))])
        if kind == "product":
            parsed = [kernel_from_dict(f) for f in d["factors"]]
            return Product([k for k, _ in parsed]), np.concatenate([p for _, p in parsed])
        if kind == "scaled":
            inner, p = kernel_from_dict(d["kernel"])
            return Scaled(inner), np.concatenate([[float(d.get("signal_variance", 1.0))], p])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed kernel node {d!r}: {exc}") from exc
    raise InputError(f"unknown kernel type {d['type']!r}")


def model_from_dict(d: dict) -> ModelSpec:
    """Parse ``{"kernel": {...}, "params": {"noise_scale": ..., "mean": ...}}``."""
    if "kernel" not in d:
        raise InputError("model config needs a 'kernel' entry")
    kernel, params = kernel_from_dict(d["kernel"])
    extra = d.get("params", {})
    if "noise_variance" in extra and "noise_scale" not in extra:
        noise = float(np.sqrt(float(extra["noise_variance"])))
    else:
        noise = float(extra.get("noise_scale", 0.1))
    return ModelSpec(kernel, params, noise, float(extra.get("mean", 0.0)))


def model_to_dict(model: ModelSpec) -> dict:
    return {
        "kernel": model.kernel.to_dict(model.kernel_params),
        "params": {"noise_scale": model.noise_scale, "mean": model.mean},
    }
