"""Operator handles for H = K + noise * I with kernel-entry accounting.

Every operator counts how many kernel entries its solver-facing accessors
touch, so that work can be reported in epochs (one epoch = n^2 entries).
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from ..errors import InputError
from ..kernels import DEFAULT_BLOCK_SIZE, ModelSpec

__all__ = ["Operator", "MatrixOperator", "KernelOperator"]


class Operator(ABC):
    """Symmetric positive-definite operator H = K + noise_var * I."""

    n: int
    noise_var: float

    def __init__(self):
        self.entries = 0

    @property
    def epochs(self) -> float:
        return self.entries / float(self.n) ** 2 if self.n else 0.0

    def reset_counter(self) -> None:
        self.entries = 0

    @abstractmethod
    def _kernel_matmul(self, V: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def kernel_rows(self, idx, count: bool = True) -> np.ndarray:
        """K[idx, :] without the noise term; ``idx`` may be an index array or a slice.

        The result may be a read-only view into stored data.
        """

    @abstractmethod
    def kernel_diag(self) -> np.ndarray: ...

    def matvec(self, V, count: bool = True) -> np.ndarray:
        """H @ V for a vector or a matrix of column vectors."""
        V = np.asarray(V, dtype=float)
        if V.shape[0] != self.n:
            raise InputError(f"operator has size {self.n}, got vectors of length {V.shape[0]}")
        if count:
            self.entries += self.n * self.n
        return self._kernel_matmul(V) + self.noise_var * V

    __matmul__ = matvec

    def rows(self, idx, count: bool = True) -> np.ndarray:
        """H[idx, :]."""
        idx = np.arange(self.n)[idx] if isinstance(idx, slice) else np.asarray(idx)
        R = np.array(self.kernel_rows(idx, count))
        R[np.arange(len(idx)), idx] += self.noise_var
        return R

    def diag(self) -> np.ndarray:
        return self.kernel_diag() + self.noise_var

    def dense(self) -> np.ndarray:
        return self.rows(np.arange(self.n), count=False)


class MatrixOperator(Operator):
    """Operator backed by an explicit PSD kernel matrix."""

    def __init__(self, K, noise_var: float):
        super().__init__()
        K = np.asarray(K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise InputError("kernel matrix must be square")
        if noise_var < 0:
            raise InputError("noise variance must be non-negative")
        self.K = K
        self.n = K.shape[0]
        self.noise_var = float(noise_var)

    def _kernel_matmul(self, V):
        return self.K @ V

    def kernel_rows(self, idx, count=True):
        rows = self.K[idx]
        if count:
            self.entries += rows.shape[0] * self.n
        return rows

    def kernel_diag(self):
        return np.diag(self.K).copy()


class KernelOperator(Operator):
    """Operator for a model on inputs X.

    With ``lazy=False`` (the default for n <= ``dense_threshold``) K is
    materialized once. With ``lazy=True`` every product regenerates K in row
    blocks of ``block_size`` rows and never stores it.
    """

    def __init__(
        self,
        model: ModelSpec,
        X,
        lazy: bool | None = None,
        block_size: int = DEFAULT_BLOCK_SIZE,
        dense_threshold: int = 8192,
    ):
        super().__init__()
        self.model = model
        self.X = model.kernel.check_inputs(X)
        self.n = self.X.shape[0]
        self.noise_var = model.noise_var
        self.block_size = int(block_size)
        self.lazy = self.n > dense_threshold if lazy is None else bool(lazy)
        self._K = None if self.lazy else model.K(self.X)

    def _kernel_matmul(self, V):
        if self._K is not None:
            return self._K @ V
        out = np.empty_like(V)
        for start in range(0, self.n, self.block_size):
            rows = slice(start, min(start + self.block_size, self.n))
            out[rows] = self.model.K(self.X[rows], self.X) @ V
        return out

    def kernel_rows(self, idx, count=True):
        rows = self._K[idx] if self._K is not None else self.model.K(self.X[idx], self.X)
        if count:
            self.entries += rows.shape[0] * self.n
        return rows

    def kernel_diag(self):
        if self._K is not None:
            return np.diag(self._K).copy()
        if self.model.kernel.stationary:
            return np.full(self.n, self.model.kernel.variance(self.model.kernel_params))
        return np.array([self.model.K(x[None], x[None])[0, 0] for x in self.X])

    def cross(self, Xs) -> np.ndarray:
        """K(Xs, X) for prediction."""
        return self.model.K(Xs, self.X)
