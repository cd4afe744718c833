"""Batched conjugate gradients with an optional pivoted-Cholesky preconditioner."""

from __future__ import annotations

import time

import numpy as np
from scipy import linalg

from ..errors import NumericalError
from .base import (
    Callback,
    SolverConfig,
    as_batch,
    column_norms,
    criterion_met,
    criterion_value,
    finish,
    relative_residuals,
)
from .operators import Operator

__all__ = ["pivoted_cholesky", "WoodburyPreconditioner", "solve_cg"]


def pivoted_cholesky(op: Operator, rank: int, rel_tol: float = 0.0) -> np.ndarray:
    """Greedy max-diagonal pivoted Cholesky of the kernel matrix K (not H).

    Returns an (n, r) factor L with L L^T approximating K. Stops early when the
    largest remaining diagonal is non-positive or below ``rel_tol`` times the
    initial trace.
    """
    n = op.n
    rank = min(int(rank), n)
    d = op.kernel_diag().astype(float)
    trace = d.sum()
    L = np.zeros((n, rank))
    for k in range(rank):
        j = int(np.argmax(d))
        pivot = d[j]
        if pivot <= 0 or pivot <= rel_tol * trace:
            return L[:, :k]
        row = op.kernel_rows([j])[0] - L[:, :k] @ L[j, :k]
        L[:, k] = row / np.sqrt(pivot)
        d -= L[:, k] ** 2
        d[j] = 0.0
    return L


class WoodburyPreconditioner:
    """Applies (L L^T + noise_var I)^{-1} in O(n r) per column."""

    def __init__(self, L: np.ndarray, noise_var: float):
        if noise_var <= 0:
            raise NumericalError("preconditioning needs a positive noise variance")
        self.L = L
        self.noise_var = noise_var
        inner = noise_var * np.eye(L.shape[1]) + L.T @ L
        self._factor = linalg.cho_factor(inner, lower=True)

    def __call__(self, R: np.ndarray) -> np.ndarray:
        if self.L.shape[1] == 0:
            return R / self.noise_var
        return (R - self.L @ linalg.cho_solve(self._factor, self.L.T @ R)) / self.noise_var


def solve_cg(
    op: Operator,
    B,
    cfg: SolverConfig | None = None,
    V0=None,
    callback: Callback | None = None,
):
    """Solve H V = B column by column, sharing one operator product per iteration.

    Columns are frozen once their relative residual reaches ``cfg.tol``. One
    iteration costs one epoch whatever the number of columns.
    """
    cfg = cfg or SolverConfig()
    start = time.perf_counter()
    B, V, squeeze = as_batch(op, B, V0)
    b_norms = column_norms(B)
    entries0 = op.entries

    precond = None
    if cfg.precond_rank > 0:
        precond = WoodburyPreconditioner(pivoted_cholesky(op, cfg.precond_rank), op.noise_var)
    apply_precond = precond if precond is not None else (lambda R: R)

    budget = _iteration_budget(cfg, op.n)
    R = B - op.matvec(V) if V0 is not None else B.copy()
    rel = relative_residuals(R, b_norms)
    initial = criterion_value(rel, cfg.criterion)
    history = [initial]
    Z = apply_precond(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    active = rel > cfg.tol

    it = 0
    termination = "budget"
    while True:
        if criterion_met(rel, cfg.tol, cfg.criterion):
            termination = "tolerance"
            break
        if it >= budget:
            break
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        HP = op.matvec(P[:, cols])
        pHp = np.einsum("ij,ij->j", P[:, cols], HP)
        with np.errstate(divide="ignore", invalid="ignore"):
            alpha = np.where(pHp > 0, rz[cols] / pHp, 0.0)
        V[:, cols] += alpha * P[:, cols]
        R[:, cols] -= alpha * HP
        it += 1
        rel[cols] = relative_residuals(R[:, cols], b_norms[cols])
        value = criterion_value(rel, cfg.criterion)
        history.append(value)
        if not np.all(np.isfinite(V[:, cols])) or value > cfg.divergence_factor * max(initial, 1e-300):
            termination = "divergence"
            break
        Zc = apply_precond(R[:, cols])
        rz_new = np.einsum("ij,ij->j", R[:, cols], Zc)
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = np.where(rz[cols] > 0, rz_new / rz[cols], 0.0)
        if callback is not None:
            callback(it, {"V": V, "R": R, "P": P[:, cols].copy(), "columns": cols, "alpha": alpha})
        P[:, cols] = Zc + beta * P[:, cols]
        rz[cols] = rz_new
        active = rel > cfg.tol
        # Columns whose residual vanished exactly cannot make further progress.
        active &= rz > 0

    epochs = (op.entries - entries0) / float(op.n) ** 2
    return finish(op, B, V, squeeze, it, epochs, termination, start, history)


def _iteration_budget(cfg: SolverConfig, n: int) -> float:
    budget = np.inf
    if cfg.max_iters is not None:
        budget = cfg.max_iters
    if cfg.max_epochs is not None:
        budget = min(budget, np.floor(cfg.max_epochs + 1e-9))
    if not np.isfinite(budget):
        budget = max(10 * n, 100)
    return budget
