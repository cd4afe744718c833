"""Alternating projections: greedy block Gauss-Seidel with cached block factors."""

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

__all__ = ["solve_ap", "contiguous_blocks"]


def contiguous_blocks(n: int, block_size: int) -> list[slice]:
    return [slice(s, min(s + block_size, n)) for s in range(0, n, block_size)]


def solve_ap(
    op: Operator,
    B,
    cfg: SolverConfig | None = None,
    V0=None,
    callback: Callback | None = None,
):
    """Repeatedly solve the block subsystem with the largest residual.

    Each iteration reads the n x b columns of H belonging to one block, so it
    costs b / n epochs. Block factorizations are computed on first use from
    those columns and cached for the rest of the solve.
    """
    cfg = cfg or SolverConfig()
    start = time.perf_counter()
    B, V, squeeze = as_batch(op, B, V0)
    n = op.n
    b_norms = column_norms(B)
    entries0 = op.entries
    blocks = contiguous_blocks(n, min(cfg.block_size, n))
    factors: dict[int, tuple] = {}

    limits = []
    if cfg.max_iters is not None:
        limits.append(cfg.max_iters)
    if cfg.max_epochs is not None:
        limits.append(int(np.floor(cfg.max_epochs * n / min(cfg.block_size, n) + 1e-9)))
    budget = min(limits) if limits else 1000 * len(blocks)

    R = B - op.matvec(V) if V0 is not None else B.copy()
    rel = relative_residuals(R, b_norms)
    initial = criterion_value(rel, cfg.criterion)
    history = [initial]
    block_norms = _block_norms(R, blocks)

    it = 0
    termination = "budget"
    while True:
        if criterion_met(rel, cfg.tol, cfg.criterion):
            termination = "tolerance"
            break
        if it >= budget:
            break
        i = int(np.argmax(block_norms))
        blk = blocks[i]
        K_cols = op.kernel_rows(blk).T  # K[:, blk] by symmetry
        if i not in factors:
            H_block = K_cols[blk] + op.noise_var * np.eye(blk.stop - blk.start)
            try:
                factors[i] = linalg.cho_factor(H_block, lower=True)
            except linalg.LinAlgError as exc:
                raise NumericalError(f"Cholesky factorization of block {i} failed") from exc
        D = linalg.cho_solve(factors[i], R[blk])
        V[blk] += D
        R -= K_cols @ D
        R[blk] -= op.noise_var * D
        it += 1
        rel = relative_residuals(R, b_norms)
        value = criterion_value(rel, cfg.criterion)
        history.append(value)
        if not np.all(np.isfinite(V)) or value > cfg.divergence_factor * max(initial, 1e-300):
            termination = "divergence"
            break
        block_norms = _block_norms(R, blocks)
        if callback is not None:
            callback(it, {"V": V, "R": R, "block": i})

    epochs = (op.entries - entries0) / float(n) ** 2
    return finish(op, B, V, squeeze, it, epochs, termination, start, history)


def _block_norms(R: np.ndarray, blocks: list[slice]) -> np.ndarray:
    sq = np.einsum("ij,ij->i", R, R)
    starts = [b.start for b in blocks]
    return np.add.reduceat(sq, starts)
