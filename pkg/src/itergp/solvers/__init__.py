"""Iterative solvers for batched systems (K + noise I) V = B."""

from __future__ import annotations

import time

import numpy as np
from scipy import linalg

from ..errors import InputError, NumericalError
from .ap import solve_ap
from .base import SolverConfig, SolverReport, as_batch, column_norms, finish
from .cg import WoodburyPreconditioner, pivoted_cholesky, solve_cg
from .operators import KernelOperator, MatrixOperator, Operator
from .sdd import dual_gradient, dual_objective, primal_objective, solve_sdd
from .sgd import primal_gradient, solve_sgd_primal_mean, solve_sgd_primal_sample

__all__ = [
    "SolverConfig",
    "SolverReport",
    "Operator",
    "MatrixOperator",
    "KernelOperator",
    "solve_cg",
    "solve_ap",
    "solve_sdd",
    "solve_sgd_primal_mean",
    "solve_sgd_primal_sample",
    "solve_exact",
    "solve_system",
    "pivoted_cholesky",
    "WoodburyPreconditioner",
    "dual_objective",
    "dual_gradient",
    "primal_objective",
    "primal_gradient",
    "METHODS",
    "RESCALE_EPS",
]

METHODS = ("cg", "ap", "sgd", "sdd", "exact")
RESCALE_EPS = 1e-12


def solve_exact(op: Operator, B, cfg: SolverConfig | None = None, V0=None, callback=None):
    """Dense Cholesky solve, reported as one iteration and one epoch."""
    start = time.perf_counter()
    B, _, squeeze = as_batch(op, B)
    H = op.dense()
    op.entries += op.n * op.n
    try:
        V = linalg.cho_solve(linalg.cho_factor(H, lower=True), B)
    except linalg.LinAlgError as exc:
        raise NumericalError("Cholesky factorization of the system matrix failed") from exc
    return finish(op, B, V, squeeze, 1, 1.0, "tolerance", start, [])


def solve_system(method: str, op: Operator, B, cfg: SolverConfig | None = None, V0=None,
                 rescale: bool = False, callback=None):
    """Dispatch to a solver by name.

    With ``rescale=True`` every column is divided by ||b_j|| + 1e-12 before
    solving and the solution multiplied back afterwards, which keeps the
    absolute scale of all systems comparable.
    """
    cfg = cfg or SolverConfig()
    if method not in METHODS:
        raise InputError(f"unknown solver {method!r}; choose from {METHODS}")
    B = np.asarray(B, dtype=float)
    squeeze = B.ndim == 1
    B2 = B[:, None] if squeeze else B
    V0_2 = None if V0 is None else np.asarray(V0, dtype=float).reshape(B2.shape)
    scale = column_norms(B2) + RESCALE_EPS if rescale else np.ones(B2.shape[1])
    Bs = B2 / scale
    V0s = None if V0_2 is None else V0_2 / scale

    if method == "cg":
        V, report = solve_cg(op, Bs, cfg, V0s, callback)
    elif method == "ap":
        V, report = solve_ap(op, Bs, cfg, V0s, callback)
    elif method == "sdd":
        V, report = solve_sdd(op, Bs, cfg, V0s, callback)
    elif method == "sgd":
        if not isinstance(op, KernelOperator):
            raise InputError("primal SGD needs a kernel-backed operator")
        V, report = solve_sgd_primal_mean(op.model, op.X, Bs, cfg, V0=V0s, callback=callback, op=op)
    else:
        V, report = solve_exact(op, Bs, cfg)
    V = V * scale
    return (V[:, 0] if squeeze else V), report
