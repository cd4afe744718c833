"""Configuration, reports and residual bookkeeping shared by all solvers."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..errors import InputError
from .operators import Operator

__all__ = ["SolverConfig", "SolverReport", "relative_residuals", "criterion_met"]

TERMINATIONS = ("tolerance", "budget", "divergence")


@dataclass
class SolverConfig:
    """Knobs for every solver; each solver reads only the fields it needs.

    ``step`` is the normalized step size beta * n. When left as ``None`` a
    per-solver default is used.
    """

    tol: float = 0.01
    max_epochs: float | None = None
    max_iters: int | None = None
    criterion: str = "max"  # "max": every column; "split": targets and mean of probes
    seed: int = 0
    # conjugate gradients
    precond_rank: int = 0
    # alternating projections
    block_size: int = 1000
    # stochastic solvers
    batch_size: int | None = None
    step: float | None = None
    momentum: float = 0.9
    avg_r: float | None = None
    num_features: int = 100
    clip: float = 0.1
    polyak_fraction: float = 0.1
    divergence_factor: float = 1e3
    check_every: float = 1.0  # epochs between exact residual checks

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("tolerance must be positive")
        if self.max_epochs is not None and self.max_epochs < 0:
            raise InputError("epoch budget must be non-negative")
        if self.max_iters is not None and self.max_iters < 0:
            raise InputError("iteration budget must be non-negative")
        if self.criterion not in ("max", "split"):
            raise InputError(f"unknown termination criterion {self.criterion!r}")
        if self.step is not None and not self.step > 0:
            raise InputError("step size must be positive")
        if self.block_size < 1 or (self.batch_size is not None and self.batch_size < 1):
            raise InputError("block and batch sizes must be positive")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must lie in [0, 1)")
        if self.avg_r is not None and not 0 < self.avg_r <= 1:
            raise InputError("averaging parameter must lie in (0, 1]")
        if self.precond_rank < 0 or self.num_features < 1:
            raise InputError("preconditioner rank and feature count must be non-negative")

    def replace(self, **changes) -> "SolverConfig":
        return SolverConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolverReport:
    iterations: int
    epochs: float
    residuals: np.ndarray
    termination: str
    wall_time: float
    monitor_epochs: float = 0.0
    history: list[float] = field(default_factory=list)

    @property
    def mean_residual(self) -> float:
        """Relative residual of the first (targets) column."""
        return float(self.residuals[0])

    @property
    def probe_residual(self) -> float:
        """Average relative residual over the remaining (probe) columns."""
        return float(np.mean(self.residuals[1:])) if len(self.residuals) > 1 else float("nan")

    @property
    def converged(self) -> bool:
        return self.termination == "tolerance"

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "epochs": self.epochs,
            "residuals": [float(r) for r in self.residuals],
            "mean_residual": self.mean_residual,
            "probe_residual": self.probe_residual if len(self.residuals) > 1 else None,
            "termination": self.termination,
            "wall_time": self.wall_time,
            "monitor_epochs": self.monitor_epochs,
        }


def column_norms(B: np.ndarray) -> np.ndarray:
    return np.linalg.norm(B, axis=0)


def relative_residuals(R: np.ndarray, b_norms: np.ndarray) -> np.ndarray:
    """||r_j|| / ||b_j||, falling back to ||r_j|| for zero right-hand sides."""
    r = column_norms(R)
    return np.where(b_norms > 0, r / np.where(b_norms > 0, b_norms, 1.0), r)


def criterion_met(rel: np.ndarray, tol: float, criterion: str) -> bool:
    if criterion == "split" and len(rel) > 1:
        return bool(rel[0] <= tol and np.mean(rel[1:]) <= tol)
    return bool(np.all(rel <= tol))


def criterion_value(rel: np.ndarray, criterion: str) -> float:
    if criterion == "split" and len(rel) > 1:
        return float(max(rel[0], np.mean(rel[1:])))
    return float(np.max(rel)) if len(rel) else 0.0


def as_batch(op: Operator, B, V0=None) -> tuple[np.ndarray, np.ndarray, bool]:
    """Validate right-hand sides and initial solutions; returns 2-D copies."""
    B = np.asarray(B, dtype=float)
    squeeze = B.ndim == 1
    B = B[:, None] if squeeze else B
    if B.ndim != 2 or B.shape[0] != op.n:
        raise InputError(f"right-hand sides must have {op.n} rows, got shape {B.shape}")
    if V0 is None:
        V = np.zeros_like(B)
    else:
        V = np.array(V0, dtype=float).reshape(B.shape)
    return B, V, squeeze


def finish(
    op: Operator,
    B: np.ndarray,
    V: np.ndarray,
    squeeze: bool,
    iterations: int,
    epochs: float,
    termination: str,
    start: float,
    history: list[float],
    monitor_epochs: float = 0.0,
) -> tuple[np.ndarray, SolverReport]:
    """Recompute residuals exactly and package the result."""
    if np.all(np.isfinite(V)):
        rel = relative_residuals(B - op.matvec(V, count=False), column_norms(B))
    else:
        rel = np.full(B.shape[1], np.inf)
        termination = "divergence"
    report = SolverReport(
        iterations=iterations,
        epochs=epochs,
        residuals=rel,
        termination=termination,
        wall_time=time.perf_counter() - start,
        monitor_epochs=monitor_epochs,
        history=history,
    )
    return (V[:, 0] if squeeze else V), report


Callback = Callable[[int, dict], None]

