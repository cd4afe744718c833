"""Latent Kronecker algebra for product kernels on partially observed grids.

Observations live on a subset of a p x q grid S x T. With a product kernel
k((s, t), (s', t')) = k_S(s, s') k_T(t, t') the training Gram matrix is
P (K_SS kron K_TT) P^T, where P selects observed cells. Grid cells are
flattened row-major: cell (i, j) has index i * q + j.

Matrix products with the projected operator scatter into the full grid,
apply two small dense products and gather back, costing p^2 q + p q^2
multiplications instead of n^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalError
from .exact import cholesky_with_jitter
from .features import DEFAULT_NUM_FEATURES, draw_prior_samples
from .kernels import Kernel, ModelSpec, Product, Scaled
from .pathwise import PosteriorSampleRep, TabulatedPrior
from .solvers import MatrixOperator, Operator, SolverConfig, SolverReport, solve_system

__all__ = [
    "ProductGrid",
    "ObservationMask",
    "LatentKroneckerOperator",
    "kron_mvm",
    "projected_mvm",
    "kron_eig_solve",
    "break_even",
    "dense_masked_gram",
    "grid_factors",
    "lk_operator",
    "LatentKroneckerSamples",
    "lk_posterior_samples",
    "mvm_costs",
    "bench_mvm",
    "empirical_crossover",
]


@dataclass(frozen=True)
class ProductGrid:
    S: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        T = np.asarray(self.T, dtype=float)
        S = S[:, None] if S.ndim == 1 else S
        T = T[:, None] if T.ndim == 1 else T
        if S.ndim != 2 or T.ndim != 2 or S.shape[0] < 1 or T.shape[0] < 1:
            raise InputError("grid factors need at least one point each")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "T", T)

    @property
    def p(self) -> int:
        return self.S.shape[0]

    @property
    def q(self) -> int:
        return self.T.shape[0]

    @property
    def size(self) -> int:
        return self.p * self.q

    def points(self, indices=None) -> np.ndarray:
        """Joint coordinates [s, t] of grid cells in row-major order."""
        idx = np.arange(self.size) if indices is None else np.asarray(indices)
        i, j = np.divmod(idx, self.q)
        return np.hstack([self.S[i], self.T[j]])


@dataclass(frozen=True)
class ObservationMask:
    """Sorted, unique indices of observed cells in a p x q grid."""

    indices: np.ndarray
    p: int
    q: int

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 1 or idx.size == 0:
            raise InputError("a mask needs at least one observed cell")
        if not np.issubdtype(idx.dtype, np.integer):
            raise InputError("mask indices must be integers")
        if self.p < 1 or self.q < 1:
            raise InputError("grid dimensions must be positive")
        if np.any(np.diff(idx) <= 0):
            raise InputError("mask indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.p * self.q:
            raise InputError(f"mask indices must lie in [0, {self.p * self.q})")
        object.__setattr__(self, "indices", idx.astype(np.intp))

    @classmethod
    def full(cls, p: int, q: int) -> "ObservationMask":
        return cls(np.arange(p * q), p, q)

    @classmethod
    def random(cls, p: int, q: int, missing: float, seed=None) -> "ObservationMask":
        """Drop round(missing * pq) cells uniformly at random (at least one cell stays)."""
        if not 0 <= missing < 1:
            raise InputError("missing ratio must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        keep = max(1, p * q - int(round(missing * p * q)))
        return cls(np.sort(rng.choice(p * q, keep, replace=False)), p, q)

    @property
    def n(self) -> int:
        return self.indices.size

    @property
    def missing_ratio(self) -> float:
        return 1.0 - self.n / (self.p * self.q)

    @property
    def rows(self) -> np.ndarray:
        return self.indices // self.q

    @property
    def cols(self) -> np.ndarray:
        return self.indices % self.q

    def scatter(self, V) -> np.ndarray:
        """P^T V: zero-pad observed values onto the full grid."""
        V = np.asarray(V, dtype=float)
        out = np.zeros((self.p * self.q,) + V.shape[1:])
        out[self.indices] = V
        return out

    def gather(self, V) -> np.ndarray:
        return np.asarray(V)[self.indices]


def kron_mvm(A, B, V) -> np.ndarray:
    """(A kron B) V for V of length pq (or shape (pq, k)) without forming A kron B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    V = np.asarray(V, dtype=float)
    if A.ndim != 2 or B.ndim != 2:
        raise InputError("Kronecker factors must be matrices")
    pa, p = A.shape
    qb, q = B.shape
    if V.shape[0] != p * q:
        raise InputError(f"vector length {V.shape[0]} does not match factor sizes {p}*{q}")
    squeeze = V.ndim == 1
    k = 1 if squeeze else V.shape[1]
    W = (A @ V.reshape(p, q * k)).reshape(pa, q, k)
    out = np.matmul(B, W).reshape(pa * qb, k)
    return out[:, 0] if squeeze else out


class LatentKroneckerOperator(Operator):
    """H = P (K_S kron K_T) P^T + noise_var * I on the observed cells.

    ``entries`` follows the solver convention of n^2 per product so epochs are
    comparable with dense operators; ``flops`` counts the multiplications the
    factored product actually performs.
    """

    def __init__(self, K_S, K_T, mask: ObservationMask, noise_var: float):
        super().__init__()
        K_S = np.asarray(K_S, dtype=float)
        K_T = np.asarray(K_T, dtype=float)
        if K_S.shape != (mask.p, mask.p) or K_T.shape != (mask.q, mask.q):
            raise InputError(
                f"factor shapes {K_S.shape}, {K_T.shape} do not match a {mask.p}x{mask.q} grid"
            )
        if noise_var < 0:
            raise InputError("noise variance must be non-negative")
        self.K_S = K_S
        self.K_T = K_T
        self.mask = mask
        self.n = mask.n
        self.noise_var = float(noise_var)
        self.flops = 0

    @property
    def p(self) -> int:
        return self.mask.p

    @property
    def q(self) -> int:
        return self.mask.q

    @property
    def storage(self) -> int:
        """Stored scalars: both factors, the mask and the noise."""
        return self.p**2 + self.q**2 + self.n + 1

    def reset_counter(self) -> None:
        super().reset_counter()
        self.flops = 0

    def _kernel_matmul(self, V):
        cols = 1 if V.ndim == 1 else V.shape[1]
        self.flops += cols * (self.p**2 * self.q + self.p * self.q**2)
        return self.mask.gather(kron_mvm(self.K_S, self.K_T, self.mask.scatter(V)))

    def kernel_rows(self, idx, count=True):
        r = self.mask.rows[idx]
        c = self.mask.cols[idx]
        rows = self.K_S[np.ix_(np.atleast_1d(r), self.mask.rows)] * self.K_T[np.ix_(np.atleast_1d(c), self.mask.cols)]
        if count:
            self.entries += rows.shape[0] * self.n
        return rows

    def kernel_diag(self):
        return np.diag(self.K_S)[self.mask.rows] * np.diag(self.K_T)[self.mask.cols]


def projected_mvm(op: LatentKroneckerOperator, v) -> np.ndarray:
    return op.matvec(v, count=False)


def dense_masked_gram(K_S, K_T, mask: ObservationMask) -> np.ndarray:
    """P (K_S kron K_T) P^T as an explicit n x n matrix."""
    K_S = np.asarray(K_S, dtype=float)
    K_T = np.asarray(K_T, dtype=float)
    r, c = mask.rows, mask.cols
    return K_S[np.ix_(r, r)] * K_T[np.ix_(c, c)]


def kron_eig_solve(K_S, K_T, noise_var: float, B) -> np.ndarray:
    """(K_S kron K_T + noise_var I)^{-1} B on the full grid via factor eigendecompositions."""
    try:
        lam_s, Q_s = linalg.eigh(np.asarray(K_S, dtype=float))
        lam_t, Q_t = linalg.eigh(np.asarray(K_T, dtype=float))
    except linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition of a Kronecker factor failed") from exc
    B = np.asarray(B, dtype=float)
    denom = np.kron(lam_s, lam_t) + noise_var
    if np.any(denom <= 0):
        raise NumericalError("Kronecker system is not positive definite")
    rotated = kron_mvm(Q_s.T, Q_t.T, B)
    scaled = rotated / (denom if B.ndim == 1 else denom[:, None])
    return kron_mvm(Q_s, Q_t, scaled)


def break_even(p: int, q: int) -> tuple[float, float]:
    """Missing ratios at which factored and dense products cost the same.

    Time compares p^2 q + p q^2 with n^2; memory compares p^2 + q^2 with n^2.
    Both are clamped at zero when the factored form never wins.
    """
    if p < 1 or q < 1:
        raise InputError("grid dimensions must be positive")
    time = 1.0 - np.sqrt(min(1.0, 1.0 / p + 1.0 / q))
    mem = 1.0 - np.sqrt(min(1.0, 1.0 / p**2 + 1.0 / q**2))
    return float(time), float(mem)


# ---------------------------------------------------------------------------
# Product-kernel models on grids
# ---------------------------------------------------------------------------


def _active_dims(kernel: Kernel) -> set[int]:
    if isinstance(kernel, Product):
        return set().union(*(_active_dims(f) for f in kernel.factors))
    if isinstance(kernel, Scaled):
        return _active_dims(kernel.kernel)
    dims = getattr(kernel, "dims", None)
    if dims is None:
        raise InputError(f"cannot tell which inputs {type(kernel).__name__} reads")
    return set(dims)


def _check_separable(kernel: Kernel, ds: int) -> None:
    factors = kernel.kernel.factors if isinstance(kernel, Scaled) and isinstance(kernel.kernel, Product) else (
        kernel.factors if isinstance(kernel, Product) else [kernel]
    )
    for f in factors:
        dims = _active_dims(f)
        if min(dims) < ds <= max(dims):
            raise InputError("every kernel factor must read only grid S columns or only grid T columns")


def grid_factors(model: ModelSpec, grid: ProductGrid, S2=None, T2=None) -> tuple[np.ndarray, np.ndarray]:
    """K_S and K_T for a separable product kernel over joint inputs [s, t].

    Each block is evaluated with the other block held at the first grid point,
    and the surplus factor k(ref, ref) is divided out of K_T. ``S2``/``T2``
    give cross-covariances against the grid instead.
    """
    ds = grid.S.shape[1]
    _check_separable(model.kernel, ds)
    S2 = grid.S if S2 is None else np.asarray(S2, dtype=float).reshape(-1, ds)
    T2 = grid.T if T2 is None else np.asarray(T2, dtype=float).reshape(-1, grid.T.shape[1])
    t0 = grid.T[:1]
    s0 = grid.S[:1]
    emb_S = lambda A: np.hstack([A, np.repeat(t0, A.shape[0], 0)])
    emb_T = lambda A: np.hstack([np.repeat(s0, A.shape[0], 0), A])
    K_S = model.K(emb_S(S2), emb_S(grid.S))
    K_T = model.K(emb_T(T2), emb_T(grid.T))
    ref = model.K(np.hstack([s0, t0]))[0, 0]
    if not ref > 0:
        raise NumericalError("kernel vanishes at the reference grid point")
    return K_S, K_T / ref


def lk_operator(model: ModelSpec, grid: ProductGrid, mask: ObservationMask) -> LatentKroneckerOperator:
    if (mask.p, mask.q) != (grid.p, grid.q):
        raise InputError("mask and grid sizes differ")
    K_S, K_T = grid_factors(model, grid)
    return LatentKroneckerOperator(K_S, K_T, mask, model.noise_var)


@dataclass(frozen=True)
class LatentKroneckerSamples:
    """Posterior samples f(.) + K(., X_obs) u with u solved on the projected operator."""

    model: ModelSpec
    grid: ProductGrid
    mask: ObservationMask
    prior: object
    weights: np.ndarray
    report: SolverReport | None

    def __call__(self, Xq) -> np.ndarray:
        Xq = self.model.kernel.check_inputs(Xq, "Xq")
        return self.prior(Xq) + self.model.K(Xq, self.grid.points(self.mask.indices)) @ self.weights

    def on_grid(self, Sq, Tq) -> np.ndarray:
        """Samples on the grid Sq x Tq (row-major) using a Kronecker product for the update."""
        ds = self.grid.S.shape[1]
        Sq = np.asarray(Sq, dtype=float).reshape(-1, ds)
        Tq = np.asarray(Tq, dtype=float).reshape(-1, self.grid.T.shape[1])
        K_qS, K_qT = grid_factors(self.model, self.grid, Sq, Tq)
        update = kron_mvm(K_qS, K_qT, self.mask.scatter(self.weights))
        pts = np.hstack([np.repeat(Sq, Tq.shape[0], 0), np.tile(Tq, (Sq.shape[0], 1))])
        return self.prior(pts) + update

    def as_rep(self) -> PosteriorSampleRep:
        return PosteriorSampleRep(self.model, self.grid.points(self.mask.indices), self.prior, self.weights, self.report)


def lk_posterior_samples(
    model: ModelSpec,
    grid: ProductGrid,
    mask: ObservationMask,
    y,
    num_samples: int = 64,
    solver: str = "cg",
    cfg: SolverConfig | None = None,
    seed=0,
    prior: str = "rff",
    num_features: int = DEFAULT_NUM_FEATURES,
) -> LatentKroneckerSamples:
    """Posterior samples for observations on a partially observed grid.

    ``prior="rff"`` draws the prior with random features of the product
    kernel (evaluable anywhere). ``prior="grid"`` draws it exactly on the full
    grid as (L_S kron L_T) w and can only be evaluated on grid points.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (mask.n,):
        raise InputError(f"y must have one value per observed cell ({mask.n}), got {y.shape}")
    op = lk_operator(model, grid, mask)
    rng = np.random.default_rng(seed)
    if prior == "rff":
        prior_fn = draw_prior_samples(model, num_samples, num_features, rng, input_dim=grid.S.shape[1] + grid.T.shape[1])
        f_obs = prior_fn(grid.points(mask.indices))
    elif prior == "grid":
        L_S, _ = cholesky_with_jitter(op.K_S)
        L_T, _ = cholesky_with_jitter(op.K_T)
        values = model.mean + kron_mvm(L_S, L_T, rng.standard_normal((grid.size, num_samples)))
        prior_fn = TabulatedPrior(grid.points(), values)
        f_obs = values[mask.indices]
    else:
        raise InputError(f"unknown prior {prior!r}; choose 'rff' or 'grid'")
    rhs = y[:, None] - (f_obs + model.noise_scale * rng.standard_normal((mask.n, num_samples)))
    if solver not in ("cg", "sdd", "ap", "exact"):
        raise InputError(f"solver {solver!r} is not available for latent Kronecker operators")
    weights, report = solve_system(solver, op, rhs, cfg or SolverConfig())
    if report.termination == "divergence":
        raise NumericalError(f"solver diverged on the latent Kronecker system: {report.to_dict()}")
    return LatentKroneckerSamples(model, grid, mask, prior_fn, weights, report)


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


def mvm_costs(p: int, q: int, n: int) -> dict:
    """Multiplications and stored scalars for one product, dense versus factored."""
    return {
        "dense_flops": n * n,
        "latent_flops": p * p * q + p * q * q,
        "dense_bytes": 8 * n * n,
        "latent_bytes": 8 * (p * p + q * q + n + 1),
    }


def bench_mvm(p: int, q: int, missing=None, seed=0, execute: bool = True) -> list[dict]:
    """Sweep missing ratios and record per-product costs of both backends.

    With ``execute=True`` every row comes from the counters of real products
    on random factors (the dense side uses an explicit masked Gram matrix).
    """
    if p < 1 or q < 1:
        raise InputError("grid dimensions must be positive")
    missing = np.round(np.arange(0.0, 1.0, 0.01), 10) if missing is None else np.asarray(missing, dtype=float)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, p))
    B = rng.standard_normal((q, q))
    K_S, K_T = A @ A.T, B @ B.T
    gamma_time, gamma_mem = break_even(p, q)
    rows = []
    for gamma in missing:
        mask = ObservationMask.random(p, q, float(gamma), rng)
        if execute:
            lk = LatentKroneckerOperator(K_S, K_T, mask, 1.0)
            dense = MatrixOperator(dense_masked_gram(K_S, K_T, mask), 1.0)
            v = rng.standard_normal(mask.n)
            lk.matvec(v)
            dense.matvec(v)
            dense_flops, latent_flops = dense.entries, lk.flops
            latent_bytes, dense_bytes = 8 * lk.storage, 8 * mask.n**2
        else:
            c = mvm_costs(p, q, mask.n)
            dense_flops, latent_flops = c["dense_flops"], c["latent_flops"]
            dense_bytes, latent_bytes = c["dense_bytes"], c["latent_bytes"]
        rows.append(
            {
                "gamma": mask.missing_ratio,
                "n": mask.n,
                "dense_flops": int(dense_flops),
                "latent_flops": int(latent_flops),
                "dense_bytes": int(dense_bytes),
                "latent_bytes": int(latent_bytes),
                "latent_faster": bool(latent_flops < dense_flops),
                "latent_smaller": bool(latent_bytes < dense_bytes),
                "break_even_time": gamma_time,
                "break_even_mem": gamma_mem,
            }
        )
    return rows


def empirical_crossover(rows: list[dict], key: str) -> float:
    """Smallest swept missing ratio at which the factored form stops winning on ``key``.

    ``key`` is "latent_faster" or "latent_smaller"; returns 1.0 if it always wins.
    """
    rows = sorted(rows, key=lambda r: r["gamma"])
    for r in rows:
        if not r[key]:
            return r["gamma"]
    return 1.0
