"""Marginal-likelihood optimization with stochastic gradient estimators.

The gradient of the log marginal likelihood needs H^{-1} y and the traces
tr(H^{-1} dH/dtheta_k). Both estimators below obtain them from one batched
solve against [y, probes]:

* ``standard``: Gaussian probes z ~ N(0, I), trace ~ mean_j z_j^T dH H^{-1} z_j.
* ``pathwise``: probes xi = f_X + eps ~ N(0, H) built from random features, so
  u_j = H^{-1} xi_j ~ N(0, H^{-1}) and trace ~ mean_j u_j^T dH u_j. The same
  solutions also give posterior samples f + K(., X)(v_y - u_j) for free.

The outer loop runs Adam on the softplus-unconstrained hyperparameters and can
warm start each batched solve from the previous step's solutions while keeping
all probe randomness fixed.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalError
from .exact import cholesky_with_jitter, mll as exact_mll, mll_grad as exact_mll_grad
from .features import DEFAULT_NUM_FEATURES, FourierFeatureSet, PriorSample, sample_features
from .kernels import DEFAULT_BLOCK_SIZE, ModelSpec, gram_row_blocks, softplus_grad
from .pathwise import PosteriorSampleRep
from .solvers import KernelOperator, SolverConfig, SolverReport, solve_system

__all__ = [
    "ProbeSet",
    "make_probes",
    "GradEstimate",
    "quadratic_forms",
    "grad_estimate_standard",
    "grad_estimate_pathwise",
    "initial_distance_stats",
    "OuterConfig",
    "StepRecord",
    "Trajectory",
    "optimize",
    "DEFAULT_NUM_PROBES",
]

DEFAULT_NUM_PROBES = 64
ESTIMATORS = ("standard", "pathwise")


@dataclass(frozen=True)
class ProbeSet:
    """Fixed probe randomness from which right-hand sides are rebuilt at any theta.

    Standard probes store z directly. Pathwise probes store random-feature
    base draws and weights (``prior="rff"``) or standard-normal vectors mapped
    through a Cholesky factor of K (``prior="exact"``), plus the noise draws.
    """

    kind: str
    num_probes: int
    z: np.ndarray | None = None
    features: FourierFeatureSet | None = None
    prior_weights: np.ndarray | None = None
    noise_weights: np.ndarray | None = None
    prior: str = "rff"

    def rhs(self, model: ModelSpec, X) -> np.ndarray:
        if self.kind == "standard":
            return self.z
        return self.prior_values(model, X) + model.noise_scale * self.noise_weights

    def prior_values(self, model: ModelSpec, X) -> np.ndarray:
        """Zero-mean prior draws f_X at the current hyperparameters."""
        if self.kind != "pathwise":
            raise InputError("only pathwise probes carry prior draws")
        if self.prior == "exact":
            L, _ = cholesky_with_jitter(model.K(X))
            return L @ self.prior_weights
        return self.features.with_params(model.kernel_params)(X) @ self.prior_weights

    def prior_sample(self, model: ModelSpec) -> PriorSample:
        if self.prior != "rff":
            raise InputError("prior samples evaluable anywhere need random-feature probes")
        return PriorSample(self.features.with_params(model.kernel_params), self.prior_weights, model.mean)

    def fingerprint(self) -> str:
        """Digest of all stored randomness; constant while probes are frozen."""
        h = hashlib.sha256()
        for arr in (self.z, self.prior_weights, self.noise_weights):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        if self.features is not None:
            for part in _flatten(self.features.base):
                h.update(np.ascontiguousarray(part).tobytes())
        return h.hexdigest()


def _flatten(base):
    if isinstance(base, np.ndarray):
        yield base
    else:
        for item in base:
            yield from _flatten(item)


def make_probes(
    kind: str,
    model: ModelSpec,
    X,
    num_probes: int = DEFAULT_NUM_PROBES,
    seed: int | np.random.Generator | None = 0,
    num_features: int = DEFAULT_NUM_FEATURES,
    prior: str = "rff",
) -> ProbeSet:
    if kind not in ESTIMATORS:
        raise InputError(f"unknown estimator {kind!r}; choose from {ESTIMATORS}")
    if num_probes < 1:
        raise InputError("need at least one probe")
    X = model.kernel.check_inputs(X)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    if kind == "standard":
        return ProbeSet(kind, num_probes, z=rng.standard_normal((n, num_probes)))
    if prior == "exact":
        return ProbeSet(
            kind,
            num_probes,
            prior_weights=rng.standard_normal((n, num_probes)),
            noise_weights=rng.standard_normal((n, num_probes)),
            prior="exact",
        )
    if prior != "rff":
        raise InputError(f"unknown prior {prior!r}")
    fs = sample_features(model.kernel, model.kernel_params, num_features, rng, input_dim=X.shape[1])
    return ProbeSet(
        kind,
        num_probes,
        features=fs,
        prior_weights=rng.standard_normal((fs.dim, num_probes)),
        noise_weights=rng.standard_normal((n, num_probes)),
    )


def quadratic_forms(model: ModelSpec, X, U, V, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Q[k, j] = U[:, j]^T (dH/dtheta_k) V[:, j] without forming dH.

    Kernel derivative blocks are generated ``block_size`` rows at a time.
    """
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    U = U[:, None] if U.ndim == 1 else U
    V = V[:, None] if V.ndim == 1 else V
    Q = np.zeros((model.n_params, U.shape[1]))
    for rows, _, dK in gram_row_blocks(model, X, block_size=block_size, grads=True):
        for k, block in enumerate(dK):
            Q[k] += np.einsum("ij,ij->j", U[rows], block @ V)
    Q[model.noise_index] = 2.0 * model.noise_scale * np.einsum("ij,ij->j", U, V)
    return Q


@dataclass
class GradEstimate:
    grad: np.ndarray
    report: SolverReport
    solutions: np.ndarray
    data_term: np.ndarray
    trace_terms: np.ndarray  # (n_params, s): per-probe trace estimates
    samples: PosteriorSampleRep | None = None

    @property
    def trace(self) -> np.ndarray:
        return self.trace_terms.mean(axis=1)

    @property
    def reliable(self) -> bool:
        return self.report.termination != "divergence"


def _solve_batch(model, X, y, probe_rhs, solver, cfg, V0, op):
    op = op if op is not None else KernelOperator(model, X)
    B = np.hstack([(np.asarray(y, dtype=float) - model.mean)[:, None], probe_rhs])
    return solve_system(solver, op, B, cfg, V0, rescale=True)


def grad_estimate_standard(
    model: ModelSpec,
    X,
    y,
    probes: ProbeSet,
    solver: str = "cg",
    cfg: SolverConfig | None = None,
    V0=None,
    op=None,
) -> GradEstimate:
    if probes.kind != "standard":
        raise InputError("standard estimator needs standard probes")
    X = model.kernel.check_inputs(X)
    Z = probes.rhs(model, X)
    V, report = _solve_batch(model, X, y, Z, solver, cfg or SolverConfig(criterion="split"), V0, op)
    v_y = V[:, 0]
    data = 0.5 * quadratic_forms(model, X, v_y, v_y)[:, 0]
    trace_terms = quadratic_forms(model, X, Z, V[:, 1:])
    return GradEstimate(data - 0.5 * trace_terms.mean(axis=1), report, V, data, trace_terms)


def grad_estimate_pathwise(
    model: ModelSpec,
    X,
    y,
    probes: ProbeSet,
    solver: str = "cg",
    cfg: SolverConfig | None = None,
    V0=None,
    op=None,
) -> GradEstimate:
    if probes.kind != "pathwise":
        raise InputError("pathwise estimator needs pathwise probes")
    X = model.kernel.check_inputs(X)
    Xi = probes.rhs(model, X)
    V, report = _solve_batch(model, X, y, Xi, solver, cfg or SolverConfig(criterion="split"), V0, op)
    v_y, U = V[:, 0], V[:, 1:]
    data = 0.5 * quadratic_forms(model, X, v_y, v_y)[:, 0]
    trace_terms = quadratic_forms(model, X, U, U)
    samples = None
    if probes.prior == "rff":
        samples = PosteriorSampleRep(model, X, probes.prior_sample(model), v_y[:, None] - U, report)
    return GradEstimate(data - 0.5 * trace_terms.mean(axis=1), report, V, data, trace_terms, samples)


def initial_distance_stats(
    model: ModelSpec, X, kind: str, trials: int = 1000, seed: int | None = 0
) -> tuple[float, float, float]:
    """Monte-Carlo estimate of E ||H^{-1} b||_H^2 for zero-initialized solves.

    Returns (estimate, standard error, closed form): tr(H^{-1}) for standard
    probes and n for pathwise probes drawn exactly from N(0, H).
    """
    X = model.kernel.check_inputs(X)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    H = model.H(X)
    factor = linalg.cho_factor(H, lower=True)
    if kind == "standard":
        B = rng.standard_normal((n, trials))
        reference = float(np.trace(linalg.cho_solve(factor, np.eye(n))))
    elif kind == "pathwise":
        L, _ = cholesky_with_jitter(model.K(X))
        B = L @ rng.standard_normal((n, trials)) + model.noise_scale * rng.standard_normal((n, trials))
        reference = float(n)
    else:
        raise InputError(f"unknown estimator {kind!r}")
    dist = np.einsum("ij,ij->j", B, linalg.cho_solve(factor, B))
    return float(dist.mean()), float(dist.std(ddof=1) / np.sqrt(trials)), reference


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


@dataclass
class OuterConfig:
    steps: int = 100
    lr: float = 0.1
    estimator: str = "pathwise"  # "standard", "pathwise" or "exact" (dense gradient)
    num_probes: int = DEFAULT_NUM_PROBES
    warm_start: bool = False
    solver: str = "cg"
    solver_cfg: SolverConfig = field(default_factory=lambda: SolverConfig(criterion="split"))
    num_features: int = DEFAULT_NUM_FEATURES
    prior: str = "rff"
    seed: int = 0
    track_mll: bool = False
    max_divergences: int = 3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0:
            raise InputError("number of outer steps must be non-negative")
        if not self.lr > 0:
            raise InputError("learning rate must be positive")
        if self.estimator not in ESTIMATORS + ("exact",):
            raise InputError(f"unknown estimator {self.estimator!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solver_cfg"] = self.solver_cfg.to_dict()
        return d


@dataclass
class StepRecord:
    step: int
    theta: np.ndarray
    grad: np.ndarray
    skipped: bool
    iterations: int
    epochs: float
    mean_residual: float
    probe_residual: float
    termination: str
    wall_time: float
    mll: float | None = None
    probe_fingerprint: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta"] = [float(t) for t in self.theta]
        d["grad"] = [float(g) for g in self.grad]
        return d


@dataclass
class Trajectory:
    records: list[StepRecord]
    model: ModelSpec

    @property
    def total_iterations(self) -> int:
        return sum(r.iterations for r in self.records)

    @property
    def total_epochs(self) -> float:
        return float(sum(r.epochs for r in self.records))


def optimize(model0: ModelSpec, X, y, cfg: OuterConfig | None = None, callback=None) -> Trajectory:
    """Maximize the log marginal likelihood with Adam on unconstrained parameters."""
    cfg = cfg or OuterConfig()
    X = model0.kernel.check_inputs(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise InputError(f"y must have shape ({X.shape[0]},), got {y.shape}")
    kernel = model0.kernel
    nu = model0.unconstrained()
    first = np.zeros_like(nu)
    second = np.zeros_like(nu)
    b1, b2 = cfg.betas
    records: list[StepRecord] = []
    probes = None
    V_prev = None
    divergences = 0
    adam_t = 0

    for step in range(cfg.steps):
        start = time.perf_counter()
        model = ModelSpec.from_unconstrained(kernel, nu, model0.mean)
        report = None
        if cfg.estimator == "exact":
            grad = exact_mll_grad(model, X, y)
        else:
            if probes is None or not cfg.warm_start:
                probes = make_probes(
                    cfg.estimator, model0, X, cfg.num_probes, (cfg.seed, step if not cfg.warm_start else 0),
                    cfg.num_features, cfg.prior,
                )
            estimate_fn = grad_estimate_pathwise if cfg.estimator == "pathwise" else grad_estimate_standard
            est = estimate_fn(
                model, X, y, probes, cfg.solver, cfg.solver_cfg, V_prev if cfg.warm_start else None
            )
            report, grad = est.report, est.grad
        skipped = report is not None and report.termination == "divergence"
        record = StepRecord(
            step=step,
            theta=model.theta,
            grad=grad,
            skipped=skipped,
            iterations=report.iterations if report else 0,
            epochs=report.epochs if report else 0.0,
            mean_residual=report.mean_residual if report else 0.0,
            probe_residual=report.probe_residual if report else 0.0,
            termination=report.termination if report else "exact",
            wall_time=0.0,
            mll=exact_mll(model, X, y) if cfg.track_mll else None,
            probe_fingerprint=probes.fingerprint() if probes is not None else None,
        )
        if skipped:
            divergences += 1
            record.wall_time = time.perf_counter() - start
            records.append(record)
            if divergences >= cfg.max_divergences:
                raise NumericalError(
                    f"inner solver diverged {divergences} times in a row at step {step}; "
                    f"last report: {report.to_dict()}"
                )
            continue
        divergences = 0
        if cfg.estimator != "exact":
            V_prev = est.solutions

        # Ascent step on nu with the softplus chain rule.
        g = grad * softplus_grad(nu)
        adam_t += 1
        first = b1 * first + (1 - b1) * g
        second = b2 * second + (1 - b2) * g**2
        m_hat = first / (1 - b1**adam_t)
        v_hat = second / (1 - b2**adam_t)
        nu = nu + cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        record.wall_time = time.perf_counter() - start
        records.append(record)
        if callback is not None:
            callback(record)

    final = ModelSpec.from_unconstrained(kernel, nu, model0.mean)
    return Trajectory(records, final)
