"""Parallel Thompson sampling on synthetic random-feature objectives.

Each step draws ``batch`` posterior samples with one batched solve and picks
one acquisition per sample by multi-start gradient ascent on that sample.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .features import PriorSample, draw_prior_samples, feature_input_grad
from .errors import InputError
from .kernels import Matern, ModelSpec
from .pathwise import PosteriorSampleRep, draw_posterior_samples
from .solvers import SolverConfig

__all__ = ["ThompsonConfig", "ThompsonResult", "make_objective", "sample_gradient", "thompson_demo", "random_search", "compare_with_random"]


@dataclass
class ThompsonConfig:
    dims: int = 1
    initial: int = 5
    steps: int = 15
    batch: int = 4
    lengthscale: float = 0.03
    obs_noise: float = 1e-3
    uniform_fraction: float = 0.1
    num_candidates: int = 500
    num_starts: int = 4
    adam_steps: int = 100
    adam_lr: float = 1e-3
    num_features: int = 1000
    solver: str = "cg"
    solver_cfg: SolverConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.dims <= 4:
            raise InputError("the demo supports 1 to 4 input dimensions")
        if self.initial < 1 or self.batch < 1 or self.steps < 0:
            raise InputError("need a non-empty initial design, a positive batch and non-negative steps")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solver_cfg"] = (self.solver_cfg or SolverConfig()).to_dict()
        return d


@dataclass
class ThompsonResult:
    X: np.ndarray
    y: np.ndarray  # noisy observations
    values: np.ndarray  # noiseless objective at X
    best: list[float]  # running maximum after the initial design and each step


def objective_model(cfg: ThompsonConfig) -> ModelSpec:
    return ModelSpec(Matern(1.5, cfg.dims), np.full(cfg.dims, cfg.lengthscale), cfg.obs_noise)


def make_objective(cfg: ThompsonConfig, seed: int) -> PriorSample:
    """A single Matern-3/2 prior draw on [0, 1]^d."""
    model = objective_model(cfg)
    return draw_prior_samples(model, 1, 4000, seed, input_dim=cfg.dims)


def sample_gradient(samples: PosteriorSampleRep, Xs) -> np.ndarray:
    """d f_j(x_i)/dx_i for every sample j: shape (n*, s, d); needs a feature prior."""
    model = samples.model
    prior = samples.prior
    dphi = feature_input_grad(prior.features, Xs)  # (n*, D, d)
    prior_grad = np.einsum("nDd,Ds->nsd", dphi, prior.weights)
    dk = model.kernel.input_grad(model.kernel_params, Xs, samples.X)  # (n*, n, d)
    return prior_grad + np.einsum("nmd,ms->nsd", dk, samples.weights)


def _candidates(rng, X, y, num, dims, uniform_fraction, spread):
    n_uniform = max(1, int(round(uniform_fraction * num)))
    uniform = rng.uniform(0.0, 1.0, (n_uniform, dims))
    z = (y - y.mean()) / (y.std() if y.std() > 0 else 1.0)
    w = np.exp(z - z.max())
    idx = rng.choice(X.shape[0], num - n_uniform, p=w / w.sum())
    nearby = np.clip(X[idx] + spread * rng.standard_normal((num - n_uniform, dims)), 0.0, 1.0)
    return np.vstack([uniform, nearby])


def _maximize(samples: PosteriorSampleRep, starts, lr, steps):
    """Adam ascent of each sample from its own (k, d) starting points."""
    s, k, d = starts.shape
    x = starts.reshape(s * k, d).copy()
    owner = np.repeat(np.arange(s), k)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, steps + 1):
        g = sample_gradient(samples, x)[np.arange(s * k), owner]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        x = np.clip(x + lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps), 0.0, 1.0)
    vals = samples(x)[np.arange(s * k), owner].reshape(s, k)
    best = vals.argmax(axis=1)
    return x.reshape(s, k, d)[np.arange(s), best]


def thompson_demo(cfg: ThompsonConfig, objective: PriorSample | None = None) -> ThompsonResult:
    rng = np.random.default_rng(cfg.seed)
    f = objective if objective is not None else make_objective(cfg, cfg.seed)
    model = objective_model(cfg)
    X = rng.uniform(0.0, 1.0, (cfg.initial, cfg.dims))
    values = f(X)[:, 0]
    y = values + cfg.obs_noise * rng.standard_normal(values.shape)
    best = [float(values.max())]
    solver_cfg = cfg.solver_cfg or SolverConfig(tol=1e-6)
    for step in range(cfg.steps):
        samples = draw_posterior_samples(
            model, X, y, cfg.batch, cfg.solver, solver_cfg, rng, "rff", cfg.num_features
        )
        cands = np.stack(
            [
                _candidates(rng, X, y, cfg.num_candidates, cfg.dims, cfg.uniform_fraction, cfg.lengthscale / 2)
                for _ in range(cfg.batch)
            ]
        )
        flat = cands.reshape(-1, cfg.dims)
        vals = samples(flat).reshape(cfg.batch, cfg.num_candidates, cfg.batch)
        own = vals[np.arange(cfg.batch), :, np.arange(cfg.batch)]  # sample j on its own candidates
        top = np.argsort(own, axis=1)[:, -cfg.num_starts:]
        starts = cands[np.arange(cfg.batch)[:, None], top]
        new = _maximize(samples, starts, cfg.adam_lr, cfg.adam_steps)
        new_vals = f(new)[:, 0]
        X = np.vstack([X, new])
        values = np.concatenate([values, new_vals])
        y = np.concatenate([y, new_vals + cfg.obs_noise * rng.standard_normal(new_vals.shape)])
        best.append(float(values.max()))
    return ThompsonResult(X, y, values, best)


def random_search(cfg: ThompsonConfig, objective: PriorSample | None = None) -> ThompsonResult:
    """Uniform search with the same number of evaluations as the Thompson run."""
    rng = np.random.default_rng(cfg.seed)
    f = objective if objective is not None else make_objective(cfg, cfg.seed)
    X = rng.uniform(0.0, 1.0, (cfg.initial, cfg.dims))
    values = f(X)[:, 0]
    best = [float(values.max())]
    for _ in range(cfg.steps):
        new = rng.uniform(0.0, 1.0, (cfg.batch, cfg.dims))
        X = np.vstack([X, new])
        values = np.concatenate([values, f(new)[:, 0]])
        best.append(max(best[-1], float(values[-cfg.batch:].max())))
    return ThompsonResult(X, values + cfg.obs_noise * rng.standard_normal(values.shape), values, best)


def compare_with_random(cfg: ThompsonConfig, seeds, random_repeats: int = 10) -> list[dict]:
    """Final maxima of Thompson sampling and of random search on shared objectives.

    The random baseline is averaged over ``random_repeats`` independent runs
    per objective so that the paired difference mostly reflects the objective.
    """
    rows = []
    for seed in seeds:
        run_cfg = replace(cfg, seed=int(seed))
        f = make_objective(run_cfg, int(seed))
        ts = thompson_demo(run_cfg, f)
        rs = [random_search(replace(run_cfg, seed=int(seed) * 1000 + r), f).best[-1] for r in range(random_repeats)]
        rows.append({"seed": int(seed), "thompson": ts.best[-1], "random": float(np.mean(rs)), "history": ts.best})
    return rows
