import numpy as np
import pytest

from itergp import Matern, ModelSpec, Periodic, Scaled, SquaredExponential
from itergp.kernels import Product


def se_model(dims=1, lengthscale=1.0, signal=1.0, noise=0.1, mean=0.0):
    ls = np.broadcast_to(np.asarray(lengthscale, dtype=float), (dims,))
    return ModelSpec(Scaled(SquaredExponential(dims)), np.concatenate([[signal], ls]), noise, mean)


def matern_model(nu=1.5, dims=1, lengthscale=1.0, noise=0.1):
    return ModelSpec(Matern(nu, dims), np.full(dims, lengthscale), noise)


def all_models(dims=2):
    """One model per kernel family, all on ``dims`` inputs."""
    return {
        "se": se_model(dims, 0.8, 1.3, 0.2),
        "matern12": ModelSpec(Matern(0.5, dims), np.full(dims, 0.9), 0.2),
        "matern32": ModelSpec(Matern(1.5, dims), np.linspace(0.6, 1.1, dims), 0.3),
        "matern52": ModelSpec(Matern(2.5, dims), np.full(dims, 1.2), 0.25),
        "periodic": ModelSpec(Periodic(dims), [0.9, 1.7], 0.2),
        "product": ModelSpec(Product([SquaredExponential([0]), Matern(1.5, [1])]), [0.7, 1.1], 0.2),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd_problem(rng, n, noise_var, lengthscale=None):
    """Sorted 1-D Matern-3/2 inputs; the noise sweep controls the condition number."""
    X = np.sort(rng.uniform(0, n / 8, n))[:, None]
    model = ModelSpec(Matern(1.5, 1), [lengthscale or 1.0], np.sqrt(noise_var))
    b = rng.standard_normal(n)
    return model, X, b


_acceptance_lines: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title}" + (f" [{detail}]" if detail else "")
        _acceptance_lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
