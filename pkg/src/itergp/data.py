"""CSV ingestion, train/test splitting, standardization and test metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .pathwise import gaussian_nll

__all__ = ["Standardizer", "Dataset", "read_csv", "ingest", "split_arrays", "evaluate"]


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, X, y) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        x_std = X.std(axis=0)
        y_std = float(y.std())
        # Constant columns are centred but left unscaled.
        return cls(X.mean(axis=0), np.where(x_std > 0, x_std, 1.0), float(y.mean()), y_std if y_std > 0 else 1.0)

    def transform_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_y(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["x_mean"], float), np.asarray(d["x_std"], float), float(d["y_mean"]), float(d["y_std"]))


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    stats: Standardizer | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]


def read_csv(path, target: str, columns: list[str] | None = None) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read a headed numeric CSV into (X, y, feature names)."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise InputError(f"{path} has no data rows")
    header = [h.strip() for h in rows[0]]
    if target not in header:
        raise InputError(f"target column {target!r} not found in {header}")
    features = columns if columns is not None else [h for h in header if h != target]
    missing = [c for c in features if c not in header]
    if missing:
        raise InputError(f"columns {missing} not found in {header}")
    if any(len(r) != len(header) for r in rows[1:]):
        raise InputError(f"{path} has rows of unequal length")
    try:
        data = np.array([[float(cell) for cell in r] for r in rows[1:]])
    except ValueError as exc:
        raise InputError(f"{path} contains a non-numeric cell: {exc}") from exc
    if not np.all(np.isfinite(data)):
        raise InputError(f"{path} contains NaN or infinite values")
    X = data[:, [header.index(c) for c in features]]
    return X, data[:, header.index(target)], features


def split_arrays(X, y, train_fraction: float = 0.9, seed: int = 0, standardize: bool = True,
                 provenance: dict | None = None) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; standardization statistics come from the train part only."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not 0 < train_fraction <= 1:
        raise InputError("train fraction must lie in (0, 1]")
    n = X.shape[0]
    n_train = int(round(train_fraction * n))
    if n_train < 1:
        raise InputError("split leaves no training data")
    perm = np.random.default_rng(seed).permutation(n)
    tr, te = perm[:n_train], perm[n_train:]
    prov = dict(provenance or {}, split_seed=seed, train_fraction=train_fraction)
    stats = Standardizer.fit(X[tr], y[tr]) if standardize else None
    if stats is None:
        return Dataset(X[tr], y[tr], None, prov), Dataset(X[te], y[te], None, prov)
    train = Dataset(stats.transform_x(X[tr]), stats.transform_y(y[tr]), stats, prov)
    test = Dataset(stats.transform_x(X[te]), stats.transform_y(y[te]), stats, prov)
    return train, test


def ingest(path, target: str, train_fraction: float = 0.9, seed: int = 0,
           standardize: bool = True) -> tuple[Dataset, Dataset]:
    X, y, features = read_csv(path, target)
    return split_arrays(X, y, train_fraction, seed, standardize,
                        {"path": str(path), "target": target, "features": features})


def evaluate(y, mean, var) -> dict:
    """RMSE and average Gaussian NLL of predictive moments on (standardized) targets."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if y.size == 0:
        return {"rmse": float("nan"), "nll": float("nan"), "n": 0}
    if np.any(var <= 0):
        raise InputError("predictive variances must be positive")
    return {
        "rmse": float(np.sqrt(np.mean((y - mean) ** 2))),
        "nll": gaussian_nll(y, mean, var),
        "n": int(y.size),
    }
