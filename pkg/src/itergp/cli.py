"""Command-line front end.

Every run writes ``config.json`` (the resolved arguments) into its output
directory; passing it back with ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, Standardizer, evaluate, ingest
from .errors import InputError, NumericalError, UnsupportedKernelError
from .kernels import Matern, ModelSpec, Scaled, SquaredExponential, model_from_dict, model_to_dict
from .kron import bench_mvm, break_even, empirical_crossover
from .mll import OuterConfig, optimize
from .pathwise import draw_posterior_samples, predictive_moments
from .solvers import METHODS, KernelOperator, SolverConfig, solve_system
from .thompson import ThompsonConfig, compare_with_random

log = logging.getLogger("itergp")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
KERNELS = {
    "se": lambda d: SquaredExponential(d),
    "matern12": lambda d: Matern(0.5, d),
    "matern32": lambda d: Matern(1.5, d),
    "matern52": lambda d: Matern(2.5, d),
}


# ---------------------------------------------------------------------------
# Argument groups
# ---------------------------------------------------------------------------


def _solver_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inner solver")
    g.add_argument("--solver", choices=METHODS, default="cg")
    g.add_argument("--tol", type=float, default=0.01)
    g.add_argument("--max-epochs", type=float, default=None)
    g.add_argument("--block-size", type=int, default=1000)
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--step", type=float, default=None)
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--avg-r", type=float, default=None)
    g.add_argument("--precond-rank", type=int, default=0)


def _data_args(p: argparse.ArgumentParser) -> None:
    # Required flags are checked after --config defaults are applied.
    g = p.add_argument_group("data")
    g.add_argument("--data", default=None, help="CSV file with a header row")
    g.add_argument("--target", default="y", help="name of the target column")
    g.add_argument("--train-fraction", type=float, default=0.9)
    g.add_argument("--split-seed", type=int, default=0)


def _common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="config.json from an earlier run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="itergp", description="Iterative Gaussian-process regression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="optimize hyperparameters and report test metrics")
    _common_args(fit)
    _data_args(fit)
    fit.add_argument("--model", default=None, help="initial model JSON (default: scaled kernel with ARD)")
    fit.add_argument("--kernel", choices=sorted(KERNELS), default="se")
    fit.add_argument("--estimator", choices=["standard", "pathwise", "exact"], default="pathwise")
    fit.add_argument("--warm-start", action="store_true")
    fit.add_argument("--probes", type=int, default=64)
    fit.add_argument("--outer-steps", type=int, default=100)
    fit.add_argument("--outer-lr", type=float, default=0.1)
    fit.add_argument("--rff-features", type=int, default=2000)
    fit.add_argument("--num-samples", type=int, default=64)
    _solver_args(fit)
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="predictive moments and metrics on the test split")
    _common_args(pred)
    _data_args(pred)
    pred.add_argument("--model", default=None, help="model JSON written by fit (required)")
    pred.add_argument("--num-samples", type=int, default=64)
    pred.add_argument("--rff-features", type=int, default=2000)
    _solver_args(pred)
    pred.set_defaults(func=cmd_predict)

    samp = sub.add_parser("sample", help="posterior sample paths on a grid")
    _common_args(samp)
    _data_args(samp)
    samp.add_argument("--model", default=None, help="model JSON written by fit (required)")
    samp.add_argument("--num-samples", type=int, default=64)
    samp.add_argument("--rff-features", type=int, default=2000)
    samp.add_argument("--grid-points", type=int, default=200, help="points per axis of the (standardized) grid")
    samp.add_argument("--grid-range", type=float, nargs=2, default=[-3.0, 3.0])
    _solver_args(samp)
    samp.set_defaults(func=cmd_sample)

    cmp_ = sub.add_parser("solver-compare", help="run several solvers on one system")
    _common_args(cmp_)
    _data_args(cmp_)
    cmp_.add_argument("--model", default=None)
    cmp_.add_argument("--n", type=int, default=256, help="size of the synthetic problem without --data")
    cmp_.add_argument("--noise", type=float, default=0.1, help="noise scale of the synthetic problem")
    cmp_.add_argument("--solvers", nargs="+", choices=METHODS, default=["cg", "ap", "sdd", "sgd"])
    cmp_.add_argument("--probes", type=int, default=0, help="extra Gaussian right-hand sides")
    _solver_args(cmp_)
    cmp_.set_defaults(func=cmd_solver_compare)

    bench = sub.add_parser("bench-mvm", help="dense versus latent Kronecker product costs")
    _common_args(bench)
    bench.add_argument("--p", type=int, required=True)
    bench.add_argument("--q", type=int, required=True)
    bench.add_argument("--gammas", type=float, nargs="+", default=None, help="missing ratios (default 0..0.99)")
    bench.add_argument("--no-execute", action="store_true", help="use closed-form counts only")
    bench.set_defaults(func=cmd_bench_mvm)

    ts = sub.add_parser("thompson-demo", help="Thompson sampling against random search")
    _common_args(ts)
    ts.add_argument("--seeds", type=int, default=10)
    ts.add_argument("--dims", type=int, default=1)
    ts.add_argument("--initial", type=int, default=5)
    ts.add_argument("--steps", type=int, default=15)
    ts.add_argument("--batch", type=int, default=4)
    ts.add_argument("--lengthscale", type=float, default=0.03)
    ts.add_argument("--candidates", type=int, default=500)
    ts.add_argument("--starts", type=int, default=4)
    ts.add_argument("--random-repeats", type=int, default=10)
    ts.add_argument("--rff-features", type=int, default=1000)
    _solver_args(ts)
    ts.set_defaults(func=cmd_thompson, tol=1e-6)
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def solver_config(args) -> SolverConfig:
    return SolverConfig(
        tol=args.tol,
        max_epochs=args.max_epochs,
        block_size=args.block_size,
        batch_size=args.batch_size,
        step=args.step,
        momentum=args.momentum,
        avg_r=args.avg_r,
        precond_rank=args.precond_rank,
        seed=args.seed,
    )


def default_model(dims: int, kernel: str = "se") -> ModelSpec:
    base = KERNELS[kernel](dims)
    return ModelSpec(Scaled(base), np.ones(1 + dims), 0.5)


def load_model(path) -> tuple[ModelSpec, Standardizer | None]:
    if not path:
        raise InputError("--model is required")
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from exc
    stats = Standardizer.from_dict(d["standardizer"]) if "standardizer" in d else None
    return model_from_dict(d), stats


def save_model(path: Path, model: ModelSpec, stats: Standardizer | None) -> None:
    d = model_to_dict(model)
    if stats is not None:
        d["standardizer"] = stats.to_dict()
    _write_json(path, d)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _datasets(args) -> tuple[Dataset, Dataset]:
    if not args.data:
        raise InputError("--data is required")
    return ingest(args.data, args.target, args.train_fraction, args.split_seed)


def _predict(model, train: Dataset, Xs, args):
    samples = draw_posterior_samples(
        model, train.X, train.y, args.num_samples, args.solver, solver_config(args), args.seed,
        num_features=args.rff_features,
    )
    mean, var = predictive_moments(samples(Xs), model.noise_var)
    return samples, mean, var


def _metrics(model, train, test, args) -> dict:
    if test.n == 0:
        return {"rmse": None, "nll": None, "n": 0}
    _, mean, var = _predict(model, train, test.X, args)
    metrics = evaluate(test.y, mean, var)
    if test.stats is not None:
        # Same predictions on the original target scale.
        s = test.stats.y_std
        raw = evaluate(test.stats.inverse_y(test.y), test.stats.inverse_y(mean), var * s**2)
        metrics["raw"] = raw
    return metrics


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args, out: Path) -> dict:
    train, test = _datasets(args)
    if args.model:
        model, _ = load_model(args.model)
    else:
        model = default_model(train.X.shape[1], args.kernel)
    model.kernel.check_inputs(train.X)
    outer = OuterConfig(
        steps=args.outer_steps,
        lr=args.outer_lr,
        estimator=args.estimator,
        num_probes=args.probes,
        warm_start=args.warm_start,
        solver=args.solver,
        solver_cfg=solver_config(args).replace(criterion="split"),
        num_features=args.rff_features,
        seed=args.seed,
    )
    def progress(rec):
        log.info("step %d theta=%s epochs=%.2f", rec.step, np.round(rec.theta, 4).tolist(), rec.epochs)

    traj = optimize(model, train.X, train.y, outer, callback=progress)
    with (out / "trajectory.jsonl").open("w") as fh:
        for rec in traj.records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    save_model(out / "model.json", traj.model, train.stats)
    metrics = _metrics(traj.model, train, test, args)
    metrics.update(total_iterations=traj.total_iterations, total_epochs=traj.total_epochs)
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_predict(args, out: Path) -> dict:
    model, _ = load_model(args.model)
    train, test = _datasets(args)
    model.kernel.check_inputs(train.X)
    metrics = _metrics(model, train, test, args)
    if test.n:
        _, mean, var = _predict(model, train, test.X, args)
        _write_csv(out / "predictions.csv", ["y", "mean", "variance"], zip(test.y, mean, var))
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_sample(args, out: Path) -> dict:
    model, _ = load_model(args.model)
    train, _ = _datasets(args)
    model.kernel.check_inputs(train.X)
    d = train.X.shape[1]
    if args.grid_points < 1 or args.grid_points**d > 1_000_000:
        raise InputError("grid must have between 1 and 1e6 points")
    axis = np.linspace(args.grid_range[0], args.grid_range[1], args.grid_points)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    samples, _, _ = _predict(model, train, grid[:1], args)
    values = samples(grid)
    header = [f"x{i}" for i in range(d)] + [f"sample_{j}" for j in range(values.shape[1])]
    _write_csv(out / "samples.csv", header, np.hstack([grid, values]).tolist())
    summary = {"grid_points": int(grid.shape[0]), "num_samples": int(values.shape[1])}
    _write_json(out / "metrics.json", summary)
    return summary


def cmd_solver_compare(args, out: Path) -> dict:
    if args.data:
        train, _ = _datasets(args)
        X, y = train.X, train.y
    else:
        rng = np.random.default_rng(args.seed)
        X = rng.uniform(-3, 3, (args.n, 1))
        y = np.sin(2 * X[:, 0]) + args.noise * rng.standard_normal(args.n)
    if args.model:
        model, _ = load_model(args.model)
    else:
        model = ModelSpec(Matern(1.5, X.shape[1]), np.ones(X.shape[1]), args.noise)
    model.kernel.check_inputs(X)
    rng = np.random.default_rng(args.seed + 1)
    B = np.hstack([y[:, None], rng.standard_normal((X.shape[0], args.probes))])
    reference = None
    if X.shape[0] <= 4096:
        reference, _ = solve_system("exact", KernelOperator(model, X), B)
    rows = []
    for method in args.solvers:
        op = KernelOperator(model, X)
        V, report = solve_system(method, op, B, solver_config(args))
        err = None
        if reference is not None:
            err = float(np.max(np.linalg.norm(V - reference, axis=0) / np.linalg.norm(reference, axis=0)))
        rows.append([method, report.iterations, report.epochs, float(report.residuals.max()),
                     err if err is not None else "", report.termination, report.wall_time])
        log.info("%s: %s", method, report.termination)
    _write_csv(out / "solvers.csv",
               ["solver", "iterations", "epochs", "max_residual", "max_relative_error", "termination", "wall_time"],
               rows)
    return {r[0]: {"iterations": r[1], "epochs": r[2], "termination": r[5]} for r in rows}


def cmd_bench_mvm(args, out: Path) -> dict:
    rows = bench_mvm(args.p, args.q, args.gammas, args.seed, execute=not args.no_execute)
    keys = ["gamma", "n", "dense_flops", "latent_flops", "dense_bytes", "latent_bytes", "latent_faster", "latent_smaller"]
    _write_csv(out / "bench_mvm.csv", keys, ([r[k] for k in keys] for r in rows))
    t, m = break_even(args.p, args.q)
    summary = {
        "break_even_time": t,
        "break_even_mem": m,
        "crossover_time": empirical_crossover(rows, "latent_faster"),
        "crossover_mem": empirical_crossover(rows, "latent_smaller"),
    }
    _write_json(out / "metrics.json", summary)
    return summary


def cmd_thompson(args, out: Path) -> dict:
    cfg = ThompsonConfig(
        dims=args.dims,
        initial=args.initial,
        steps=args.steps,
        batch=args.batch,
        lengthscale=args.lengthscale,
        num_candidates=args.candidates,
        num_starts=args.starts,
        num_features=args.rff_features,
        solver=args.solver,
        solver_cfg=solver_config(args),
    )
    rows = compare_with_random(cfg, range(args.seed, args.seed + args.seeds), args.random_repeats)
    with (out / "thompson.jsonl").open("w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    diff = np.array([r["thompson"] - r["random"] for r in rows])
    se = float(diff.std(ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else float("nan")
    summary = {
        "thompson_mean": float(np.mean([r["thompson"] for r in rows])),
        "random_mean": float(np.mean([r["random"] for r in rows])),
        "mean_difference": float(diff.mean()),
        "difference_se": se,
    }
    _write_json(out / "metrics.json", summary)
    return summary


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_NOT_CONFIG = {"func", "config", "out", "verbose", "command"}


def _resolve(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        saved = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from exc
    if saved.get("command") != args.command:
        raise InputError(f"config is for {saved.get('command')!r}, not {args.command!r}")
    # Saved values become defaults; flags given on this command line still win.
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k: v for k, v in saved.items() if k not in _NOT_CONFIG})
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _resolve(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        config = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG - {"command"}}
        _write_json(out / "config.json", config)
        start = time.perf_counter()
        summary = args.func(args, out)
        log.info("done in %.1fs", time.perf_counter() - start)
        print(json.dumps(summary, sort_keys=True, default=str))
        return EXIT_OK
    except (InputError, UnsupportedKernelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
