import csv
import json
import math

import numpy as np
import pytest

from itergp import InputError
from itergp.cli import main
from itergp.data import Standardizer, evaluate, ingest, read_csv, split_arrays
from itergp.thompson import ThompsonConfig, random_search, thompson_demo


def write_csv(path, X, y, names=None):
    names = names or [f"x{i}" for i in range(X.shape[1])]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["y"])
        for row, t in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
    return path


@pytest.fixture
def dataset(tmp_path):
    r = np.random.default_rng(0)
    X = r.uniform(-2, 2, (60, 2))
    y = 3.0 + 2.0 * np.sin(X[:, 0]) + 0.5 * X[:, 1] + 0.1 * r.standard_normal(60)
    return write_csv(tmp_path / "data.csv", X, y)


def test_ingest_ten_rows(tmp_path):
    path = write_csv(tmp_path / "ten.csv", np.arange(20.0).reshape(10, 2), np.arange(10.0))
    train, test = ingest(path, "y", 0.9, seed=3)
    assert train.n == 9 and test.n == 1
    again, _ = ingest(path, "y", 0.9, seed=3)
    np.testing.assert_array_equal(train.X, again.X)
    np.testing.assert_array_equal(train.y, again.y)
    assert train.provenance["split_seed"] == 3 and train.provenance["path"] == str(path)


def test_standardized_train_targets(dataset):
    train, test = ingest(dataset, "y", 0.9, seed=1)
    assert abs(train.y.mean()) <= 1e-10 and abs(train.y.std() - 1) <= 1e-10
    np.testing.assert_allclose(train.X.mean(axis=0), 0, atol=1e-10)
    raw_X, raw_y, _ = read_csv(dataset, "y")
    # Test rows use the train statistics, so mapping back recovers raw values.
    back = test.stats.inverse_y(test.y)
    assert np.all(np.isin(np.round(back, 10), np.round(raw_y, 10)))


def test_constant_column_left_unscaled():
    s = Standardizer.fit(np.array([[1.0, 5.0], [2.0, 5.0]]), np.array([1.0, 1.0]))
    np.testing.assert_array_equal(s.x_std, [0.5, 1.0])
    assert s.y_std == 1.0
    back = Standardizer.from_dict(json.loads(json.dumps(s.to_dict())))
    np.testing.assert_array_equal(back.x_mean, s.x_mean)
    np.testing.assert_array_equal(back.x_std, s.x_std)


@pytest.mark.parametrize(
    "content, match",
    [
        ("", "no data rows"),
        ("a,y\n", "no data rows"),
        ("a,b\n1,2\n", "target column"),
        ("a,y\n1,oops\n", "non-numeric"),
        ("a,y\n1,nan\n", "NaN"),
        ("a,y\n1,2\n3\n", "unequal"),
    ],
)
def test_ingest_errors(tmp_path, content, match):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(InputError, match=match):
        ingest(path, "y")


def test_ingest_missing_file(tmp_path):
    with pytest.raises(InputError):
        ingest(tmp_path / "nope.csv", "y")


def test_split_fraction_bounds():
    with pytest.raises(InputError):
        split_arrays(np.zeros((4, 1)), np.zeros(4), 0.0)
    train, test = split_arrays(np.zeros((4, 1)), np.arange(4.0), 1.0, standardize=False)
    assert train.n == 4 and test.n == 0 and train.stats is None


def test_evaluate_perfect_predictions():
    m = evaluate([1.0, -2.0], [1.0, -2.0], [1.0, 1.0])
    assert m["rmse"] == 0.0
    assert m["nll"] == pytest.approx(0.918939, abs=1e-6)


def test_evaluate_zero_predictor_on_standardized_targets():
    r = np.random.default_rng(2)
    y = r.standard_normal(1000)
    y = (y - y.mean()) / y.std()
    assert evaluate(y, np.zeros(1000), np.ones(1000))["rmse"] == pytest.approx(1.0, abs=1e-12)


def test_evaluate_matches_loop():
    r = np.random.default_rng(3)
    y, mu, var = r.standard_normal(100), r.standard_normal(100), r.uniform(0.1, 2, 100)
    sq = 0.0
    nll = 0.0
    for a, b, v in zip(y, mu, var):
        sq += (a - b) ** 2
        nll += 0.5 * math.log(2 * math.pi * v) + 0.5 * (a - b) ** 2 / v
    m = evaluate(y, mu, var)
    assert m["rmse"] == pytest.approx(math.sqrt(sq / 100), rel=1e-12)
    assert m["nll"] == pytest.approx(nll / 100, rel=1e-12)
    with pytest.raises(InputError):
        evaluate([0.0], [0.0], [0.0])


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fit_predict_sample_round_trip(dataset, tmp_path, capsys):
    fit_dir = tmp_path / "fit"
    code, out, _ = run(["fit", "--data", dataset, "--out", fit_dir, "--outer-steps", 5, "--probes", 4,
                        "--rff-features", 200, "--num-samples", 16, "--tol", 1e-4], capsys)
    assert code == 0
    metrics = json.loads(out)
    assert metrics["n"] == 6 and metrics["rmse"] < 1.0
    for name in ["config.json", "model.json", "metrics.json", "trajectory.jsonl"]:
        assert (fit_dir / name).exists()
    lines = (fit_dir / "trajectory.jsonl").read_text().splitlines()
    assert len(lines) == 5 and "theta" in json.loads(lines[0])

    pred_dir = tmp_path / "pred"
    code, out, _ = run(["predict", "--data", dataset, "--model", fit_dir / "model.json", "--out", pred_dir,
                        "--num-samples", 16, "--rff-features", 200], capsys)
    assert code == 0
    rows = list(csv.reader((pred_dir / "predictions.csv").open()))
    assert rows[0] == ["y", "mean", "variance"] and len(rows) == 7

    samp_dir = tmp_path / "samp"
    code, out, _ = run(["sample", "--data", dataset, "--model", fit_dir / "model.json", "--out", samp_dir,
                        "--num-samples", 3, "--grid-points", 5, "--rff-features", 200], capsys)
    assert code == 0
    rows = list(csv.reader((samp_dir / "samples.csv").open()))
    assert rows[0] == ["x0", "x1", "sample_0", "sample_1", "sample_2"] and len(rows) == 26


def test_config_replay_reproduces_metrics(dataset, tmp_path, capsys):
    first = tmp_path / "a"
    argv = ["fit", "--data", dataset, "--out", first, "--outer-steps", 3, "--probes", 4,
            "--rff-features", 100, "--num-samples", 8, "--seed", 7, "--warm-start"]
    assert run(argv, capsys)[0] == 0
    second = tmp_path / "b"
    assert run(["fit", "--config", first / "config.json", "--out", second], capsys)[0] == 0
    assert (first / "metrics.json").read_bytes() == (second / "metrics.json").read_bytes()
    assert (first / "model.json").read_bytes() == (second / "model.json").read_bytes()
    cfg = json.loads((second / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["warm_start"] is True


def test_config_for_other_command_rejected(dataset, tmp_path, capsys):
    out = tmp_path / "bench"
    assert run(["bench-mvm", "--p", 3, "--q", 3, "--out", out], capsys)[0] == 0
    code, _, err = run(["fit", "--config", out / "config.json", "--out", tmp_path / "x"], capsys)
    assert code == 2 and "bench-mvm" in err


def test_solver_compare(tmp_path, capsys):
    out = tmp_path / "cmp"
    code, stdout, _ = run(["solver-compare", "--n", 32, "--solvers", "cg", "ap", "exact", "--tol", 1e-8,
                           "--block-size", 8, "--probes", 2, "--out", out], capsys)
    assert code == 0
    summary = json.loads(stdout)
    assert set(summary) == {"cg", "ap", "exact"}
    rows = {r["solver"]: r for r in csv.DictReader((out / "solvers.csv").open())}
    assert float(rows["cg"]["max_relative_error"]) <= 1e-6
    assert float(rows["exact"]["max_relative_error"]) <= 1e-12
    # Block projections are slow at this tolerance; the run must report its budget honestly.
    assert rows["ap"]["termination"] in {"tolerance", "budget"}
    assert float(rows["ap"]["max_relative_error"]) <= 1e-2


def test_bench_mvm_command(tmp_path, capsys):
    out = tmp_path / "bench"
    code, stdout, _ = run(["bench-mvm", "--p", 100, "--q", 100, "--no-execute", "--out", out], capsys)
    assert code == 0
    summary = json.loads(stdout)
    assert summary["break_even_time"] == pytest.approx(1 - math.sqrt(0.02), abs=1e-12)
    assert abs(summary["crossover_time"] - summary["break_even_time"]) <= 0.05
    assert (out / "bench_mvm.csv").exists()


def test_exit_code_for_input_errors(tmp_path, capsys):
    code, _, err = run(["fit", "--data", tmp_path / "missing.csv", "--out", tmp_path / "o"], capsys)
    assert code == 2 and err.startswith("error:")
    code, _, _ = run(["predict", "--data", tmp_path / "missing.csv", "--out", tmp_path / "o"], capsys)
    assert code == 2


def test_exit_code_for_numerical_failure(dataset, tmp_path, capsys):
    fit_dir = tmp_path / "fit"
    run(["fit", "--data", dataset, "--out", fit_dir, "--outer-steps", 0], capsys)
    code, _, err = run(["predict", "--data", dataset, "--model", fit_dir / "model.json", "--out", tmp_path / "p",
                        "--solver", "sdd", "--step", 1e4, "--batch-size", 4, "--num-samples", 2], capsys)
    assert code == 3 and err.startswith("numerical failure")


def test_argparse_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--solver", "lu"])
    assert exc.value.code == 2


def test_thompson_initial_design_only():
    cfg = ThompsonConfig(initial=6, steps=0, batch=1)
    res = thompson_demo(cfg)
    assert res.best == [float(res.values.max())]
    assert res.X.shape == (6, 1)


def test_thompson_running_max_non_decreasing():
    cfg = ThompsonConfig(steps=3, batch=2, num_candidates=50, num_starts=2, adam_steps=10, num_features=300, seed=4)
    res = thompson_demo(cfg)
    assert len(res.best) == 4 and np.all(np.diff(res.best) >= 0)
    assert res.X.shape == (5 + 6, 1)
    assert np.all((res.X >= 0) & (res.X <= 1))
    base = random_search(cfg)
    assert base.X.shape == res.X.shape and np.all(np.diff(base.best) >= 0)


def test_thompson_config_validation():
    with pytest.raises(InputError):
        ThompsonConfig(dims=5)
    with pytest.raises(InputError):
        ThompsonConfig(batch=0)


def test_thompson_command(tmp_path, capsys):
    code, stdout, _ = run(["thompson-demo", "--seeds", 2, "--steps", 2, "--batch", 2, "--candidates", 40,
                           "--starts", 2, "--random-repeats", 2, "--rff-features", 200, "--out", tmp_path / "ts"],
                          capsys)
    assert code == 0
    assert {"thompson_mean", "random_mean", "mean_difference", "difference_se"} <= set(json.loads(stdout))
    assert len((tmp_path / "ts" / "thompson.jsonl").read_text().splitlines()) == 2
