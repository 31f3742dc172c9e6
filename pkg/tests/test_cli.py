import csv
import json

import pytest

from relukan.cli import BENCH_COLUMNS, main


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fit_outputs(tmp_path):
    out = tmp_path / "fit"
    assert main(["fit", "--function", "f1", "--model", "relukan1,relukan2", "--seeds", "1,2",
                 "--iters", "20", "--samples", "100", "--out", str(out)]) == 0
    summary = rows(out / "summary.csv")
    assert [(r["model"], r["seed"]) for r in summary] == [
        ("relukan1", "1"), ("relukan1", "2"), ("relukan2", "1"), ("relukan2", "2")]
    assert set(summary[0]) == {"model", "seed", "final_train_mse", "final_test_mse", "seconds"}
    medians = rows(out / "summary_median.csv")
    assert [r["model"] for r in medians] == ["relukan1", "relukan2"]
    curve = rows(out / "runs" / "f1_relukan2_seed1_curve.csv")
    assert list(curve[0]) == ["x", "target", "prediction"] and len(curve) == 200
    meta = json.loads((out / "runs" / "f1_relukan2_seed1.json").read_text())
    assert meta["config"]["model"] == "relukan2" and meta["config"]["iterations"] == 20


def test_fit_scatter_for_multivariate(tmp_path):
    assert main(["fit", "--function", "f4", "--model", "bspline", "--seeds", "1", "--iters", "3",
                 "--samples", "50", "--out", str(tmp_path)]) == 0
    scatter = rows(tmp_path / "runs" / "f4_bspline_seed1_scatter.csv")
    assert list(scatter[0]) == ["target", "prediction"] and len(scatter) == 1000


def test_fit_zero_iterations(tmp_path):
    assert main(["fit", "--seeds", "1", "--iters", "0", "--samples", "20", "--out", str(tmp_path)]) == 0
    loss = (tmp_path / "runs" / "f1_relukan2_seed1.csv").read_text().splitlines()
    assert loss == ["iter,loss,seconds"]
    assert float(rows(tmp_path / "summary.csv")[0]["final_test_mse"]) > 0


def test_fit_parallel_matches_serial(tmp_path):
    args = ["fit", "--function", "f4", "--seeds", "1,2", "--iters", "5", "--samples", "50"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--jobs", "2", "--out", str(tmp_path / "b")]) == 0
    strip = lambda rs: [(r["model"], r["seed"], r["final_test_mse"]) for r in rs]
    assert strip(rows(tmp_path / "a" / "summary.csv")) == strip(rows(tmp_path / "b" / "summary.csv"))


@pytest.mark.parametrize("argv", [
    ["fit", "--function", "f4", "--widths", "1,1"],
    ["fit", "--function", "f1", "--widths", "1,2"],
    ["fit", "--function", "nope"],
    ["fit", "--model", "mlp"],
    ["fit", "--widths", "a,b"],
    ["fit", "--lr", "0"],
    ["fit", "--iters", "-1"],
    ["bench", "--iters", "5"],
    ["forget", "--function", "f4"],
    ["forget", "--model", "relukan1,relukan2"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(tmp_path, argv):
    with pytest.raises(SystemExit) as info:
        raise SystemExit(main(argv + ["--out", str(tmp_path / "x")]))
    assert info.value.code == 1
    assert not (tmp_path / "x" / "summary.csv").exists()


def test_missing_out_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["fit"])
    assert info.value.code == 1


def test_bench_outputs(tmp_path):
    assert main(["bench", "--function", "f2", "--iters", "30", "--samples", "200", "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "bench.csv")
    assert list(table[0]) == BENCH_COLUMNS
    assert [r["model"] for r in table] == ["relukan1", "relukan2", "bspline"]
    assert table[2]["ratio_bspline_over_model"] == "1.000"
    meta = json.loads((tmp_path / "bench.json").read_text())
    assert meta["device"] == "cpu" and meta["warmup_iterations_discarded"] == 10
    assert len(rows(tmp_path / "runs" / "f2_relukan2.csv")) == 30


def test_forget_outputs(tmp_path):
    assert main(["forget", "--iters", "10", "--samples", "40", "--out", str(tmp_path)]) == 0
    for p in range(1, 6):
        grid = rows(tmp_path / f"phase{p}.csv")
        assert list(grid[0]) == ["x", "target", "prediction"] and len(grid) == 1000
    matrix = rows(tmp_path / "rmse.csv")
    assert len(matrix) == 5
    assert list(matrix[0]) == ["phase", "region1", "region2", "region3", "region4", "region5"]


def test_gradcheck_exit_codes(tmp_path, capsys):
    assert main(["gradcheck", "--probes", "4", "--out", str(tmp_path)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert {r["passed"] for r in rows(tmp_path / "gradcheck.csv")} == {"yes"}
    assert main(["gradcheck", "--probes", "4", "--seeds", "9"]) == 0
    assert main(["gradcheck", "--probes", "4", "--inject-grad-s-flip"]) == 2


def test_numerical_failure_exit_2(tmp_path, monkeypatch, capsys):
    import relukan.cli as cli
    from relukan.training import TrainingDiverged

    def diverge(*args, **kwargs):
        raise TrainingDiverged(7, float("nan"))

    monkeypatch.setattr(cli, "train", diverge)
    assert main(["fit", "--seeds", "1", "--iters", "10", "--out", str(tmp_path)]) == 2
    assert "iteration 7" in capsys.readouterr().err


def test_writes_only_inside_out(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "results"
    main(["fit", "--seeds", "1", "--iters", "2", "--samples", "20", "--out", str(out)])
    main(["forget", "--iters", "2", "--samples", "20", "--out", str(out / "forget")])
    assert sorted(p.name for p in tmp_path.iterdir()) == ["results"]
