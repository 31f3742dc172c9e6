import json
import math
from dataclasses import replace

import numpy as np
import pytest

from relukan.core import ParameterError
from relukan.network import Param, build
from relukan.training import (
    FITTING,
    SPEED,
    TEST_SEED_OFFSET,
    Adam,
    ForgetConfig,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    evaluate,
    fit,
    five_peaks,
    forgetting_protocol,
    get_function,
    make_dataset,
    mse,
    train,
)


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0])[0] == 0.0
    assert mse([1.0] * 4, [0.0] * 4)[0] == 1.0
    loss, grad = mse([0.0, 2.0], [1.0, 0.0])
    assert loss == 2.5
    assert grad.tolist() == [-1.0, 2.0]
    with pytest.raises(ParameterError):
        mse([], [])
    with pytest.raises(ParameterError):
        mse([1.0], [1.0, 2.0])


def test_target_closed_forms():
    assert get_function("f1")(np.array([[0.5]]))[0] == 1.0
    assert get_function("f3")(np.array([[0.0]]))[0] == 1.0
    x = np.array([[0.3]])
    assert get_function("f2")(x)[0] == np.sin(5 * np.pi * 0.3) + 0.3
    X = np.array([[0.1, 0.2, 0.3, 0.4]])
    assert SPEED["f5"](X)[0] == pytest.approx(np.exp(np.sin(0.05) + np.sin(0.25)), rel=1e-15)
    assert FITTING["f6"](X)[0] == pytest.approx(
        np.exp(np.sin(np.pi * 0.05) + np.sin(np.pi * 0.25)), rel=1e-15)


def test_suite_configs():
    assert FITTING["f2"].widths == (1, 1) and FITTING["f2"].listed_widths == (2, 1)
    assert FITTING["f3"].widths == (1, 1, 1) and FITTING["f3"].listed_widths == (2, 1, 1)
    assert SPEED["f5"].widths == (4, 4, 2, 1) and SPEED["f5"].G == 10
    for fn in list(FITTING.values()) + list(SPEED.values()):
        assert fn.widths[0] == fn.arity and fn.widths[-1] == 1
    with pytest.raises(ParameterError):
        get_function("f9")
    with pytest.raises(ParameterError):
        get_function("f1", "nope")


def test_five_peaks():
    centers = [(2 * i - 1) / 10 for i in range(1, 6)]
    assert np.allclose(five_peaks(np.array(centers)[:, None]), 1.0, atol=1e-6)
    # halfway between two bumps: 2 exp(-0.1^2 / (2 0.04^2))
    assert five_peaks(np.array([[0.2]]))[0] == pytest.approx(2 * np.exp(-3.125), rel=1e-12)


def test_dataset_deterministic():
    a = make_dataset(get_function("f4"), 100, 3)
    b = make_dataset(get_function("f4"), 100, 3)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)
    assert a.inputs.shape == (100, 2)
    assert a.inputs.min() >= 0 and a.inputs.max() < 1
    with pytest.raises(ParameterError):
        make_dataset(get_function("f1"), 0, 1)


def test_adam_zero_gradient_noop():
    p = Param("w", np.array([1.0, -2.0]), np.zeros(2), True)
    Adam([p], lr=0.1).step()
    assert p.value.tolist() == [1.0, -2.0]


def test_adam_first_step():
    p = Param("w", np.array([0.0]), np.array([1.0]), True)
    Adam([p], lr=0.1).step()
    assert p.value[0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_matches_reference_trajectory():
    rng = np.random.default_rng(0)
    p = Param("w", rng.normal(size=3), np.zeros(3), True)
    w, m, v = p.value.copy(), np.zeros(3), np.zeros(3)
    opt = Adam([p], lr=0.01)
    for t in range(1, 20):
        g = rng.normal(size=3)
        p.grad[:] = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(p.value, w, rtol=1e-12, atol=1e-15)


def test_adam_skips_frozen():
    frozen = Param("s", np.array([1.0]), np.array([5.0]), False)
    Adam([frozen], lr=0.1).step()
    assert frozen.value[0] == 1.0


def test_adam_step_enforces_width_floor():
    net = build("relukan", [1, 1], 5, 3, True)
    opt = Adam(net.flat_params(), lr=1.0)
    layer = net.layers[0]
    for p in net.params():
        p.grad[...] = 0.0
    net.params()[1].grad[0, 0] = -1.0  # push S right
    net.params()[2].grad[0, 0] = 1.0   # and E left
    for _ in range(5):
        adam_step(net, opt)
    assert np.all(layer.E - layer.S >= 1e-4 - 1e-15)


def test_fit_zero_iterations():
    fn = get_function("f1")
    net = build("relukan", fn.widths, rng=1)
    W0 = net.layers[0].W.copy()
    data = make_dataset(fn, 50, 1)
    report = train(net, data, TrainConfig(iterations=0, samples=50, test_samples=50))
    assert report.losses == []
    assert np.array_equal(net.layers[0].W, W0)
    assert report.final_train_mse == evaluate(net, data)


def test_fit_in_blocks_equals_single_run():
    fn = get_function("f4")
    data = make_dataset(fn, 200, 1)
    cfg = TrainConfig(iterations=30, samples=200)
    a = build("relukan", fn.widths, rng=1)
    whole, _ = fit(a, data, cfg)
    b = build("relukan", fn.widths, rng=1)
    opt = Adam(b.flat_params(), cfg.lr)
    parts = []
    for _ in range(3):
        parts += fit(b, data, replace(cfg, iterations=10), opt)[0]
    assert parts == whole
    assert np.array_equal(a.layers[1].E, b.layers[1].E)


def test_fit_rejects_arity_mismatch():
    with pytest.raises(ParameterError):
        fit(build("relukan", [1, 1]), make_dataset(get_function("f4"), 10, 1), TrainConfig(iterations=1))


def test_fit_reports_divergence():
    fn = get_function("f1")
    net = build("relukan", fn.widths, rng=1)
    net.layers[0].W[...] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        fit(net, make_dataset(fn, 10, 1), TrainConfig(iterations=5))
    assert info.value.iteration == 1
    assert "iteration 1" in str(info.value)


def test_train_report_and_csv(tmp_path):
    fn = get_function("f2")
    net = build("relukan", fn.widths, rng=2)
    report = train(net, make_dataset(fn, 100, 2), TrainConfig(iterations=20, samples=100, test_samples=100))
    assert len(report.losses) == len(report.iter_seconds) == 20
    assert all(math.isfinite(v) for v in report.losses)
    assert report.config["listed_widths"] == [2, 1]
    path = report.write_csv(tmp_path / "run.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,loss,seconds" and len(lines) == 21
    assert float(lines[-1].split(",")[1]) == report.losses[-1]
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["schema"] == "relukan-run/1"
    assert meta["final_test_mse"] == report.final_test_mse


def test_train_uses_offset_test_seed():
    fn = get_function("f1")
    net = build("relukan", fn.widths, rng=1)
    data = make_dataset(fn, 100, 4)
    report = train(net, data, TrainConfig(iterations=0, samples=100, test_samples=100))
    assert report.final_test_mse == evaluate(net, make_dataset(fn, 100, 4 + TEST_SEED_OFFSET))


def test_train_reproducible():
    fn = get_function("f4")
    runs = []
    for _ in range(2):
        net = build("relukan", fn.widths, rng=3)
        runs.append(train(net, make_dataset(fn, 200, 3), TrainConfig(iterations=25, samples=200, test_samples=200)))
    assert runs[0].numeric_fingerprint() == runs[1].numeric_fingerprint()


def test_f1_loss_drops():
    fn = get_function("f1")
    net = build("relukan", fn.widths, rng=1)
    losses, _ = fit(net, make_dataset(fn, 1000, 1), TrainConfig(iterations=1000))
    assert losses[-1] < 0.01 * losses[0]


def test_forgetting_protocol_shape():
    net = build("relukan", [1, 1], 50, 1, True, rng=1)
    reports = forgetting_protocol(net, ForgetConfig(iterations=20, samples_per_phase=50, grid_points=100))
    assert [r.phase for r in reports] == [1, 2, 3, 4, 5]
    for r in reports:
        assert len(r.losses) == 20 and len(r.region_rmse) == 5
        assert r.grid_x.shape == r.grid_pred.shape == (100,)
    with pytest.raises(ParameterError):
        forgetting_protocol(build("relukan", [2, 1]), ForgetConfig(iterations=1))
