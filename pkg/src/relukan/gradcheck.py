"""Central finite-difference checks for every analytic gradient.

Each probe builds a random layer (or network) and input, contracts the
output with a random cotangent so the objective is a scalar, and compares
each analytic partial with ``(f(p + h) - f(p - h)) / 2h``.  Probe points are
resampled until every input sits at least ``margin`` away from a relu kink
(ReLU-KAN) or a knot (B-spline), so the objective is smooth within +-h.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bspline import BsplineGrid, BsplineKanLayer
from .core import make_rng
from .layer import ReluKanConfig, ReluKanLayer
from .network import build
from .training import mse

H = 1e-6
THRESHOLD = 1e-4
MARGIN = 1e-3
# partials below REL_FLOOR * max(1, |f|) are at finite-difference round-off
# level (|f| eps / h); for them the check is effectively an absolute one,
# |a - n| < 1e-8 * max(1, |f|)
REL_FLOOR = 1e-4


def rel_error(analytic, numeric, scale: float = 1.0) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    floor = REL_FLOOR * max(1.0, abs(scale))
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f, arr: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    out = np.empty_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        out[idx] = (fp - fm) / (2 * h)
    return out


@dataclass
class GradReport:
    max_error: dict[str, float] = field(default_factory=dict)
    probes: dict[str, int] = field(default_factory=dict)

    def record(self, group: str, err) -> None:
        e = float(np.max(err)) if np.size(err) else 0.0
        self.max_error[group] = max(self.max_error.get(group, 0.0), e)

    def count(self, suite: str) -> None:
        self.probes[suite] = self.probes.get(suite, 0) + 1

    @property
    def passed(self) -> bool:
        return all(e < THRESHOLD for e in self.max_error.values())


def _clear_of(points: np.ndarray, edges: np.ndarray, margin: float) -> bool:
    return bool(np.all(np.abs(points[..., None] - edges) >= margin))


def _random_relukan_layer(rng, norm_mode: str) -> ReluKanLayer:
    n_in, n_out = rng.integers(1, 5, size=2)
    G = int(rng.integers(1, 11))
    k = int(rng.integers(0, 4))
    layer = ReluKanLayer.init(ReluKanConfig(int(n_in), int(n_out), G, k, True, norm_mode), rng)
    # move off the regular grid so endpoints differ across channels
    width = (k + 1) / G
    layer.S += rng.uniform(-0.1, 0.1, layer.S.shape) * width
    layer.E += rng.uniform(-0.1, 0.1, layer.E.shape) * width
    layer.W[...] = rng.normal(0.0, 1.0, layer.W.shape)
    return layer


def check_relukan_layer(report: GradReport, rng, probes: int, norm_mode: str = "constant",
                        flip_grad_S: bool = False) -> None:
    suffix = "" if norm_mode == "constant" else f"[{norm_mode}]"
    for _ in range(probes):
        layer = _random_relukan_layer(rng, norm_mode)
        edges = np.concatenate([layer.S, layer.E], axis=1)
        while True:
            x = rng.uniform(-0.3, 1.3, layer.n_in)
            # the probe should land inside at least one support
            if _clear_of(x[:, None], edges, MARGIN) and np.any(layer.forward(x)[1].F):
                break
        cot = rng.normal(size=layer.n_out)

        def f():
            return float(layer.forward(x)[0] @ cot)

        y, cache = layer.forward(x)
        grads = layer.backward(cache, cot)
        gS = -grads.S if flip_grad_S else grads.S
        report.record("relukan.W" + suffix, rel_error(grads.W, numeric_grad(f, layer.W)))
        report.record("relukan.S" + suffix, rel_error(gS, numeric_grad(f, layer.S)))
        report.record("relukan.E" + suffix, rel_error(grads.E, numeric_grad(f, layer.E)))
        report.record("relukan.x" + suffix, rel_error(grads.x[0], numeric_grad(f, x)))
        report.count("relukan layer" + suffix)


def check_bspline_layer(report: GradReport, rng, probes: int) -> None:
    for _ in range(probes):
        n_in, n_out = (int(v) for v in rng.integers(1, 5, size=2))
        grid = BsplineGrid(int(rng.integers(1, 11)), int(rng.integers(1, 4)))
        layer = BsplineKanLayer.init(n_in, n_out, grid, rng)
        layer.coef[...] = rng.normal(size=layer.coef.shape)
        layer.w_b[...] = rng.normal(size=layer.w_b.shape)
        layer.w_s[...] = rng.normal(size=layer.w_s.shape)
        while True:
            x = rng.uniform(-0.3, 1.3, n_in)
            if _clear_of(x, grid.knots, MARGIN):
                break
        cot = rng.normal(size=n_out)

        def f():
            return float(layer.forward(x)[0] @ cot)

        _, cache = layer.forward(x)
        grads = layer.backward(cache, cot)
        report.record("bspline.coef", rel_error(grads.coef, numeric_grad(f, layer.coef)))
        report.record("bspline.w_b", rel_error(grads.w_b, numeric_grad(f, layer.w_b)))
        report.record("bspline.w_s", rel_error(grads.w_s, numeric_grad(f, layer.w_s)))
        report.record("bspline.x", rel_error(grads.x[0], numeric_grad(f, x)))
        report.count("bspline layer")


def _hidden_inputs_clear(net, caches) -> bool:
    for (pre, cache), layer in zip(caches, net.layers):
        if net.kind == "relukan":
            edges = np.concatenate([layer.S, layer.E], axis=1)
            if not _clear_of(cache.x[:, :, None], edges[None], MARGIN):
                return False
        elif not _clear_of(cache.x, layer.grid.knots, MARGIN):
            return False
    return True


def check_network(report: GradReport, rng, probes: int, kind: str = "relukan",
                  widths=(2, 3, 1), batch: int = 4) -> None:
    """End-to-end: MSE loss through a whole network, all parameters and the input."""
    done = 0
    while done < probes:
        net = build(kind, widths, 5, 3, True, rng=int(rng.integers(2**31)))
        for p in net.params():
            p.value += rng.normal(0.0, 0.3 if kind == "relukan" else 0.5, p.value.shape)
        if kind == "relukan":
            for layer in net.layers:
                layer.clamp_widths(0.05)
        for _ in range(50):
            X = rng.uniform(0.0, 1.0, (batch, widths[0]))
            y, caches = net.forward(X)
            if _hidden_inputs_clear(net, caches) and np.all(np.abs(y) > 0):
                break
        else:
            continue  # no smooth probe point for this network; draw another
        done += 1
        target = rng.normal(size=batch)

        def f():
            return mse(net.forward(X)[0][:, 0], target)[0]

        pred, caches = net.forward(X)
        loss, g = mse(pred[:, 0], target)
        net.zero_grad()
        gx = net.backward(caches, g[:, None])
        for p in net.params():
            group = f"net[{kind}].{p.name.split('.')[-1]}"
            report.record(group, rel_error(p.grad, numeric_grad(f, p.value), loss))
        report.record(f"net[{kind}].x", rel_error(gx, numeric_grad(f, X), loss))
        report.count(f"network {kind}")


def run_all(seed: int = 0, probes: int = 100, flip_grad_S: bool = False) -> GradReport:
    rng = make_rng(seed)
    report = GradReport()
    check_relukan_layer(report, rng, probes, "constant", flip_grad_S)
    check_relukan_layer(report, rng, probes // 4, "dynamic", flip_grad_S)
    check_bspline_layer(report, rng, probes)
    check_network(report, rng, probes, "relukan")
    check_network(report, rng, probes // 4, "bspline")
    return report
