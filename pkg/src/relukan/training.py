"""Target functions, datasets, MSE, Adam and the full-batch training loop."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import ParameterError, make_rng
from .network import Network

TEST_SEED_OFFSET = 7919


class TrainingDiverged(ArithmeticError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"loss became {loss} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


# -- target functions -------------------------------------------------------


@dataclass(frozen=True)
class TargetFunction:
    name: str
    arity: int
    fn: Callable[[np.ndarray], np.ndarray]  # (N, arity) -> (N,)
    formula: str
    widths: tuple[int, ...]
    G: int = 5
    k: int = 3
    listed_widths: tuple[int, ...] | None = None  # as printed in the source table, when it differs

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None] if self.arity == 1 else X[None, :]
        return self.fn(X)


pi = np.pi

# Fitting-accuracy suite.  f2 and f3 are unary but listed with two input
# nodes; they are run with input width 1 and the listed width kept as metadata.
FITTING = {
    "f1": TargetFunction("f1", 1, lambda X: np.sin(pi * X[:, 0]), "sin(pi x)", (1, 1)),
    "f2": TargetFunction("f2", 1, lambda X: np.sin(5 * pi * X[:, 0]) + X[:, 0], "sin(5 pi x) + x",
                         (1, 1), listed_widths=(2, 1)),
    "f3": TargetFunction("f3", 1, lambda X: np.exp(X[:, 0]), "exp(x)", (1, 1, 1),
                         listed_widths=(2, 1, 1)),
    "f4": TargetFunction("f4", 2, lambda X: np.sin(pi * X[:, 0] + pi * X[:, 1]),
                         "sin(pi x1 + pi x2)", (2, 5, 1)),
    "f5": TargetFunction("f5", 2, lambda X: np.exp(np.sin(pi * X[:, 0]) + X[:, 1] ** 2),
                         "exp(sin(pi x1) + x2^2)", (2, 5, 1)),
    "f6": TargetFunction(
        "f6", 4,
        lambda X: np.exp(np.sin(pi * X[:, 0] ** 2 + pi * X[:, 1] ** 2)
                         + np.sin(pi * X[:, 2] ** 2 + pi * X[:, 3] ** 2)),
        "exp(sin(pi x1^2 + pi x2^2) + sin(pi x3^2 + pi x4^2))", (4, 4, 2, 1), G=10),
}

# Training-speed suite.
SPEED = {
    "f1": TargetFunction("f1", 1, lambda X: np.sin(pi * X[:, 0]), "sin(pi x)", (1, 1)),
    "f2": TargetFunction("f2", 2, lambda X: np.sin(pi * X[:, 0] + pi * X[:, 1]),
                         "sin(pi x1 + pi x2)", (2, 1)),
    "f3": TargetFunction("f3", 2, lambda X: np.arctan(X[:, 0] + X[:, 0] * X[:, 1] + X[:, 1] ** 2),
                         "arctan(x1 + x1 x2 + x2^2)", (2, 1, 1)),
    "f4": TargetFunction("f4", 2, lambda X: np.exp(np.sin(pi * X[:, 0]) + X[:, 1] ** 2),
                         "exp(sin(pi x1) + x2^2)", (2, 5, 1)),
    "f5": TargetFunction(
        "f5", 4,
        lambda X: np.exp(np.sin(X[:, 0] ** 2 + X[:, 1] ** 2) + np.sin(X[:, 2] ** 2 + X[:, 3] ** 2)),
        "exp(sin(x1^2 + x2^2) + sin(x3^2 + x4^2))", (4, 4, 2, 1), G=10),
}

PEAK_CENTERS = tuple((2 * i - 1) / 10 for i in range(1, 6))
PEAK_SIGMA = 0.04


def five_peaks(X, centers=PEAK_CENTERS, sigma=PEAK_SIGMA) -> np.ndarray:
    x = np.asarray(X, dtype=np.float64).reshape(len(X), -1)[:, 0]
    c = np.asarray(centers)[None, :]
    return np.exp(-((x[:, None] - c) ** 2) / (2 * sigma**2)).sum(axis=1)


FORGET = TargetFunction("forget5", 1, five_peaks, "sum of 5 gaussian bumps", (1, 1), G=50, k=1)


def get_function(name: str, suite: str = "fit") -> TargetFunction:
    if name == "forget5":
        return FORGET
    table = {"fit": FITTING, "speed": SPEED}.get(suite)
    if table is None:
        raise ParameterError(f"unknown function suite {suite!r}")
    if name not in table:
        raise ParameterError(f"unknown function {name!r} in suite {suite!r}; choose from {sorted(table)}")
    return table[name]


# -- data -------------------------------------------------------------------


@dataclass
class Dataset:
    inputs: np.ndarray   # (N, arity)
    targets: np.ndarray  # (N,)
    function: TargetFunction
    seed: int

    def __len__(self):
        return len(self.targets)


def make_dataset(fn: TargetFunction, n: int, seed: int, lo: float = 0.0, hi: float = 1.0) -> Dataset:
    """``n`` i.i.d. points, uniform on [lo, hi)^arity, from the seeded stream."""
    if n < 1:
        raise ParameterError(f"dataset size must be >= 1, got {n}")
    X = make_rng(seed).uniform(lo, hi, size=(n, fn.arity))
    return Dataset(X, fn(X), fn, seed)


# -- loss and optimizer -----------------------------------------------------


def mse(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ParameterError(f"pred shape {pred.shape} does not match target {target.shape}")
    if pred.size == 0:
        raise ParameterError("mse of empty arrays")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


class Adam:
    """Bias-corrected Adam over a list of :class:`~relukan.network.Param`."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self._buf = [np.empty_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        step = self.lr / bc1
        for p, m, v, buf in zip(self.params, self.m, self.v, self._buf):
            g = p.grad
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=buf)
            m += buf
            v *= self.beta2
            np.multiply(g, g, out=buf)
            buf *= 1.0 - self.beta2
            v += buf
            # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
            np.multiply(v, 1.0 / bc2, out=buf)
            np.sqrt(buf, out=buf)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= step
            p.value -= buf


def adam_step(net: Network, opt: Adam) -> None:
    """One optimizer update followed by the endpoint width guard."""
    opt.step()
    net.clamp_widths()


# -- training loop ----------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 1000
    seed: int = 1
    samples: int = 1000
    test_samples: int = 1000


@dataclass
class RunReport:
    losses: list[float]
    iter_seconds: list[float]
    final_train_mse: float
    final_test_mse: float
    total_seconds: float
    config: dict = field(default_factory=dict)

    def numeric_fingerprint(self) -> tuple:
        """Every non-timing numeric field, for reproducibility checks."""
        return (tuple(self.losses), self.final_train_mse, self.final_test_mse)

    def write_csv(self, path) -> Path:
        """Per-iteration CSV plus a ``.json`` sidecar holding config and final metrics."""
        path = Path(path)
        cumulative = np.cumsum(self.iter_seconds) if self.iter_seconds else []
        lines = ["iter,loss,seconds"]
        lines += [f"{i + 1},{loss!r},{t:.6f}" for i, (loss, t) in enumerate(zip(self.losses, cumulative))]
        path.write_text("\n".join(lines) + "\n")
        meta = {
            "schema": "relukan-run/1",
            "final_train_mse": self.final_train_mse,
            "final_test_mse": self.final_test_mse,
            "total_seconds": self.total_seconds,
            "config": self.config,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path


def evaluate(net: Network, data: Dataset) -> float:
    pred, _ = net.forward(data.inputs)
    return mse(pred[:, 0], data.targets)[0]


def fit(net: Network, data: Dataset, config: TrainConfig, opt: Adam | None = None):
    """Full-batch Adam for ``config.iterations`` steps.

    Returns ``(losses, iter_seconds)``; losses[i] is the loss of the forward
    pass at iteration i, before that iteration's update.
    """
    if data.inputs.shape[1] != net.widths[0] or net.widths[-1] != 1:
        raise ParameterError(
            f"network widths {net.widths} do not match a scalar target of arity {data.inputs.shape[1]}"
        )
    if opt is None:
        opt = Adam(net.flat_params(), config.lr, config.beta1, config.beta2, config.eps)
    losses, seconds = [], []
    for it in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        pred, caches = net.forward(data.inputs, reuse_buffers=True)
        loss, g = mse(pred[:, 0], data.targets)
        if not math.isfinite(loss):
            raise TrainingDiverged(it, loss)
        net.backward(caches, g[:, None])
        adam_step(net, opt)
        seconds.append(time.perf_counter() - t0)
        losses.append(loss)
    return losses, seconds


def train(net: Network, data: Dataset, config: TrainConfig, test: Dataset | None = None) -> RunReport:
    """Train on ``data`` and score on a fresh test set (seed offset from the train seed)."""
    if test is None:
        test = make_dataset(data.function, config.test_samples, data.seed + TEST_SEED_OFFSET)
    losses, seconds = fit(net, data, config)
    train_mse = evaluate(net, data)
    test_mse = evaluate(net, test)
    if not (math.isfinite(train_mse) and math.isfinite(test_mse)):
        raise TrainingDiverged(config.iterations, train_mse)
    echo = asdict(config) | {
        "function": data.function.name,
        "kind": net.kind,
        "widths": list(net.widths),
        "G": net.G,
        "k": net.k,
        "trainable_endpoints": net.trainable_endpoints,
        "norm_mode": net.norm_mode,
    }
    if data.function.listed_widths is not None:
        echo["listed_widths"] = list(data.function.listed_widths)
    return RunReport(losses, seconds, train_mse, test_mse, float(sum(seconds)), echo)


# -- catastrophic forgetting ------------------------------------------------


@dataclass
class ForgetConfig:
    phases: int = 5
    samples_per_phase: int = 300
    iterations: int = 500
    lr: float = 3e-4
    grid_points: int = 1000
    seed: int = 1
    centers: tuple[float, ...] = PEAK_CENTERS
    sigma: float = PEAK_SIGMA
    keep_optimizer_state: bool = True


@dataclass
class PhaseReport:
    phase: int
    losses: list[float]
    region_rmse: list[float]
    grid_x: np.ndarray
    grid_pred: np.ndarray


def forgetting_protocol(net: Network, config: ForgetConfig) -> list[PhaseReport]:
    """Train on one peak region at a time and track every region's error.

    Phase p sees only x in [(p-1)/P, p/P].  After each phase the network is
    scored on a fixed midpoint grid over [0, 1], split into P equal regions.
    One optimizer state carries across phases unless
    ``keep_optimizer_state`` is off.
    """
    if net.widths[0] != 1:
        raise ParameterError(f"forgetting protocol needs input width 1, got {net.widths}")
    P = config.phases

    def target(X):
        return five_peaks(X, config.centers, config.sigma)

    fn = TargetFunction("forget5", 1, target, FORGET.formula, (1, 1))
    gx = (np.arange(config.grid_points) + 0.5) / config.grid_points
    gy = target(gx[:, None])
    region = np.minimum((gx * P).astype(int), P - 1)

    train_cfg = TrainConfig(lr=config.lr, iterations=config.iterations, seed=config.seed)
    opt = Adam(net.flat_params(), config.lr) if config.keep_optimizer_state else None
    reports = []
    for p in range(1, P + 1):
        data = make_dataset(fn, config.samples_per_phase, config.seed * 1000 + p, (p - 1) / P, p / P)
        losses, _ = fit(net, data, train_cfg, opt)
        pred = net.forward(gx[:, None])[0][:, 0]
        err = (pred - gy) ** 2
        rmse = [float(np.sqrt(err[region == r].mean())) for r in range(P)]
        reports.append(PhaseReport(p, losses, rmse, gx, pred))
    return reports
