"""B-spline KAN layer used as the speed and accuracy baseline.

Each edge (c, i) computes

    phi(x) = w_b * silu(x) + w_s * sum_j coef[c, i, j] * B_j(x)

on a uniform knot vector that extends ``k`` cells past [0, 1] on both sides,
giving ``G + k`` bases of degree ``k``.  Basis ``j`` (0-based) is supported on
``[(j - k) / G, (j + 1) / G]`` and centered at ``(2j + 1 - k) / (2G)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DimensionError, ParameterError, rng_normal
from .layer import ContractError


@dataclass(frozen=True)
class BsplineGrid:
    G: int = 5
    k: int = 3

    def __post_init__(self):
        if self.G < 1:
            raise ParameterError(f"grid count G must be >= 1, got {self.G}")
        if self.k < 0:
            raise ParameterError(f"spline order k must be >= 0, got {self.k}")

    @property
    def n_basis(self) -> int:
        return self.G + self.k

    @property
    def step(self) -> float:
        return 1.0 / self.G

    @property
    def knots(self) -> np.ndarray:
        return (np.arange(self.G + 2 * self.k + 1, dtype=np.float64) - self.k) / self.G

    @property
    def centers(self) -> np.ndarray:
        i = np.arange(self.n_basis, dtype=np.float64)
        return (2 * i + 1 - self.k) / (2 * self.G)


def _cox_de_boor(grid: BsplineGrid, x: np.ndarray, degree: int) -> np.ndarray:
    """All degree-``degree`` bases on the knot vector, shape x.shape + (n,).

    n = G + 2k - degree.  Cells are half-open [t_j, t_{j+1}).
    """
    t = grid.knots
    xe = x[..., None]
    B = ((xe >= t[:-1]) & (xe < t[1:])).astype(np.float64)
    h = grid.step
    for p in range(1, degree + 1):
        # uniform knots: t_{j+p} - t_j = p*h for every j
        left = (xe - t[: -(p + 1)]) / (p * h)
        right = (t[p + 1 :] - xe) / (p * h)
        B = left * B[..., :-1] + right * B[..., 1:]
    return B


def bspline_basis(grid: BsplineGrid, x) -> np.ndarray:
    """Values of the G+k bases at ``x`` (scalar or array); trailing basis axis."""
    return _cox_de_boor(grid, np.asarray(x, dtype=np.float64), grid.k)


def bspline_basis_derivative(grid: BsplineGrid, x) -> np.ndarray:
    """d/dx of :func:`bspline_basis`, right-limit at knots.

    Uses B'_{j,k} = (B_{j,k-1} - B_{j+1,k-1}) * G on the uniform grid.
    """
    x = np.asarray(x, dtype=np.float64)
    if grid.k == 0:
        return np.zeros(x.shape + (grid.n_basis,))
    lower = _cox_de_boor(grid, x, grid.k - 1)
    return (lower[..., :-1] - lower[..., 1:]) * grid.G


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * _sigmoid(x)


def silu_derivative(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


class BsplineCache(NamedTuple):
    x: np.ndarray       # (N, n_in)
    basis: np.ndarray   # (N, n_in, n_basis)
    spline: np.ndarray  # (N, n_out, n_in): sum_j coef * B_j
    act: np.ndarray     # (N, n_in): silu(x)


class BsplineGrads(NamedTuple):
    x: np.ndarray
    coef: np.ndarray
    w_b: np.ndarray
    w_s: np.ndarray


class BsplineKanLayer:
    kind = "bspline"

    def __init__(self, n_in: int, n_out: int, grid: BsplineGrid,
                 coef: np.ndarray, w_b: np.ndarray, w_s: np.ndarray):
        if coef.shape != (n_out, n_in, grid.n_basis):
            raise DimensionError(f"coef shape {coef.shape}, expected {(n_out, n_in, grid.n_basis)}")
        if w_b.shape != (n_out, n_in) or w_s.shape != (n_out, n_in):
            raise DimensionError(f"w_b {w_b.shape} / w_s {w_s.shape}, expected {(n_out, n_in)}")
        self.n_in = n_in
        self.n_out = n_out
        self.grid = grid
        self.coef = np.ascontiguousarray(coef, dtype=np.float64)
        self.w_b = np.ascontiguousarray(w_b, dtype=np.float64)
        self.w_s = np.ascontiguousarray(w_s, dtype=np.float64)

    @classmethod
    def init(cls, n_in: int, n_out: int, grid: BsplineGrid, rng: np.random.Generator):
        if n_in < 1 or n_out < 1:
            raise ParameterError(f"layer needs n_in, n_out >= 1, got {n_in}, {n_out}")
        coef = rng_normal(rng, 0.0, 0.1, (n_out, n_in, grid.n_basis))
        return cls(n_in, n_out, grid, coef, np.ones((n_out, n_in)), np.ones((n_out, n_in)))

    def parameters(self):
        return [("coef", self.coef, True), ("w_b", self.w_b, True), ("w_s", self.w_s, True)]

    def edge_forward(self, c: int, i: int, x: float) -> float:
        """phi_{c,i}(x) for one edge, scalar path."""
        b = bspline_basis(self.grid, x)
        return float(self.w_b[c, i] * silu(x) + self.w_s[c, i] * np.dot(self.coef[c, i], b))

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise DimensionError(f"input shape {x.shape} does not fit n_in={self.n_in}")
        basis = bspline_basis(self.grid, X)
        spline = np.einsum("nij,cij->nci", basis, self.coef)
        act = silu(X)
        y = np.einsum("ni,ci->nc", act, self.w_b) + np.einsum("nci,ci->nc", spline, self.w_s)
        cache = BsplineCache(X, basis, spline, act)
        return (y[0] if single else y), cache

    def backward(self, cache: BsplineCache, grad_y, out=None) -> BsplineGrads:
        """Reverse pass; ``out`` optionally receives the coef, w_b and w_s gradients."""
        if cache.basis.shape[1:] != (self.n_in, self.grid.n_basis) or cache.spline.shape[1] != self.n_out:
            raise ContractError("cache shapes do not match this layer")
        gy = np.asarray(grad_y, dtype=np.float64)
        if gy.ndim == 1:
            gy = gy[None, :]
        N = cache.x.shape[0]
        if gy.shape != (N, self.n_out):
            raise DimensionError(f"grad_y shape {gy.shape}, expected {(N, self.n_out)}")

        grad_wb = gy.T @ cache.act
        grad_ws = np.einsum("nc,nci->ci", gy, cache.spline)
        g_spline = gy.T @ cache.basis.reshape(N, -1)  # (n_out, n_in*nb)
        grad_coef = g_spline.reshape(self.coef.shape) * self.w_s[:, :, None]

        dbasis = bspline_basis_derivative(self.grid, cache.x)
        dspline = np.einsum("nij,cij->nci", dbasis, self.coef)
        grad_x = (gy @ self.w_b) * silu_derivative(cache.x) + np.einsum(
            "nc,ci,nci->ni", gy, self.w_s, dspline
        )
        if out is None:
            return BsplineGrads(grad_x, grad_coef, grad_wb, grad_ws)
        for dst, src in zip(out, (grad_coef, grad_wb, grad_ws)):
            dst[...] = src
        return BsplineGrads(grad_x, *out)

    def to_record(self) -> dict:
        """Flat record; array fields in the order coef, w_b, w_s, each row-major."""
        return {
            "tag": "bspline-layer",
            "version": 1,
            "config": {"n_in": self.n_in, "n_out": self.n_out, "G": self.grid.G, "k": self.grid.k},
            "coef": self.coef.ravel().tolist(),
            "w_b": self.w_b.ravel().tolist(),
            "w_s": self.w_s.ravel().tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "BsplineKanLayer":
        if rec.get("tag") != "bspline-layer":
            raise ParameterError(f"not a bspline layer record: tag={rec.get('tag')!r}")
        if rec.get("version") != 1:
            raise ParameterError(f"unsupported bspline layer record version {rec.get('version')!r}")
        cfg = rec["config"]
        grid = BsplineGrid(cfg["G"], cfg["k"])
        n_in, n_out = cfg["n_in"], cfg["n_out"]
        return cls(
            n_in, n_out, grid,
            np.array(rec["coef"], dtype=np.float64).reshape(n_out, n_in, grid.n_basis),
            np.array(rec["w_b"], dtype=np.float64).reshape(n_out, n_in),
            np.array(rec["w_s"], dtype=np.float64).reshape(n_out, n_in),
        )
