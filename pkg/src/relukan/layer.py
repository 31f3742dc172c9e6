"""ReLU-KAN layer: squared-ReLU bump bases with trainable endpoints.

A layer with ``n_in`` inputs and ``n_out`` outputs keeps three parameter
blocks, each with one row per input channel and one column per basis:

    S  (n_in, G+k)          left endpoints of every basis support
    E  (n_in, G+k)          right endpoints
    W  (n_out, n_in, G+k)   W[c] is the weight matrix of output channel c

For an input vector x the forward pass is

    A = relu(E - x)         x replicated along the basis axis
    B = relu(x - S)
    D = sqrt(r) * A * B
    F = D * D               F[i, j] = R_j(x_i) = r * (A * B)**2
    y[c] = <W[c], F>        Frobenius inner product

r = 16 G^4 / (k+1)^4 scales the *squared* product, so every basis at its
initial width (k+1)/G peaks at exactly 1.  In dynamic mode r is replaced by
16 / (E - S)^4 entry by entry.

All arrays carry an extra leading sample axis so a whole batch goes through
in one shot; the per-sample arithmetic is the same as above.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .core import DimensionError, ParameterError, rng_normal

WIDTH_FLOOR = 1e-4
# Near-zero weights: the network starts close to the zero function, so every
# hidden layer initially sees inputs near 0, inside its basis supports.
W_INIT_STD = 0.01


class DegenerateBasisError(ValueError):
    """A basis support has zero or negative width under dynamic normalization."""


class ContractError(RuntimeError):
    """A cache does not belong to the layer it is used with."""


@dataclass(frozen=True)
class ReluKanConfig:
    n_in: int
    n_out: int
    G: int = 5
    k: int = 3
    trainable_endpoints: bool = True
    norm_mode: str = "constant"

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ParameterError(f"layer needs n_in, n_out >= 1, got {self.n_in}, {self.n_out}")
        if self.G < 1:
            raise ParameterError(f"grid count G must be >= 1, got {self.G}")
        if self.k < 0:
            raise ParameterError(f"span parameter k must be >= 0, got {self.k}")
        if self.norm_mode not in ("constant", "dynamic"):
            raise ParameterError(f"norm_mode must be 'constant' or 'dynamic', got {self.norm_mode!r}")

    @property
    def n_basis(self) -> int:
        return self.G + self.k

    @property
    def r(self) -> float:
        """Normalization making an initial-width basis peak at exactly 1."""
        return 16.0 * self.G**4 / (self.k + 1) ** 4


def basis_eval(x: float, s: float, e: float, norm: float | None = None) -> float:
    """Scalar bump ``[relu(e - x) * relu(x - s)]**2 * norm``.

    With ``norm=None`` the per-basis normalization ``16 / (e - s)**4`` is used,
    which puts the peak value 1 at the midpoint.
    """
    if norm is None:
        if not e > s:
            raise DegenerateBasisError(f"basis support [{s}, {e}] is empty")
        norm = 16.0 / (e - s) ** 4
    p = max(0.0, e - x) * max(0.0, x - s)
    return p * p * norm


class ForwardCache(NamedTuple):
    x: np.ndarray  # (N, n_in)
    A: np.ndarray  # (N, n_in, n_basis)
    B: np.ndarray
    D: np.ndarray
    F: np.ndarray
    scale: np.ndarray | float  # sqrt(r), or per-entry 4/(E-S)^2 in dynamic mode


class LayerGrads(NamedTuple):
    x: np.ndarray
    W: np.ndarray
    S: np.ndarray
    E: np.ndarray


class ReluKanLayer:
    kind = "relukan"

    def __init__(self, config: ReluKanConfig, S: np.ndarray, E: np.ndarray, W: np.ndarray):
        shape = (config.n_in, config.n_basis)
        if S.shape != shape or E.shape != shape:
            raise DimensionError(f"S {S.shape} and E {E.shape} must both be {shape}")
        if W.shape != (config.n_out,) + shape:
            raise DimensionError(f"W has shape {W.shape}, expected {(config.n_out,) + shape}")
        self.config = config
        self.S = np.ascontiguousarray(S, dtype=np.float64)
        self.E = np.ascontiguousarray(E, dtype=np.float64)
        self.W = np.ascontiguousarray(W, dtype=np.float64)

    @classmethod
    def init(cls, config: ReluKanConfig, rng: np.random.Generator) -> "ReluKanLayer":
        G, k, nb = config.G, config.k, config.n_basis
        j = np.arange(1, nb + 1, dtype=np.float64)
        S = np.tile((j - k - 1) / G, (config.n_in, 1))
        E = np.tile(j / G, (config.n_in, 1))
        W = rng_normal(rng, 0.0, W_INIT_STD, (config.n_out, config.n_in, nb))
        return cls(config, S, E, W)

    @property
    def n_in(self) -> int:
        return self.config.n_in

    @property
    def n_out(self) -> int:
        return self.config.n_out

    def parameters(self):
        trainable = self.config.trainable_endpoints
        return [("W", self.W, True), ("S", self.S, trainable), ("E", self.E, trainable)]

    def _scale(self):
        """Multiplier on A*B; its square is the basis normalization."""
        if self.config.norm_mode == "constant":
            return np.sqrt(self.config.r)
        width = self.E - self.S
        if np.any(width <= 0):
            raise DegenerateBasisError("dynamic normalization with a non-positive basis width")
        return 4.0 / width**2

    def _workspace(self, N: int):
        """Scratch buffers for backward, reused while the batch size is unchanged.

        Not safe for concurrent backward calls on the same layer.
        """
        work = getattr(self, "_work", None)
        if work is None or work.shape[1] != N or work.shape[2:] != self.S.shape:
            work = self._work = np.empty((3, N) + self.S.shape)
        return work[0], work[1], work[2]

    def basis_matrix(self, x) -> np.ndarray:
        """F for a batch: ``F[n, i, j] = R_j(x[n, i])``."""
        return self.forward(x)[1].F

    def forward(self, x, out: np.ndarray | None = None) -> tuple[np.ndarray, ForwardCache]:
        """Evaluate the layer on ``x`` of shape (N, n_in) or (n_in,).

        Returns ``(y, cache)``; ``y`` has shape (N, n_out), or (n_out,) for a
        single vector.  The cache always carries the batch axis.

        ``out``, if given, is a (4, N, n_in, G+k) buffer that receives A, B, D
        and F; the returned cache then aliases it.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise DimensionError(f"input shape {x.shape} does not fit n_in={self.n_in}")
        N = X.shape[0]
        xb = X[:, :, None]
        if out is None:
            out = np.empty((4, N) + self.S.shape)
        elif out.shape != (4, N) + self.S.shape:
            raise DimensionError(f"forward buffer shape {out.shape}, expected {(4, N) + self.S.shape}")
        A, B, D, F = out
        np.subtract(self.E, xb, out=A)
        np.maximum(A, 0.0, out=A)
        np.subtract(xb, self.S, out=B)
        np.maximum(B, 0.0, out=B)
        scale = self._scale()
        np.multiply(A, B, out=D)
        D *= scale
        np.multiply(D, D, out=F)
        # einsum, not BLAS: a fixed summation order per sample, so a sample's
        # output does not depend on what else is in the batch
        y = np.einsum("nk,ck->nc", F.reshape(N, -1), self.W.reshape(self.n_out, -1))
        cache = ForwardCache(X, A, B, D, F, scale)
        return (y[0] if single else y), cache

    def backward(self, cache: ForwardCache, grad_y, out=None) -> LayerGrads:
        """Reverse pass.  Parameter gradients are summed over the batch.

        Kinks of relu get derivative 0 (strict indicator).  With frozen
        endpoints the S and E gradients come back as zeros.

        ``out``, if given, is a sequence of three C-contiguous arrays that
        receive the W, S and E gradients (overwritten, then returned).
        """
        if cache.A.shape[1:] != self.S.shape:
            raise ContractError(
                f"cache basis shape {cache.A.shape[1:]} does not match layer {self.S.shape}"
            )
        gy = np.asarray(grad_y, dtype=np.float64)
        if gy.ndim == 1:
            gy = gy[None, :]
        N = cache.x.shape[0]
        if gy.shape != (N, self.n_out):
            raise DimensionError(f"grad_y shape {gy.shape}, expected {(N, self.n_out)}")
        if out is None:
            gW, gS, gE = np.empty_like(self.W), np.empty_like(self.S), np.empty_like(self.E)
        else:
            gW, gS, gE = out
            if not all(a.flags.c_contiguous for a in out):
                raise ContractError("gradient output arrays must be C-contiguous")

        A, B, D, F = cache.A, cache.B, cache.D, cache.F
        np.matmul(gy.T, F.reshape(N, -1), out=gW.reshape(self.n_out, -1))
        g, gA, gB = self._workspace(N)
        np.matmul(gy, self.W.reshape(self.n_out, -1), out=g.reshape(N, -1))

        # dF/dD = 2D and dD/dA = scale*B, dD/dB = scale*A.  D carries the
        # factors A and B, so g is already 0 wherever either relu is inactive:
        # that is the strict-indicator subgradient without explicit masks.
        g *= D
        g *= 2.0 * cache.scale
        np.multiply(g, B, out=gA)
        np.multiply(g, A, out=gB)
        trainable = self.config.trainable_endpoints
        if trainable:
            # batch sums as matrix-vector products: much cheaper than
            # sum(axis=0) when the basis axis is short
            np.matmul(self._ones(N), gA.reshape(N, -1), out=gE.reshape(-1))
            np.matmul(self._ones(N), gB.reshape(N, -1), out=gS.reshape(-1))
            np.negative(gS, out=gS)
        else:
            gS.fill(0.0)
            gE.fill(0.0)
        np.subtract(gB, gA, out=gA)
        grad_x = gA.sum(axis=2)

        if trainable and self.config.norm_mode == "dynamic":
            # scale = 4 / (E - S)^2  =>  d scale / dE = -2 scale / (E - S)
            # dL/dscale = sum (dL/dD) * A * B = sum g * D / scale^2
            g_scale = (g * D).sum(axis=0) / cache.scale**2
            ds = 2.0 * cache.scale / (self.E - self.S)
            gE -= g_scale * ds
            gS += g_scale * ds
        return LayerGrads(grad_x, gW, gS, gE)

    def _ones(self, N: int) -> np.ndarray:
        ones = getattr(self, "_ones_buf", None)
        if ones is None or ones.shape[0] != N:
            ones = self._ones_buf = np.ones(N)
        return ones

    def clamp_widths(self, floor: float = WIDTH_FLOOR) -> None:
        """Widen any support narrower than ``floor`` symmetrically about its center."""
        width = self.E - self.S
        bad = width < floor
        if np.any(bad):
            mid = 0.5 * (self.E[bad] + self.S[bad])
            self.S[bad] = mid - 0.5 * floor
            self.E[bad] = mid + 0.5 * floor

    # -- serialization ----------------------------------------------------

    def to_record(self) -> dict:
        """Flat record; array fields in the order S, E, W, each row-major."""
        return {
            "tag": "relukan-layer",
            "version": 1,
            "config": asdict(self.config),
            "S": self.S.ravel().tolist(),
            "E": self.E.ravel().tolist(),
            "W": self.W.ravel().tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ReluKanLayer":
        if rec.get("tag") != "relukan-layer":
            raise ParameterError(f"not a relukan layer record: tag={rec.get('tag')!r}")
        if rec.get("version") != 1:
            raise ParameterError(f"unsupported relukan layer record version {rec.get('version')!r}")
        config = ReluKanConfig(**rec["config"])
        shape = (config.n_in, config.n_basis)
        return cls(
            config,
            np.array(rec["S"], dtype=np.float64).reshape(shape),
            np.array(rec["E"], dtype=np.float64).reshape(shape),
            np.array(rec["W"], dtype=np.float64).reshape((config.n_out,) + shape),
        )
