"""Multi-layer KANs built from a width vector.

``[n_1, ..., n_L]`` gives L-1 layers; layer t maps n_t inputs to n_{t+1}
outputs and feeds its output straight into the next layer (no activation in
between).  Every layer in a network is of the same kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bspline import BsplineGrid, BsplineKanLayer, _sigmoid
from .core import DimensionError, ParameterError, make_rng, substream
from .layer import WIDTH_FLOOR, ContractError, ReluKanConfig, ReluKanLayer

KINDS = ("relukan", "bspline")
CHECKPOINT_VERSION = 1


@dataclass
class Param:
    """A live view of one parameter block and its gradient buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray
    trainable: bool


@dataclass
class Network:
    kind: str
    widths: list[int]
    G: int
    k: int
    layers: list
    trainable_endpoints: bool = False
    norm_mode: str = "constant"
    squash: bool = False
    _params: list[Param] = field(default_factory=list, repr=False)
    _buffers: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for t in range(len(self.layers) - 1):
            if self.layers[t].n_out != self.layers[t + 1].n_in:
                raise DimensionError(
                    f"layer {t} outputs {self.layers[t].n_out} values, layer {t + 1} expects {self.layers[t + 1].n_in}"
                )
        blocks = [(t, name, arr, trainable)
                  for t, layer in enumerate(self.layers)
                  for name, arr, trainable in layer.parameters()]
        # Trainable values live in one flat buffer (gradients in a twin) so the
        # optimizer touches a single array per step.  Storage order puts every
        # S block, then every E block, last, so all widths E - S are a single
        # vectorized difference.
        rank = {"S": 1, "E": 2}
        live = sorted((b for b in blocks if b[3]), key=lambda b: (rank.get(b[1], 0), b[0]))
        self._theta = np.empty(sum(b[2].size for b in live))
        self._grad = np.zeros_like(self._theta)
        views, pos = {}, 0
        for t, name, arr, _ in live:
            n = arr.size
            self._theta[pos:pos + n] = arr.ravel()
            views[t, name] = (self._theta[pos:pos + n].reshape(arr.shape),
                              self._grad[pos:pos + n].reshape(arr.shape))
            setattr(self.layers[t], name, views[t, name][0])
            pos += n
        self._params = []
        for t, name, arr, trainable in blocks:
            value, grad = views.get((t, name), (arr, np.zeros_like(arr)))
            self._params.append(Param(f"layer{t}.{name}", value, grad, trainable))
        self._widths_view = None
        if self.kind == "relukan" and self.trainable_endpoints:
            n_se = sum(layer.S.size for layer in self.layers)
            end = self._theta.size
            self._widths_view = (self._theta[end - 2 * n_se:end - n_se], self._theta[end - n_se:],
                                 np.empty(n_se))

    def params(self) -> list[Param]:
        """Parameters ordered by layer, then W, S, E (or coef, w_b, w_s)."""
        return self._params

    def flat_params(self) -> list[Param]:
        """All trainable parameters as one flat block, for the optimizer."""
        return [Param("flat", self._theta, self._grad, True)]

    def n_params(self, trainable_only: bool = True) -> int:
        return sum(p.value.size for p in self._params if p.trainable or not trainable_only)

    def zero_grad(self) -> None:
        for p in self._params:
            p.grad.fill(0.0)

    def forward(self, x, reuse_buffers: bool = False):
        """Returns ``(y, caches)``; ``x`` is (N, widths[0]) or a single vector.

        With ``reuse_buffers`` the ReLU-KAN intermediates are written into
        buffers owned by the network, so the caches stay valid only until the
        next reusing call.  The training loop uses this to avoid reallocating
        the same large arrays every step.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.widths[0]:
            raise DimensionError(f"input shape {x.shape} does not fit input width {self.widths[0]}")
        caches = []
        for t, layer in enumerate(self.layers):
            pre = h
            if self.squash and t > 0:
                h = _sigmoid(h)
            if reuse_buffers and self.kind == "relukan":
                h, cache = layer.forward(h, out=self._buffer(t, h.shape[0]))
            else:
                h, cache = layer.forward(h)
            caches.append((pre, cache))
        return (h[0] if single else h), caches

    def _buffer(self, t: int, n: int) -> np.ndarray:
        shape = (4, n) + self.layers[t].S.shape
        buf = self._buffers.get(t)
        if buf is None or buf.shape != shape:
            buf = self._buffers[t] = np.empty(shape)
        return buf

    def backward(self, caches, grad_y) -> np.ndarray:
        """Write parameter gradients into the ``params()`` buffers.

        Buffers are overwritten, not accumulated.  Returns the gradient with
        respect to the network input.
        """
        if len(caches) != len(self.layers):
            raise ContractError(f"got {len(caches)} caches for {len(self.layers)} layers")
        g = np.asarray(grad_y, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        per_layer = len(self._params) // len(self.layers)
        for t in reversed(range(len(self.layers))):
            pre, cache = caches[t]
            mine = self._params[t * per_layer:(t + 1) * per_layer]
            g = self.layers[t].backward(cache, g, out=[p.grad for p in mine]).x
            if self.squash and t > 0:
                s = _sigmoid(pre)
                g = g * s * (1.0 - s)
        return g

    def clamp_widths(self, floor: float = WIDTH_FLOOR) -> None:
        if self._widths_view is None:
            return
        S, E, width = self._widths_view
        np.subtract(E, S, out=width)
        if width.min() < floor:
            for layer in self.layers:
                layer.clamp_widths(floor)

    # -- checkpoints ------------------------------------------------------

    def header(self) -> dict:
        return {
            "format": "relukan-checkpoint",
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "widths": list(self.widths),
            "G": self.G,
            "k": self.k,
            "trainable_endpoints": self.trainable_endpoints,
            "norm_mode": self.norm_mode,
            "squash": self.squash,
        }

    def save(self, path) -> None:
        doc = {"header": self.header(), "layers": [layer.to_record() for layer in self.layers]}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "Network":
        doc = json.loads(Path(path).read_text())
        head = doc["header"]
        if head.get("format") != "relukan-checkpoint" or head.get("version") != CHECKPOINT_VERSION:
            raise ParameterError(f"unrecognized checkpoint header {head!r}")
        layer_cls = ReluKanLayer if head["kind"] == "relukan" else BsplineKanLayer
        layers = [layer_cls.from_record(rec) for rec in doc["layers"]]
        return cls(
            head["kind"], head["widths"], head["G"], head["k"], layers,
            trainable_endpoints=head["trainable_endpoints"],
            norm_mode=head["norm_mode"], squash=head["squash"],
        )


def build(kind: str, widths, G: int = 5, k: int = 3, trainable_endpoints: bool = True,
          rng: np.random.Generator | int = 0, norm_mode: str = "constant",
          squash: bool = False) -> Network:
    """Construct a network; layer t draws its initial values from sub-stream t.

    ``rng`` may be a seed or a generator.  Sub-streams are derived without
    advancing the parent, so adding layers never changes earlier layers.
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown network kind {kind!r}; expected one of {KINDS}")
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ParameterError(f"width vector needs at least 2 entries, got {widths}")
    if any(w < 1 for w in widths):
        raise ParameterError(f"widths must be positive, got {widths}")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(int(rng))

    layers = []
    for t, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        sub = substream(rng, t)
        if kind == "relukan":
            cfg = ReluKanConfig(n_in, n_out, G, k, trainable_endpoints, norm_mode)
            layers.append(ReluKanLayer.init(cfg, sub))
        else:
            layers.append(BsplineKanLayer.init(n_in, n_out, BsplineGrid(G, k), sub))
    return Network(kind, widths, G, k, layers,
                   trainable_endpoints=trainable_endpoints and kind == "relukan",
                   norm_mode=norm_mode, squash=squash)
