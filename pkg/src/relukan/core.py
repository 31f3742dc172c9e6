"""Dense float64 matrix helpers and seeded random streams.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 in C
(row-major) order.  The helpers here add the shape checks the rest of the
package relies on; hot loops in the layers use numpy broadcasting directly.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """An argument is outside its valid range."""


def as_matrix(values) -> np.ndarray:
    m = np.array(values, dtype=np.float64, order="C", ndmin=2)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=np.float64)


def ones(rows: int, cols: int) -> np.ndarray:
    return np.ones((rows, cols), dtype=np.float64)


def _check_same(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} does not match {b.shape}")


def relu(m: np.ndarray) -> np.ndarray:
    return np.maximum(m, 0.0)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b, "hadamard")
    return a * b


def frobenius_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of ``a * b`` over every position.

    Accumulation runs sequentially in row-major order (``math.fsum`` is not
    used on purpose: the result must match a plain left-to-right sum).
    """
    _check_same(a, b, "frobenius_inner")
    total = 0.0
    for v in (a * b).ravel(order="C").tolist():
        total += v
    return total


def scale(a: np.ndarray, alpha: float) -> np.ndarray:
    return a * float(alpha)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b, "add")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b, "sub")
    return a - b


def broadcast_col(x, cols: int) -> np.ndarray:
    """Tile a length-n vector into an n x cols matrix (row i is all x[i])."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"broadcast_col expects a vector, got shape {v.shape}")
    if cols < 0:
        raise ParameterError(f"cols must be non-negative, got {cols}")
    return np.repeat(v[:, None], cols, axis=1)


# -- random streams ---------------------------------------------------------
#
# Generators are numpy's PCG64 (128-bit LCG state, 64-bit output with an
# XSL-RR permutation).  Sub-streams come from SeedSequence.spawn-style
# derivation keyed by an integer stream id, so stream 3 is the same no matter
# how many other streams were requested before it.


def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    if stream is None:
        ss = np.random.SeedSequence(seed)
    else:
        ss = np.random.SeedSequence(seed, spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def substream(rng: np.random.Generator, stream: int) -> np.random.Generator:
    """Independent child generator of ``rng`` identified by ``stream``.

    Does not advance ``rng``.
    """
    parent = rng.bit_generator.seed_seq
    ss = np.random.SeedSequence(
        parent.entropy, spawn_key=tuple(parent.spawn_key) + (int(stream),)
    )
    return np.random.Generator(np.random.PCG64(ss))


def rng_uniform(rng: np.random.Generator, lo: float, hi: float, shape) -> np.ndarray:
    if not lo < hi:
        raise ParameterError(f"uniform bounds need lo < hi, got [{lo}, {hi})")
    return rng.uniform(lo, hi, size=shape)


def rng_normal(rng: np.random.Generator, mean: float, std: float, shape) -> np.ndarray:
    if not std > 0:
        raise ParameterError(f"normal std must be positive, got {std}")
    return rng.normal(mean, std, size=shape)
