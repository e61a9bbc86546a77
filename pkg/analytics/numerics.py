"""Dense numeric substrate: 2D maps, matrices and the handful of kernels the
attention and saliency code needs.

Everything is stored as 32-bit reals; sums are accumulated in 64-bit and the
reduction order is fixed, so fixed-seed runs are bit-stable.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from errors import DimensionMismatch, EmptyInput, InvalidKernel, NonFiniteInput, NotADistribution

logger = logging.getLogger(__name__)

DTYPE = np.float32


def _as_grid(values, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteInput(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class DenseMap:
    """Scalar field on a height x width grid, row-major."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_grid(self.values, "DenseMap"))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def constant(cls, height: int, width: int, value: float) -> "DenseMap":
        return cls(np.full((height, width), value, dtype=DTYPE))


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """rows x cols matrix, row-major. Token blocks are rows=tokens."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_grid(self.values, "DenseMatrix"))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def identity(cls, n: int) -> "DenseMatrix":
        return cls(np.eye(n, dtype=DTYPE))


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if a.cols != b.rows:
        raise DimensionMismatch(f"matmul: {a.shape} x {b.shape}")
    out = a.values.astype(np.float64) @ b.values.astype(np.float64)
    return DenseMatrix(out.astype(DTYPE))


def softmax_rows(logits: DenseMatrix) -> DenseMatrix:
    x = logits.values.astype(np.float64)
    if not np.isfinite(x).all():
        raise NonFiniteInput("softmax_rows: non-finite logits")
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return DenseMatrix((e / e.sum(axis=1, keepdims=True)).astype(DTYPE))


def _resize_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers, clamped at the borders (align_corners=False)
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(dense_map: DenseMap, out_h: int, out_w: int) -> DenseMap:
    if dense_map.values.size == 0:
        raise EmptyInput("bilinear_resize: empty map")
    if out_h < 1 or out_w < 1:
        raise EmptyInput(f"bilinear_resize: output dims must be >= 1, got {out_h}x{out_w}")
    v = dense_map.values.astype(np.float64)
    lo, hi, f = _resize_axis(dense_map.height, out_h)
    rows = v[lo] * (1.0 - f)[:, None] + v[hi] * f[:, None]
    lo, hi, f = _resize_axis(dense_map.width, out_w)
    out = rows[:, lo] * (1.0 - f)[None, :] + rows[:, hi] * f[None, :]
    return DenseMap(out.astype(DTYPE))


def gaussian_kernel_1d(kernel_size: int, sigma: float) -> np.ndarray:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidKernel(f"kernel size must be a positive odd count, got {kernel_size}")
    if not sigma > 0:
        raise InvalidKernel(f"sigma must be positive, got {sigma}")
    c = kernel_size // 2
    x = np.arange(kernel_size, dtype=np.float64) - c
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(dense_map: DenseMap, kernel_size: int, sigma: float) -> DenseMap:
    """Separable Gaussian blur with edge replication at the borders."""
    k = gaussian_kernel_1d(kernel_size, sigma)
    c = kernel_size // 2
    h, w = dense_map.shape
    v = np.pad(dense_map.values.astype(np.float64), c, mode="edge")

    rows = np.zeros((h + 2 * c, w), dtype=np.float64)
    for i, wt in enumerate(k):
        rows += wt * v[:, i:i + w]
    out = np.zeros((h, w), dtype=np.float64)
    for i, wt in enumerate(k):
        out += wt * rows[i:i + h, :]
    return DenseMap(out.astype(DTYPE))


def row_entropy(weights: DenseMatrix, tol: float = 1e-4) -> np.ndarray:
    """Shannon entropy (nats) of each row; 0 * ln 0 is taken as 0."""
    p = weights.values.astype(np.float64)
    sums = p.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size or (p < 0).any():
        raise NotADistribution(f"row_entropy: {bad.size} rows are not distributions")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=1)


def minmax_normalize(values: np.ndarray, degenerate: float = 0.5, eps: float = 1e-8) -> np.ndarray:
    """Rescale to [0, 1]; a flat input (max - min < eps) becomes ``degenerate``."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < eps:
        return np.full(v.shape, degenerate, dtype=np.float64)
    return (v - lo) / (hi - lo)
