"""Axial 2D rotary positional embedding with an inverse range factor.

Sub-vector d of a token is rotated by theta_d * r * m, where m is the token's
coordinate along the sub-vector's axis and r in [0, 1] compresses distances.
Tokens are rows; sub-vectors are consecutive feature pairs. In axial mode the
first half of the features follows x and the second half follows y.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from analytics.numerics import DTYPE, DenseMatrix
from errors import DimensionMismatch, InvalidDimension, RangeOutOfBounds

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    theta_base: float
    D: int
    frequencies: np.ndarray


def build_frequencies(theta_base: float, D: int) -> FrequencyTable:
    """Geometric progression theta_base ** (d / (D - 1)); D == 1 gives {1}."""
    if D < 1:
        raise InvalidDimension(f"need at least one sub-vector frequency, got D={D}")
    if not theta_base > 0:
        raise RangeOutOfBounds(f"theta_base must be positive, got {theta_base}")
    if D == 1:
        freqs = np.ones(1, dtype=np.float64)
    else:
        freqs = float(theta_base) ** (np.arange(D, dtype=np.float64) / (D - 1))
        freqs[0] = 1.0
        freqs[-1] = float(theta_base)
    return FrequencyTable(float(theta_base), D, freqs)


@dataclass(frozen=True, eq=False)
class PositionGrid:
    """Per-token (x, y) coordinates on a height x width grid.

    Coordinates are kept as reals so scaled positions (r * m) can be expressed
    directly; ``block_offset`` is added on both axes when rotating.
    """

    height: int
    width: int
    xs: np.ndarray
    ys: np.ndarray
    block_offset: int = 0

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64).reshape(-1)
        ys = np.asarray(self.ys, dtype=np.float64).reshape(-1)
        if xs.shape != ys.shape:
            raise DimensionMismatch(f"x/y coordinate counts differ: {xs.size} vs {ys.size}")
        if xs.size and (xs.min() < 0 or xs.max() > self.width - 1 or ys.min() < 0 or ys.max() > self.height - 1):
            raise RangeOutOfBounds(f"coordinates outside the {self.height}x{self.width} grid")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @classmethod
    def for_grid(cls, height: int, width: int, block_offset: int = 0) -> "PositionGrid":
        ys, xs = np.divmod(np.arange(height * width), width)
        return cls(height, width, xs, ys, block_offset)

    def __len__(self) -> int:
        return self.xs.size

    def take(self, indices) -> "PositionGrid":
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        return PositionGrid(self.height, self.width, self.xs[idx], self.ys[idx], self.block_offset)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return self.xs + self.block_offset, self.ys + self.block_offset

    def linear(self) -> np.ndarray:
        return self.ys * self.width + self.xs + self.block_offset


@dataclass(frozen=True)
class RangeFactor:
    r: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise RangeOutOfBounds(f"inverse range factor must lie in [0, 1], got {self.r}")


def _range(r) -> float:
    return RangeFactor(r).r if not isinstance(r, RangeFactor) else r.r


def rotation_angles(positions: PositionGrid, freqs: FrequencyTable, r: float, axial: bool) -> np.ndarray:
    """(T, sub-vectors) angle table, computed in float64."""
    if axial:
        xs, ys = positions.axes()
        return np.concatenate([np.outer(r * xs, freqs.frequencies), np.outer(r * ys, freqs.frequencies)], axis=1)
    return np.outer(r * positions.linear(), freqs.frequencies)


def rotate_tokens(
    tokens: DenseMatrix,
    positions: PositionGrid,
    freqs: FrequencyTable,
    r: float | RangeFactor = 1.0,
    axial: bool = True,
) -> DenseMatrix:
    r = _range(r)
    width = (4 if axial else 2) * freqs.D
    if tokens.cols != width:
        raise DimensionMismatch(
            f"token width {tokens.cols} does not match {'axial' if axial else '1D'} RoPE with D={freqs.D} (need {width})"
        )
    if tokens.rows != len(positions):
        raise DimensionMismatch(f"{tokens.rows} tokens but {len(positions)} positions")

    angles = rotation_angles(positions, freqs, r, axial)
    cos, sin = np.cos(angles), np.sin(angles)
    v = tokens.values.astype(np.float64)
    even, odd = v[:, 0::2], v[:, 1::2]
    out = np.empty_like(v)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return DenseMatrix(out.astype(DTYPE))


def rotate_query_key_pair(
    q: DenseMatrix,
    K: DenseMatrix,
    positions_q: PositionGrid,
    positions_K: PositionGrid,
    freqs: FrequencyTable,
    r: float | RangeFactor = 1.0,
    axial: bool = True,
) -> tuple[DenseMatrix, DenseMatrix]:
    """Rotate both sides with the same r so q.k depends on r * (m - n) only."""
    return (
        rotate_tokens(q, positions_q, freqs, r, axial),
        rotate_tokens(K, positions_K, freqs, r, axial),
    )
