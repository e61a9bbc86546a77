"""Saliency estimation from detector-style feature stacks.

S_l is the per-pixel channel L2 norm of layer l; the raw map is the mean of
the S_l resized to the latent grid. Finalizing normalizes over the crop mask,
blurs, clamps and zeroes the holes; the result is quantized to N levels before
it drives the modulation curves.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from analytics.numerics import DTYPE, DenseMap, bilinear_resize, gaussian_blur
from errors import (
    DegenerateMask,
    DimensionMismatch,
    EmptyInput,
    InvalidLevelCount,
    MaskOverlap,
    NonFiniteInput,
    RangeOutOfBounds,
)
from settings import BLUR_SIGMA, BLUR_SIZE, DEGENERATE_RANGE

logger = logging.getLogger(__name__)

PATTERNS = ("blobs", "checker", "ramp")


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """Layers of shape (channels, height, width)."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(np.asarray(l, dtype=DTYPE) for l in self.layers)
        if not layers:
            raise EmptyInput("feature stack has no layers")
        for i, l in enumerate(layers):
            if l.ndim != 3 or min(l.shape) < 1:
                raise DimensionMismatch(f"layer {i} must be (C, H, W) with C, H, W >= 1, got {l.shape}")
            if not np.isfinite(l).all():
                raise NonFiniteInput(f"layer {i} contains non-finite values")
        object.__setattr__(self, "layers", layers)

    def __len__(self) -> int:
        return len(self.layers)


@dataclass(frozen=True, eq=False)
class RegionMasks:
    """Crop mask M and hole mask on the latent grid; holes lie outside M."""

    crop_mask: np.ndarray
    hole_mask: np.ndarray | None = None

    def __post_init__(self):
        crop = np.asarray(self.crop_mask, dtype=bool)
        holes = np.zeros_like(crop) if self.hole_mask is None else np.asarray(self.hole_mask, dtype=bool)
        if crop.ndim != 2 or holes.shape != crop.shape:
            raise DimensionMismatch(f"crop mask {crop.shape} and hole mask {holes.shape} must be equal 2D grids")
        if (crop & holes).any():
            raise MaskOverlap(f"{int((crop & holes).sum())} hole pixels lie inside the crop mask")
        object.__setattr__(self, "crop_mask", crop)
        object.__setattr__(self, "hole_mask", holes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.crop_mask.shape

    @classmethod
    def from_box(cls, height: int, width: int, box: Sequence[int], holes: Sequence[int] | None = None) -> "RegionMasks":
        """Rectangular masks from (top, left, bottom, right), bottom/right exclusive."""
        def rect(b):
            m = np.zeros((height, width), dtype=bool)
            top, left, bottom, right = b
            m[top:bottom, left:right] = True
            return m
        return cls(rect(box), rect(holes) if holes else None)


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: DenseMap
    levels: int | None = None

    def __post_init__(self):
        v = self.values.values
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise RangeOutOfBounds(f"saliency outside [0, 1]: [{v.min()}, {v.max()}]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def flat(self) -> np.ndarray:
        return self.values.flat()


def snap_levels(values, N: int):
    """Nearest of {0, 1/(N-1), ..., 1}; ties round up."""
    if N < 2:
        raise InvalidLevelCount(f"quantization needs N >= 2, got {N}")
    v = np.asarray(values, dtype=np.float64)
    return np.floor(v * (N - 1) + 0.5) / (N - 1)


def feature_norm_map(layer: np.ndarray) -> DenseMap:
    arr = np.asarray(layer, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] < 1:
        raise EmptyInput(f"feature layer needs at least one channel, got shape {arr.shape}")
    return DenseMap(np.sqrt((arr * arr).sum(axis=0)).astype(DTYPE))


def aggregate_saliency(stack: FeatureStack, target_h: int, target_w: int) -> DenseMap:
    """Mean over layers of the resized feature-norm maps."""
    if target_h < 1 or target_w < 1:
        raise EmptyInput(f"target grid must be at least 1x1, got {target_h}x{target_w}")
    acc = np.zeros((target_h, target_w), dtype=np.float64)
    for layer in stack.layers:
        acc += bilinear_resize(feature_norm_map(layer), target_h, target_w).values
    logger.debug(f"Aggregated {len(stack)} feature layers onto {target_h}x{target_w}")
    return DenseMap((acc / len(stack)).astype(DTYPE))


def finalize_saliency(
    raw: DenseMap,
    masks: RegionMasks,
    blur_size: int = BLUR_SIZE,
    blur_sigma: float = BLUR_SIGMA,
) -> SaliencyMap:
    """normalize over M -> blur -> clamp -> zero holes."""
    if raw.shape != masks.shape:
        raise DimensionMismatch(f"raw saliency {raw.shape} vs masks {masks.shape}")
    crop = masks.crop_mask
    if not crop.any():
        raise DegenerateMask("crop mask is empty")

    v = raw.values.astype(np.float64)
    inside = v[crop]
    lo, hi = float(inside.min()), float(inside.max())
    norm = np.zeros_like(v)
    if hi - lo < DEGENERATE_RANGE:
        logger.warning("Saliency is flat over the crop mask; using neutral 0.5")
        norm[crop] = 0.5
    else:
        norm[crop] = (inside - lo) / (hi - lo)

    blurred = gaussian_blur(DenseMap(norm.astype(DTYPE)), blur_size, blur_sigma).values
    out = np.clip(blurred, 0.0, 1.0)
    out[masks.hole_mask] = 0.0
    return SaliencyMap(DenseMap(out))


def quantize_saliency(s: SaliencyMap, N: int) -> SaliencyMap:
    snapped = snap_levels(s.values.values, N)
    return SaliencyMap(DenseMap(snapped.astype(DTYPE)), levels=N)


def rescale_saliency(s_original: SaliencyMap, lam: float) -> SaliencyMap:
    """clamp(lam * S, 0, 1), re-quantized when the input was quantized."""
    if not np.isfinite(lam):
        raise NonFiniteInput(f"saliency scale must be finite, got {lam}")
    scaled = np.clip(float(lam) * s_original.values.values.astype(np.float64), 0.0, 1.0)
    out = SaliencyMap(DenseMap(scaled.astype(DTYPE)))
    return quantize_saliency(out, s_original.levels) if s_original.levels else out


def _draw_centers(rng: np.random.Generator, height: int, width: int, bumps: int) -> np.ndarray:
    return np.stack([rng.integers(0, height, bumps), rng.integers(0, width, bumps)], axis=1)


def blob_centers(seed: int, height: int, width: int, bumps: int) -> np.ndarray:
    """Integer (row, col) bump centers synth_features uses for ``seed``."""
    return _draw_centers(np.random.default_rng(seed), height, width, bumps)


def synth_features(
    pattern: str,
    seed: int,
    height: int,
    width: int,
    layers: int = 2,
    channels: int = 4,
    bumps: int = 3,
) -> FeatureStack:
    """Deterministic stand-in for detector features.

    Layer l has resolution (height, width) / 2**l. Every channel is a positive
    gain times a shared spatial pattern, so the norm map is that pattern scaled.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown feature pattern {pattern!r}, expected one of {PATTERNS}")
    if height < 1 or width < 1 or layers < 1 or channels < 1:
        raise EmptyInput(f"invalid synthetic dims {layers}x{channels}x{height}x{width}")

    rng = np.random.default_rng(seed)
    centers = _draw_centers(rng, height, width, bumps)
    amps = rng.uniform(0.5, 1.0, bumps)
    if bumps:
        amps[0] = 1.5
    spread = max(1.0, min(height, width) / 6.0)

    out = []
    for l in range(layers):
        h, w = max(1, height >> l), max(1, width >> l)
        sy, sx = height / h, width / w
        # layer pixel centers in base-grid coordinates
        ys = (np.arange(h) + 0.5) * sy - 0.5
        xs = (np.arange(w) + 0.5) * sx - 0.5
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        if pattern == "ramp":
            field = (xx + 1.0) / width
        elif pattern == "checker":
            field = 0.25 + 0.75 * ((np.floor(yy / 2) + np.floor(xx / 2)) % 2)
        else:
            field = np.full((h, w), 1e-3)
            for (cy, cx), a in zip(centers, amps):
                field += a * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * spread ** 2))
        gains = rng.uniform(0.5, 1.5, channels)
        out.append((gains[:, None, None] * field[None]).astype(DTYPE))
    return FeatureStack(tuple(out))
