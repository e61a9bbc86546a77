from __future__ import annotations
import logging
from pathlib import Path
from typing import Iterable

import numpy as np

from analytics.numerics import DenseMap, bilinear_resize
from analytics.saliency import FeatureStack, RegionMasks
from data_sources.formats import read_pfm, read_pgm, read_tnsr
from errors import DimensionMismatch, FormatError

logger = logging.getLogger(__name__)


def load_feature_stack(paths: Iterable[Path]) -> FeatureStack:
    """Load detector feature layers from TNSR files.

    Each file holds one layer (C, H, W) or several equal-sized layers (L, C, H, W).
    The producer is expected to have zeroed the pixels outside the crop mask
    before running the detector.

    Args:
        paths: TNSR files in layer order

    Returns:
        FeatureStack with every layer found
    """
    layers = []
    for p in paths:
        arr = read_tnsr(Path(p))
        if arr.ndim == 3:
            layers.append(arr)
        elif arr.ndim == 4:
            layers.extend(arr)
        else:
            raise FormatError(f"{p}: feature tensors must be rank 3 or 4, got rank {arr.ndim}")
    logger.info(f"Loaded {len(layers)} feature layers")
    return FeatureStack(tuple(layers))


def load_map(path: Path) -> DenseMap:
    """PFM as-is, PGM scaled to [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return DenseMap(read_pgm(path).astype(np.float32) / 255.0)
    return DenseMap(read_pfm(path))


def load_mask(path: Path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Binary mask from a PGM: any nonzero pixel is inside."""
    mask = read_pgm(Path(path)) > 0
    if shape is not None and mask.shape != tuple(shape):
        raise DimensionMismatch(f"{path}: mask is {mask.shape}, grid is {tuple(shape)}")
    return mask


def load_region_masks(crop_path: Path, hole_path: Path | None, shape: tuple[int, int]) -> RegionMasks:
    crop = load_mask(crop_path, shape)
    holes = load_mask(hole_path, shape) if hole_path else None
    if holes is not None and not holes.any():
        logger.warning(f"Hole mask {hole_path} is empty")
    return RegionMasks(crop, holes)


def load_composite(path: Path, shape: tuple[int, int]) -> DenseMap:
    """Composite (input image) proxy map, resized to the latent grid if needed."""
    m = load_map(path)
    if m.shape != tuple(shape):
        logger.info(f"Resizing composite {m.shape} to {tuple(shape)}")
        m = bilinear_resize(m, *shape)
    return m
