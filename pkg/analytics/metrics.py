from __future__ import annotations
import logging

import numpy as np

from analytics.numerics import DTYPE, DenseMatrix
from errors import DimensionMismatch, EmptyQuerySet, IndexOutOfRange, ZeroOutwardMass

logger = logging.getLogger(__name__)

ZERO_MASS = 1e-12


def k_in_block(weights: DenseMatrix, t_in: int, renormalize: bool = True) -> DenseMatrix:
    """Slice the input-image key columns out of joint attention weights.

    Args:
        weights: [T_out x (T_out + T_in)] joint weights, or an already sliced [T_out x T_in] block
        t_in: Number of input-image tokens
        renormalize: Rescale each row to sum to 1 over the input-image keys

    Returns:
        [T_out x T_in] block
    """
    w = weights.values
    if w.shape[1] < t_in:
        raise DimensionMismatch(f"weights have {w.shape[1]} columns, need at least {t_in}")
    block = w[:, w.shape[1] - t_in:].astype(np.float64)
    if renormalize:
        sums = block.sum(axis=1, keepdims=True)
        block = np.divide(block, sums, out=np.zeros_like(block), where=sums > 0)
    return DenseMatrix(block.astype(DTYPE))


def _query_rows(n_rows: int, key_mask: np.ndarray, query_mask) -> np.ndarray:
    if query_mask is None:
        if n_rows != key_mask.size:
            raise DimensionMismatch(
                f"crop queries default to the key mask, but weights have {n_rows} rows for {key_mask.size} keys"
            )
        return np.flatnonzero(key_mask)
    q = np.asarray(query_mask)
    if q.dtype == bool:
        q = q.reshape(-1)
        if q.size != n_rows:
            raise DimensionMismatch(f"query mask has {q.size} entries for {n_rows} rows")
        return np.flatnonzero(q)
    return q.astype(np.int64).reshape(-1)


def inward_outward_ratio(weights: DenseMatrix, mask: np.ndarray, query_mask=None) -> float:
    """Attention mass crop queries send inside the crop mask over the mass sent outside.

    Args:
        weights: [T_out x T_in] rows of attention over input-image keys
        mask: Crop mask over the input-image keys (2D grid or flat)
        query_mask: Rows to include (bool mask or indices); defaults to the crop mask

    Returns:
        R = sum_{q in M} sum_{k in M} W / sum_{q in M} sum_{k not in M} W
    """
    key_mask = np.asarray(mask, dtype=bool).reshape(-1)
    w = weights.values
    if w.shape[1] != key_mask.size:
        raise DimensionMismatch(f"weights have {w.shape[1]} key columns, mask has {key_mask.size}")
    rows = _query_rows(w.shape[0], key_mask, query_mask)
    if rows.size == 0:
        raise EmptyQuerySet("no crop queries to measure")

    sel = w[rows].astype(np.float64)
    inward = float(sel[:, key_mask].sum())
    outward = float(sel[:, ~key_mask].sum())
    if outward < ZERO_MASS:
        raise ZeroOutwardMass(f"outward attention mass {outward:.3e} is zero")
    return inward / outward


def inward_mass(weights: DenseMatrix, mask: np.ndarray) -> np.ndarray:
    """Per-row fraction of attention landing on in-mask keys."""
    key_mask = np.asarray(mask, dtype=bool).reshape(-1)
    w = weights.values.astype(np.float64)
    if w.shape[1] != key_mask.size:
        raise DimensionMismatch(f"weights have {w.shape[1]} key columns, mask has {key_mask.size}")
    total = w.sum(axis=1)
    return np.divide(w[:, key_mask].sum(axis=1), total, out=np.zeros_like(total), where=total > 0)


def profile_fwhm(profile, peak: int) -> int:
    """Width of the contiguous run around ``peak`` whose values reach half the peak value."""
    p = np.asarray(profile, dtype=np.float64).reshape(-1)
    if not 0 <= peak < p.size:
        raise IndexOutOfRange(f"peak {peak} outside profile of length {p.size}")
    half = 0.5 * p[peak]
    lo = peak
    while lo > 0 and p[lo - 1] >= half:
        lo -= 1
    hi = peak
    while hi < p.size - 1 and p[hi + 1] >= half:
        hi += 1
    return hi - lo + 1
