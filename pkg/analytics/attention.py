"""Joint attention over output-image and input-image tokens, with content-aware
manipulation of the (crop query, input key) block.

For every output query q inside the crop mask M, q and K_in are rotated with
the saliency-dependent inverse range factor r(S(q)), and the resulting logits
at in-mask keys are multiplied by k(S(q)). The (q, K_out) block and all
non-crop queries keep standard RoPE. Softmax runs over the full joint row.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from analytics.metrics import inward_mass, inward_outward_ratio, k_in_block
from analytics.modulation import ModulationCurve, eval_curve
from analytics.numerics import DTYPE, DenseMatrix, matmul, row_entropy, softmax_rows
from analytics.rope import FrequencyTable, PositionGrid, build_frequencies, rotate_tokens
from analytics.saliency import SaliencyMap
from errors import DimensionMismatch, InactiveConfig, SaliencyNotQuantized
from settings import THETA_BASE

__all__ = [
    "AttentionInputs",
    "AttentionConfig",
    "AttentionOutput",
    "baseline_attention",
    "modulated_attention_naive",
    "modulated_attention",
    "run_attention",
    "inward_outward_ratio",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AttentionInputs:
    """Token blocks are [T x head_count * head_dim]; head h owns columns h*d:(h+1)*d."""

    q_out: DenseMatrix
    k_out: DenseMatrix
    v_out: DenseMatrix
    k_in: DenseMatrix
    v_in: DenseMatrix
    positions_out: PositionGrid
    positions_in: PositionGrid
    crop_mask: np.ndarray
    saliency: SaliencyMap
    head_count: int = 1
    head_dim: int | None = None
    theta_base: float = THETA_BASE
    axial: bool = True
    freqs: FrequencyTable = field(init=False)

    def __post_init__(self):
        if self.head_dim is None:
            object.__setattr__(self, "head_dim", self.q_out.cols // max(self.head_count, 1))
        d, heads = self.head_dim, self.head_count
        if heads < 1 or d < 1:
            raise DimensionMismatch(f"need at least one head of positive width, got {heads} x {d}")
        if d % (4 if self.axial else 2):
            raise DimensionMismatch(f"head_dim {d} must be divisible by {4 if self.axial else 2}")

        grid = self.positions_out.height * self.positions_out.width
        t_out, t_in = len(self.positions_out), len(self.positions_in)
        if t_out != grid or t_in != grid:
            raise DimensionMismatch(f"token counts ({t_out}, {t_in}) must both equal the grid size {grid}")
        for name, block, rows in (
            ("q_out", self.q_out, t_out), ("k_out", self.k_out, t_out), ("v_out", self.v_out, t_out),
            ("k_in", self.k_in, t_in), ("v_in", self.v_in, t_in),
        ):
            if block.shape != (rows, heads * d):
                raise DimensionMismatch(f"{name} has shape {block.shape}, expected {(rows, heads * d)}")

        mask = np.asarray(self.crop_mask, dtype=bool)
        hw = (self.positions_out.height, self.positions_out.width)
        if mask.shape != hw or self.saliency.shape != hw:
            raise DimensionMismatch(f"mask {mask.shape} / saliency {self.saliency.shape} must match grid {hw}")
        object.__setattr__(self, "crop_mask", mask)
        object.__setattr__(self, "freqs", build_frequencies(self.theta_base, d // (4 if self.axial else 2)))

    @property
    def tokens(self) -> int:
        return len(self.positions_out)

    def head(self, block: DenseMatrix, h: int) -> DenseMatrix:
        d = self.head_dim
        return DenseMatrix(block.values[:, h * d:(h + 1) * d])


@dataclass(frozen=True)
class AttentionConfig:
    r_curve: ModulationCurve
    k_curve: ModulationCurve
    active: bool = True
    rope_scaling: bool = True
    attn_scaling: bool = True
    scale: float | None = None

    def resolve_scale(self, head_dim: int) -> float:
        s = self.scale if self.scale is not None else 1.0 / math.sqrt(head_dim)
        if not s > 0:
            raise DimensionMismatch(f"attention scale must be positive, got {s}")
        return s

    def factors(self, s: float) -> tuple[float, float]:
        r = eval_curve(self.r_curve, s) if self.rope_scaling else 1.0
        k = eval_curve(self.k_curve, s) if self.attn_scaling else 1.0
        return r, k


@dataclass(frozen=True, eq=False)
class AttentionOutput:
    context: DenseMatrix
    weights: tuple[DenseMatrix, ...]
    entropy: np.ndarray
    inward_mass: np.ndarray
    ratio: float | None = None
    k_in_rotations: int = 0


def _transpose(m: DenseMatrix) -> DenseMatrix:
    return DenseMatrix(m.values.T)


def _baseline_head(inputs: AttentionInputs, h: int, scale: float):
    freqs, axial = inputs.freqs, inputs.axial
    q_r = rotate_tokens(inputs.head(inputs.q_out, h), inputs.positions_out, freqs, 1.0, axial)
    k_out_r = rotate_tokens(inputs.head(inputs.k_out, h), inputs.positions_out, freqs, 1.0, axial)
    k_in_r = rotate_tokens(inputs.head(inputs.k_in, h), inputs.positions_in, freqs, 1.0, axial)
    logits = np.concatenate(
        [matmul(q_r, _transpose(k_out_r)).values, matmul(q_r, _transpose(k_in_r)).values], axis=1
    ).astype(np.float64) * scale
    return logits


def _modulated_logits(inputs: AttentionInputs, q: DenseMatrix, rows: np.ndarray, r: float, k: float, scale: float, h: int):
    """Rotate the selected queries and all of K_in with r, scale in-mask logits by k."""
    q_r = rotate_tokens(q, inputs.positions_out.take(rows), inputs.freqs, r, inputs.axial)
    k_in_r = rotate_tokens(inputs.head(inputs.k_in, h), inputs.positions_in, inputs.freqs, r, inputs.axial)
    w = matmul(q_r, _transpose(k_in_r)).values.astype(np.float64) * scale
    w[:, inputs.crop_mask.reshape(-1)] *= k
    return w


def _finish(inputs: AttentionInputs, head_logits: list[np.ndarray], rotations: int) -> AttentionOutput:
    t = inputs.tokens
    key_mask = inputs.crop_mask.reshape(-1)
    contexts, weights, entropies, masses, ratios = [], [], [], [], []
    for h, logits in enumerate(head_logits):
        w = softmax_rows(DenseMatrix(logits.astype(DTYPE)))
        values = DenseMatrix(np.concatenate([inputs.head(inputs.v_out, h).values, inputs.head(inputs.v_in, h).values]))
        contexts.append(matmul(w, values).values)
        weights.append(w)
        entropies.append(row_entropy(w))
        block = k_in_block(w, t)
        masses.append(inward_mass(block, key_mask))
        if key_mask.any() and not key_mask.all():
            ratios.append(inward_outward_ratio(block, key_mask))
    return AttentionOutput(
        context=DenseMatrix(np.concatenate(contexts, axis=1)),
        weights=tuple(weights),
        entropy=np.mean(entropies, axis=0),
        inward_mass=np.mean(masses, axis=0),
        ratio=float(np.mean(ratios)) if ratios else None,
        k_in_rotations=rotations,
    )


def baseline_attention(inputs: AttentionInputs, scale: float | None = None) -> AttentionOutput:
    s = scale if scale is not None else 1.0 / math.sqrt(inputs.head_dim)
    return _finish(inputs, [_baseline_head(inputs, h, s) for h in range(inputs.head_count)], 0)


def _crop_queries(inputs: AttentionInputs) -> np.ndarray:
    return np.flatnonzero(inputs.crop_mask.reshape(-1))


def modulated_attention_naive(inputs: AttentionInputs, config: AttentionConfig) -> AttentionOutput:
    """Literal per-query loop: one q and K_in rotation per crop query."""
    if not config.active:
        raise InactiveConfig("modulated attention called with an inactive config")
    scale = config.resolve_scale(inputs.head_dim)
    sal = inputs.saliency.flat()
    t = inputs.tokens
    rotations = 0
    head_logits = []
    for h in range(inputs.head_count):
        logits = _baseline_head(inputs, h, scale)
        q_h = inputs.head(inputs.q_out, h)
        for i in _crop_queries(inputs):
            r, k = config.factors(float(sal[i]))
            row = np.array([i])
            logits[i, t:] = _modulated_logits(inputs, DenseMatrix(q_h.values[row]), row, r, k, scale, h)[0]
            rotations += 1
        head_logits.append(logits)
    return _finish(inputs, head_logits, rotations)


def modulated_attention(inputs: AttentionInputs, config: AttentionConfig) -> AttentionOutput:
    """Grouped fast path: K_in is rotated once per distinct saliency level."""
    if not config.active:
        raise InactiveConfig("modulated attention called with an inactive config")
    if inputs.saliency.levels is None:
        raise SaliencyNotQuantized("grouped attention needs saliency quantized to N levels")
    scale = config.resolve_scale(inputs.head_dim)
    sal = inputs.saliency.flat()
    crop = _crop_queries(inputs)
    levels = np.unique(sal[crop])
    t = inputs.tokens
    rotations = 0
    head_logits = []
    for h in range(inputs.head_count):
        logits = _baseline_head(inputs, h, scale)
        q_h = inputs.head(inputs.q_out, h)
        for level in levels:
            rows = crop[sal[crop] == level]
            r, k = config.factors(float(level))
            logits[rows, t:] = _modulated_logits(inputs, DenseMatrix(q_h.values[rows]), rows, r, k, scale, h)
            rotations += 1
        head_logits.append(logits)
    logger.debug(f"Grouped attention: {len(levels)} saliency levels, {rotations} K_in rotations")
    return _finish(inputs, head_logits, rotations)


def run_attention(inputs: AttentionInputs, config: AttentionConfig, naive: bool = False) -> AttentionOutput:
    """Baseline when inactive, otherwise the grouped path (naive loop on request or for unquantized saliency)."""
    if not config.active:
        return baseline_attention(inputs, config.scale)
    if naive or inputs.saliency.levels is None:
        return modulated_attention_naive(inputs, config)
    return modulated_attention(inputs, config)
