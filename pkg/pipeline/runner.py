"""Toy multi-step, multi-layer harness around the attention module.

A frozen editing backbone is replaced by seeded random projections and a fixed
residual mix (state <- keep * state + (1 - keep) * context). It reproduces no
image quality; it exists to drive the relaxation schedule, the modulation
window, steering and the locality diagnostics over many steps and layers.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from analytics.attention import AttentionConfig, AttentionInputs, AttentionOutput, run_attention
from analytics.modulation import schedule_params
from analytics.numerics import DTYPE, DenseMap, DenseMatrix, matmul, minmax_normalize
from analytics.rope import PositionGrid
from analytics.saliency import (
    RegionMasks,
    SaliencyMap,
    aggregate_saliency,
    finalize_saliency,
    quantize_saliency,
    rescale_saliency,
    synth_features,
)
from data_sources.formats import to_gray8, write_jsonl, write_pfm, write_pgm, write_tnsr
from data_sources.inputs import load_composite, load_feature_stack, load_region_masks
from errors import TimestepOutOfRange
from pipeline.config import PipelineConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PreparedInputs:
    masks: RegionMasks
    saliency: SaliencyMap     # S_original, quantized when configured
    composite: DenseMap


def _default_box(h: int, w: int) -> tuple[int, int, int, int]:
    return h // 4, w // 4, h - h // 4, w - w // 4


def prepare_inputs(config: PipelineConfig) -> PreparedInputs:
    """Saliency, masks and composite from files, or synthetic stand-ins."""
    h, w = config.grid
    inp = config.inputs
    if inp.features:
        stack = load_feature_stack([Path(p) for p in inp.features])
    else:
        logger.info(f"Synthesizing '{inp.synth_pattern}' features (seed {config.seed})")
        stack = synth_features(inp.synth_pattern, config.seed, h, w, inp.synth_layers, inp.synth_channels)
    raw = aggregate_saliency(stack, h, w)

    if inp.crop_mask:
        masks = load_region_masks(Path(inp.crop_mask), Path(inp.hole_mask) if inp.hole_mask else None, (h, w))
    else:
        masks = RegionMasks.from_box(h, w, inp.crop_box or _default_box(h, w), inp.hole_box)

    saliency = finalize_saliency(raw, masks, config.blur_size, config.blur_sigma)
    if config.quant_levels:
        saliency = quantize_saliency(saliency, config.quant_levels)

    if inp.composite:
        composite = load_composite(Path(inp.composite), (h, w))
    else:
        composite = DenseMap(minmax_normalize(raw.values).astype(DTYPE))
    return PreparedInputs(masks, saliency, composite)


def x0_snapshot(tokens: DenseMatrix, height: int, width: int) -> DenseMap:
    """Per-token L2 norm of the output tokens, min-max normalized; flat grids map to 0."""
    norms = np.sqrt((tokens.values.astype(np.float64) ** 2).sum(axis=1)).reshape(height, width)
    return DenseMap(minmax_normalize(norms, degenerate=0.0).astype(DTYPE))


@dataclass(frozen=True)
class StepRecord:
    t: int
    layer: int
    active: bool
    ratio: Optional[float]
    entropy: float
    lam: float
    r_low: float
    r_high: float
    k_low: float
    k_high: float
    k_in_rotations: int

    def to_dict(self) -> Dict:
        return {
            "t": self.t, "layer": self.layer, "active": self.active, "ratio": self.ratio,
            "entropy": self.entropy, "lambda": self.lam, "r_low": self.r_low, "r_high": self.r_high,
            "k_low": self.k_low, "k_high": self.k_high, "k_in_rotations": self.k_in_rotations,
        }


@dataclass
class RunDiagnostics:
    records: List[StepRecord]
    tokens: DenseMatrix
    saliency: SaliencyMap
    lam: float
    weights: List[tuple] = field(default_factory=list)   # last step, per layer, per head

    def to_records(self) -> List[Dict]:
        return [r.to_dict() for r in self.records]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.to_records())

    def summary(self) -> Dict:
        df = self.to_frame()
        active = df[df["active"]] if not df.empty else df
        return {
            "steps": int(df["t"].nunique()) if not df.empty else 0,
            "records": len(df),
            "active_steps": int(active["t"].nunique()) if not active.empty else 0,
            "lambda": self.lam,
            "mean_ratio": float(df["ratio"].dropna().mean()) if not df.empty and df["ratio"].notna().any() else None,
            "mean_entropy": float(df["entropy"].mean()) if not df.empty else None,
            "token_norm_mean": float(np.linalg.norm(self.tokens.values.astype(np.float64), axis=1).mean()),
        }


class PipelineRun:
    """One seeded denoising run; can pause at any timestep and resume."""

    def __init__(self, config: PipelineConfig, prepared: PreparedInputs, saliency: SaliencyMap, lam: float):
        self.config = config
        self.prepared = prepared
        self.saliency = saliency
        self.lam = lam
        self.schedule = config.schedule()
        self.t = 0
        self.records: List[StepRecord] = []
        self.last_weights: List[tuple] = []

        h, w = config.grid
        tokens, width = h * w, config.head_count * config.head_dim
        self.positions_out = PositionGrid.for_grid(h, w)
        self.positions_in = PositionGrid.for_grid(h, w, config.block_offset)

        rng = np.random.default_rng(config.seed)
        scale = 1.0 / np.sqrt(width)
        self.layers = [
            tuple(DenseMatrix(rng.normal(0.0, scale, (width, width)).astype(DTYPE)) for _ in range(3))
            for _ in range(config.layer_count)
        ]
        direction = rng.normal(0.0, 1.0, width)
        x_in = rng.normal(0.0, 0.5, (tokens, width)) + prepared.composite.flat()[:, None] * direction[None, :]
        self.x_in = DenseMatrix(x_in.astype(DTYPE))
        self.state = DenseMatrix(rng.normal(0.0, 1.0, (tokens, width)).astype(DTYPE))
        # input-image keys/values are fixed per layer
        self.kv_in = [(matmul(self.x_in, wk), matmul(self.x_in, wv)) for _, wk, wv in self.layers]

    @property
    def done(self) -> bool:
        return self.t >= self.config.total_steps

    @property
    def latest_ratio(self) -> Optional[float]:
        ratios = [r.ratio for r in self.records if r.t == self.t - 1 and r.ratio is not None]
        return float(np.mean(ratios)) if ratios else None

    def _layer(self, layer: int, attn_config: AttentionConfig) -> AttentionOutput:
        wq, wk, wv = self.layers[layer]
        k_in, v_in = self.kv_in[layer]
        inputs = AttentionInputs(
            q_out=matmul(self.state, wq),
            k_out=matmul(self.state, wk),
            v_out=matmul(self.state, wv),
            k_in=k_in,
            v_in=v_in,
            positions_out=self.positions_out,
            positions_in=self.positions_in,
            crop_mask=self.prepared.masks.crop_mask,
            saliency=self.saliency,
            head_count=self.config.head_count,
            head_dim=self.config.head_dim,
            theta_base=self.config.theta_base,
        )
        return run_attention(inputs, attn_config, naive=self.config.naive)

    def step(self) -> None:
        if self.done:
            raise TimestepOutOfRange(f"run already finished {self.config.total_steps} steps")
        t = self.t
        r_curve, k_curve, active = schedule_params(self.schedule, t)
        attn_config = AttentionConfig(
            r_curve, k_curve, active, rope_scaling=self.config.rope_scaling, attn_scaling=self.config.attn_scaling
        )
        keep = np.float32(self.config.residual_keep)
        crop = self.prepared.masks.crop_mask.reshape(-1)
        self.last_weights = []
        for layer in range(self.config.layer_count):
            out = self._layer(layer, attn_config)
            self.state = DenseMatrix(keep * self.state.values + (np.float32(1.0) - keep) * out.context.values)
            entropy = out.entropy[crop] if crop.any() else out.entropy
            self.records.append(StepRecord(
                t, layer, active, out.ratio, float(entropy.mean()), self.lam,
                r_curve.v_min, r_curve.v_max, k_curve.v_min, k_curve.v_max, out.k_in_rotations,
            ))
            self.last_weights.append(out.weights)
        logger.debug(f"t={t} active={active} r_low={r_curve.v_min} k=[{k_curve.v_min}, {k_curve.v_max}]")
        self.t += 1

    def advance(self, until: int) -> None:
        while self.t < min(until, self.config.total_steps):
            self.step()

    def x0_snapshot(self) -> DenseMap:
        h, w = self.config.grid
        return x0_snapshot(self.state, h, w)

    def finish(self) -> RunDiagnostics:
        self.advance(self.config.total_steps)
        return RunDiagnostics(self.records, self.state, self.saliency, self.lam, self.last_weights)


def start_run(config: PipelineConfig, prepared: PreparedInputs, lam: float | None = None) -> PipelineRun:
    lam = config.steering.lambda0 if lam is None else lam
    return PipelineRun(config, prepared, rescale_saliency(prepared.saliency, lam), lam)


def run_pipeline(config: PipelineConfig, prepared: PreparedInputs | None = None, lam: float | None = None) -> RunDiagnostics:
    """Full run at a fixed saliency scale (lambda0 by default)."""
    prepared = prepared or prepare_inputs(config)
    h, w = config.grid
    logger.info(
        f"Running {config.total_steps} steps x {config.layer_count} layers on a {h}x{w} grid "
        f"({config.head_count} heads, modulation window {config.modulation_window})"
    )
    diagnostics = start_run(config, prepared, lam).finish()
    logger.info(f"Run complete: {len(diagnostics.records)} diagnostic records")
    return diagnostics


def write_run_outputs(diagnostics: RunDiagnostics, prepared: PreparedInputs, out_dir: Path, trace_weights: bool = False) -> Dict[str, Path]:
    """Persist tokens, saliency, composite and diagnostics; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "tokens": write_tnsr(out_dir / "tokens.tnsr", diagnostics.tokens.values),
        "saliency": write_pfm(out_dir / "saliency.pfm", diagnostics.saliency.values.values),
        "composite": write_pgm(out_dir / "composite.pgm", to_gray8(prepared.composite.values)),
        "crop_mask": write_pgm(out_dir / "crop_mask.pgm", prepared.masks.crop_mask.astype(np.uint8) * 255),
        "diagnostics_jsonl": write_jsonl(out_dir / "diagnostics.jsonl", diagnostics.to_records()),
    }
    csv_path = out_dir / "diagnostics.csv"
    diagnostics.to_frame().to_csv(csv_path, index=False)
    paths["diagnostics_csv"] = csv_path
    if trace_weights:
        for layer, heads in enumerate(diagnostics.weights):
            paths[f"weights_{layer}"] = write_tnsr(out_dir / f"weights_layer{layer}.tnsr", np.stack([w.values for w in heads]))
    logger.info(f"Saved run outputs to {out_dir}")
    return paths


def digest(paths: List[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()
