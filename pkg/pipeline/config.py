"""PipelineConfig: one JSON document holding every knob of a run.

Defaults come from settings.py, so an empty document is the reference
configuration at desk scale.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from analytics.modulation import ModulationCurve, RelaxStage, RelaxationSchedule
from errors import ConfigInvalid, IoError
from pipeline.steering import SteeringPolicy
from settings import (
    BLOCK_OFFSET,
    BLUR_SIGMA,
    BLUR_SIZE,
    CURVE_CENTER,
    DATA_DIR,
    GRID,
    HEAD_COUNT,
    HEAD_DIM,
    K_HIGH,
    K_LOW,
    K_STEEPNESS,
    LAYER_COUNT,
    MODULATION_WINDOW,
    QUANT_LEVELS,
    R_HIGH,
    R_LOW,
    R_STEEPNESS,
    RELAX_STAGES,
    RESIDUAL_KEEP,
    SEED,
    THETA_BASE,
    TOTAL_STEPS,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurveParams:
    v_min: float
    v_max: float
    G: float
    center: float = CURVE_CENTER


@dataclass(frozen=True)
class InputsConfig:
    features: Tuple[str, ...] = ()
    synth_pattern: str = "blobs"
    synth_layers: int = 2
    synth_channels: int = 4
    composite: Optional[str] = None
    crop_mask: Optional[str] = None
    hole_mask: Optional[str] = None
    crop_box: Optional[Tuple[int, int, int, int]] = None   # (top, left, bottom, right); default: central half
    hole_box: Optional[Tuple[int, int, int, int]] = None


def _default_stages() -> Tuple[RelaxStage, ...]:
    return tuple(RelaxStage(*s) for s in RELAX_STAGES)


@dataclass(frozen=True)
class PipelineConfig:
    grid: Tuple[int, int] = GRID
    head_count: int = HEAD_COUNT
    head_dim: int = HEAD_DIM
    layer_count: int = LAYER_COUNT
    total_steps: int = TOTAL_STEPS
    modulation_window: int = MODULATION_WINDOW
    theta_base: float = THETA_BASE
    block_offset: int = BLOCK_OFFSET
    r_curve: CurveParams = CurveParams(R_LOW, R_HIGH, R_STEEPNESS)
    k_curve: CurveParams = CurveParams(K_LOW, K_HIGH, K_STEEPNESS)
    stages: Tuple[RelaxStage, ...] = field(default_factory=_default_stages)
    quant_levels: Optional[int] = QUANT_LEVELS
    blur_size: int = BLUR_SIZE
    blur_sigma: float = BLUR_SIGMA
    rope_scaling: bool = True
    attn_scaling: bool = True
    naive: bool = False
    residual_keep: float = RESIDUAL_KEEP
    steering: SteeringPolicy = SteeringPolicy()
    steering_enabled: bool = True
    oracle: str = "threshold"
    seed: int = SEED
    inputs: InputsConfig = InputsConfig()
    output_dir: str = str(DATA_DIR)
    trace_weights: bool = False

    def __post_init__(self):
        h, w = self.grid
        counts = {"grid height": h, "grid width": w, "head_count": self.head_count, "head_dim": self.head_dim,
                  "layer_count": self.layer_count, "total_steps": self.total_steps}
        low = [k for k, v in counts.items() if int(v) < 1]
        if low:
            raise ConfigInvalid(f"counts must be >= 1: {low}")
        if self.head_dim % 4:
            raise ConfigInvalid(f"head_dim {self.head_dim} must be divisible by 4 for axial RoPE")
        if not 0 <= self.modulation_window <= self.total_steps:
            raise ConfigInvalid(f"modulation_window {self.modulation_window} outside [0, {self.total_steps}]")
        if self.quant_levels is not None and self.quant_levels < 2:
            raise ConfigInvalid(f"quant_levels must be >= 2 or null, got {self.quant_levels}")
        if not 0.0 <= self.residual_keep <= 1.0:
            raise ConfigInvalid(f"residual_keep must lie in [0, 1], got {self.residual_keep}")
        if self.steering.eval_timestep >= self.total_steps:
            raise ConfigInvalid(f"steering eval_timestep {self.steering.eval_timestep} >= total_steps {self.total_steps}")
        self.schedule()  # validates curves and stages

    def curve(self, params: CurveParams) -> ModulationCurve:
        return ModulationCurve(params.v_min, params.v_max, params.G, self.quant_levels, params.center)

    def schedule(self) -> RelaxationSchedule:
        return RelaxationSchedule(
            modulation_window=self.modulation_window,
            total_steps=self.total_steps,
            stages=self.stages,
            r_curve=self.curve(self.r_curve),
            k_curve=self.curve(self.k_curve),
        )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def with_overrides(self, **changes) -> "PipelineConfig":
        data = self.to_dict()
        data.update(changes)
        return config_from_dict(data)


def _make(cls, data: Any, name: str):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{name} must be an object, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigInvalid(f"unknown keys in {name}: {unknown}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigInvalid(f"bad {name}: {e}") from e


def config_from_dict(data: Dict[str, Any]) -> PipelineConfig:
    data = dict(data)
    if "r_curve" in data:
        data["r_curve"] = _make(CurveParams, data["r_curve"], "r_curve")
    if "k_curve" in data:
        data["k_curve"] = _make(CurveParams, data["k_curve"], "k_curve")
    if "stages" in data:
        data["stages"] = tuple(_make(RelaxStage, s, "stages[]") for s in data["stages"])
    if "steering" in data:
        data["steering"] = _make(SteeringPolicy, data["steering"], "steering")
    if "inputs" in data:
        inputs = _make(InputsConfig, data["inputs"], "inputs")
        data["inputs"] = dataclasses.replace(
            inputs,
            features=tuple(inputs.features),
            crop_box=tuple(inputs.crop_box) if inputs.crop_box else None,
            hole_box=tuple(inputs.hole_box) if inputs.hole_box else None,
        )
    if "grid" in data:
        data["grid"] = tuple(int(x) for x in data["grid"])
    return _make(PipelineConfig, data, "config")


def _resolve_inputs(inputs: InputsConfig, base: Path) -> InputsConfig:
    def rel(p):
        return str((base / p).resolve()) if p and not Path(p).is_absolute() else p
    return dataclasses.replace(
        inputs,
        features=tuple(rel(p) for p in inputs.features),
        composite=rel(inputs.composite),
        crop_mask=rel(inputs.crop_mask),
        hole_mask=rel(inputs.hole_mask),
    )


def load_config(path: Path | None) -> PipelineConfig:
    """Load a JSON config; input paths are taken relative to the file."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"{path} is not valid JSON: {e}") from e
    config = config_from_dict(data)
    logger.info(f"Loaded config from {path}")
    return dataclasses.replace(config, inputs=_resolve_inputs(config.inputs, path.parent))


def apply_overrides(config: PipelineConfig, assignments: list[str]) -> PipelineConfig:
    """Apply ``dotted.key=json`` assignments, e.g. ``steering.max_tries=2``."""
    data = config.to_dict()
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigInvalid(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        *parents, leaf = key.strip().split(".")
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise ConfigInvalid(f"override {key!r}: {p!r} is not a section")
            node = node[p]
        if leaf not in node:
            raise ConfigInvalid(f"override {key!r}: unknown key {leaf!r}")
        node[leaf] = value
    return config_from_dict(data)
