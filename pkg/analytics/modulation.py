"""tanh modulation curves r(S(q)), k(S(q)) and their timestep relaxation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

from analytics.saliency import snap_levels
from errors import ConfigInvalid, RangeOutOfBounds, TimestepOutOfRange
from settings import (
    CURVE_CENTER,
    K_HIGH,
    K_LOW,
    K_STEEPNESS,
    MODULATION_WINDOW,
    QUANT_LEVELS,
    R_HIGH,
    R_LOW,
    R_STEEPNESS,
    RELAX_STAGES,
    TOTAL_STEPS,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModulationCurve:
    """(tanh((s - center) * G) / 2 + 1/2) * (v_max - v_min) + v_min.

    With center = 0 (the printed formula) the output stays in
    [midpoint, v_max); center = 0.5 spans the whole [v_min, v_max].
    """

    v_min: float
    v_max: float
    G: float
    quant_levels: int | None = None
    center: float = 0.0

    def __post_init__(self):
        if self.v_min > self.v_max:
            raise ConfigInvalid(f"curve v_min {self.v_min} exceeds v_max {self.v_max}")
        if not self.G > 0:
            raise ConfigInvalid(f"curve steepness must be positive, got {self.G}")

    @classmethod
    def constant(cls, value: float) -> "ModulationCurve":
        """Identity-override curve, e.g. r == 1 or k == 1."""
        return cls(value, value, 1.0)


@lru_cache(maxsize=4096)
def _eval_cached(curve: ModulationCurve, s: float) -> float:
    return (math.tanh((s - curve.center) * curve.G) / 2.0 + 0.5) * (curve.v_max - curve.v_min) + curve.v_min


def eval_curve(curve: ModulationCurve, s: float) -> float:
    s = float(s)
    if not 0.0 <= s <= 1.0:
        raise RangeOutOfBounds(f"saliency {s} outside [0, 1]")
    if curve.quant_levels:
        s = float(snap_levels(s, curve.quant_levels))
    return _eval_cached(curve, s)


@dataclass(frozen=True)
class RelaxStage:
    from_timestep: int
    r_low: float
    k_low: float
    k_high: float


def _default_stages() -> tuple[RelaxStage, ...]:
    return tuple(RelaxStage(*s) for s in RELAX_STAGES)


@dataclass(frozen=True)
class RelaxationSchedule:
    """Stage bounds apply from their timestep onward; modulation is active for t < modulation_window."""

    modulation_window: int = MODULATION_WINDOW
    total_steps: int = TOTAL_STEPS
    stages: tuple[RelaxStage, ...] = field(default_factory=_default_stages)
    r_curve: ModulationCurve = ModulationCurve(R_LOW, R_HIGH, R_STEEPNESS, QUANT_LEVELS, CURVE_CENTER)
    k_curve: ModulationCurve = ModulationCurve(K_LOW, K_HIGH, K_STEEPNESS, QUANT_LEVELS, CURVE_CENTER)

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigInvalid(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.modulation_window <= self.total_steps:
            raise ConfigInvalid(f"modulation window {self.modulation_window} outside [0, {self.total_steps}]")
        starts = [s.from_timestep for s in self.stages]
        if starts != sorted(starts):
            raise ConfigInvalid(f"relaxation stages must be sorted by timestep, got {starts}")
        for s in self.stages:
            if s.r_low > self.r_curve.v_max or s.k_low > s.k_high:
                raise ConfigInvalid(f"stage at t={s.from_timestep} has inverted bounds")


def schedule_params(schedule: RelaxationSchedule, t: int) -> tuple[ModulationCurve, ModulationCurve, bool]:
    if not 0 <= t < schedule.total_steps:
        raise TimestepOutOfRange(f"timestep {t} outside [0, {schedule.total_steps})")
    r_curve, k_curve = schedule.r_curve, schedule.k_curve
    for stage in schedule.stages:
        if stage.from_timestep > t:
            break
        r_curve = replace(schedule.r_curve, v_min=stage.r_low)
        k_curve = replace(schedule.k_curve, v_min=stage.k_low, v_max=stage.k_high)
    return r_curve, k_curve, t < schedule.modulation_window
