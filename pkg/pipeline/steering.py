"""Saliency-scale steering: run to an early timestep, ask an oracle about the
blend state, and restart with a rescaled saliency map until it reports
Success or the attempt budget runs out.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, List, Optional, Protocol

from analytics.numerics import DenseMap
from analytics.saliency import SaliencyMap, rescale_saliency
from data_sources.formats import to_gray8, write_jsonl, write_pgm
from data_sources.oracles import Oracle, OracleQuery, Verdict
from errors import ConfigInvalid
from settings import DELTA_DOWN, DELTA_UP, EVAL_TIMESTEP, LAMBDA0, MAX_TRIES

logger = logging.getLogger(__name__)

LAMBDA_DECIMALS = 10


@dataclass(frozen=True)
class SteeringPolicy:
    lambda0: float = LAMBDA0
    delta_down: float = DELTA_DOWN
    delta_up: float = DELTA_UP
    max_tries: int = MAX_TRIES
    eval_timestep: int = EVAL_TIMESTEP

    def __post_init__(self):
        if self.max_tries < 1:
            raise ConfigInvalid(f"max_tries must be >= 1, got {self.max_tries}")
        if not (self.delta_down > 0 and self.delta_up > 0):
            raise ConfigInvalid("steering deltas must be positive")
        if self.eval_timestep < 0:
            raise ConfigInvalid(f"eval_timestep must be >= 0, got {self.eval_timestep}")


def update_lambda(lam: float, verdict: Verdict, policy: SteeringPolicy) -> float:
    """Neglect lowers the saliency scale, Suppression raises it."""
    if verdict is Verdict.SUCCESS:
        return lam
    if verdict is Verdict.NEGLECT:
        lam = lam - policy.delta_down
    elif verdict is Verdict.SUPPRESSION:
        lam = lam + policy.delta_up
    return round(lam, LAMBDA_DECIMALS)


class RunHandle(Protocol):
    """One pipeline attempt that can be paused at an early timestep."""

    def advance(self, until: int) -> None: ...
    def x0_snapshot(self) -> DenseMap: ...
    @property
    def latest_ratio(self) -> Optional[float]: ...
    def finish(self) -> Any: ...


Runner = Callable[[SaliencyMap, float], RunHandle]


@dataclass(frozen=True)
class AttemptRecord:
    attempt: int
    lam: float
    verdict: Verdict
    ratio: Optional[float]
    snapshot_path: Optional[Path] = None
    reasoning: str = ""

    def to_dict(self) -> dict:
        return {
            "attempt": self.attempt,
            "lambda": self.lam,
            "verdict": self.verdict.value,
            "ratio": self.ratio,
            "snapshot_path": str(self.snapshot_path) if self.snapshot_path else None,
            "reasoning": self.reasoning,
        }


@dataclass
class SteeringTrace:
    attempts: List[AttemptRecord] = field(default_factory=list)

    @property
    def lambdas(self) -> list[float]:
        return [a.lam for a in self.attempts]

    def to_records(self) -> list[dict]:
        return [a.to_dict() for a in self.attempts]

    def write_jsonl(self, path: Path) -> Path:
        return write_jsonl(path, self.to_records())


@dataclass
class SteeringResult:
    result: Any
    trace: SteeringTrace
    unresolved: bool


def steering_loop(
    runner: Runner,
    oracle: Oracle,
    policy: SteeringPolicy,
    s_original: SaliencyMap,
    snapshot_dir: Path | None = None,
    composite_path: Path | None = None,
) -> SteeringResult:
    """Every attempt restarts from timestep 0 with clamp(lambda * S_original).

    On Success the paused run is finished from the evaluation timestep; after
    ``max_tries`` failures the last attempt is finished and flagged unresolved.
    """
    trace = SteeringTrace()
    lam = round(policy.lambda0, LAMBDA_DECIMALS)
    for attempt in range(1, policy.max_tries + 1):
        run = runner(rescale_saliency(s_original, lam), lam)
        run.advance(policy.eval_timestep)

        snapshot_path = None
        if snapshot_dir is not None:
            snapshot_path = write_pgm(Path(snapshot_dir) / f"x0_attempt{attempt}.pgm", to_gray8(run.x0_snapshot().values))

        ratio = run.latest_ratio
        answer = oracle.classify(OracleQuery(attempt, ratio, composite_path, snapshot_path))
        trace.attempts.append(AttemptRecord(attempt, lam, answer.verdict, ratio, snapshot_path, answer.reasoning))
        ratio_txt = f"{ratio:.4f}" if ratio is not None else "n/a"
        logger.info(f"Steering attempt {attempt}/{policy.max_tries}: lambda={lam}, R={ratio_txt}, verdict={answer.verdict.value}")

        if answer.verdict is Verdict.SUCCESS:
            return SteeringResult(run.finish(), trace, unresolved=False)
        if attempt == policy.max_tries:
            logger.warning(f"Steering unresolved after {policy.max_tries} attempts")
            return SteeringResult(run.finish(), trace, unresolved=True)
        lam = update_lambda(lam, answer.verdict, policy)
