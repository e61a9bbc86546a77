"""Blend-state oracles for the steering loop.

An oracle looks at the input composite and an early x0 snapshot and answers
Success, Neglect or Suppression. The real system asks a vision-language
model; here the answer can be scripted, derived from the inward-outward
attention ratio, or delegated to an external command or HTTP endpoint
wrapping any model.
"""
from __future__ import annotations

import enum
import logging
import os
import shlex
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol

import requests

from errors import ConfigInvalid, OracleTransportError
from settings import ORACLE_CMD_ENV, ORACLE_TOKEN, ORACLE_URL, RATIO_HIGH, RATIO_LOW

logger = logging.getLogger(__name__)

MAX_RETRIES = 3
RETRY_DELAY = 1.0  # seconds
COMMAND_TIMEOUT = 600.0


class Verdict(str, enum.Enum):
    SUCCESS = "success"
    NEGLECT = "neglect"
    SUPPRESSION = "suppression"

    @classmethod
    def parse(cls, text: str) -> "Verdict":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ConfigInvalid(f"unknown verdict {text!r}, expected success|neglect|suppression") from None


@dataclass(frozen=True)
class OracleQuery:
    attempt: int
    ratio: Optional[float] = None
    composite_path: Optional[Path] = None
    snapshot_path: Optional[Path] = None


@dataclass(frozen=True)
class OracleAnswer:
    verdict: Verdict
    reasoning: str = ""


class Oracle(Protocol):
    def classify(self, query: OracleQuery) -> OracleAnswer: ...


class ScriptedOracle:
    """Replays a fixed verdict list; the last verdict repeats once exhausted."""

    def __init__(self, verdicts: Iterable[Verdict | str]):
        self.verdicts = [v if isinstance(v, Verdict) else Verdict.parse(v) for v in verdicts]
        if not self.verdicts:
            raise ConfigInvalid("scripted oracle needs at least one verdict")
        self._calls = 0

    def classify(self, query: OracleQuery) -> OracleAnswer:
        v = self.verdicts[min(self._calls, len(self.verdicts) - 1)]
        self._calls += 1
        return OracleAnswer(v, f"scripted #{self._calls}")


class ThresholdOracle:
    """R > high means over-inward attention (Neglect), R < low over-outward (Suppression).

    The regimes overlap in practice, so the bands are a heuristic.
    """

    def __init__(self, low: float = RATIO_LOW, high: float = RATIO_HIGH):
        if low > high:
            raise ConfigInvalid(f"threshold bands inverted: low {low} > high {high}")
        self.low, self.high = low, high

    def classify(self, query: OracleQuery) -> OracleAnswer:
        r = query.ratio
        if r is None:
            logger.warning(f"Attempt {query.attempt}: no inward-outward ratio to judge, passing the blend unmeasured")
            return OracleAnswer(Verdict.SUCCESS, "no ratio available")
        if r > self.high:
            return OracleAnswer(Verdict.NEGLECT, f"R={r:.4f} > {self.high}")
        if r < self.low:
            return OracleAnswer(Verdict.SUPPRESSION, f"R={r:.4f} < {self.low}")
        return OracleAnswer(Verdict.SUCCESS, f"R={r:.4f} within [{self.low}, {self.high}]")


def _parse_reply(lines: list[str]) -> OracleAnswer:
    lines = [l.strip() for l in lines if l.strip()]
    if not lines:
        raise OracleTransportError("oracle produced no output")
    last = lines[-1].upper()
    if last not in {"SUCCESS", "NEGLECT", "SUPPRESSION"}:
        raise OracleTransportError(f"oracle's last line {lines[-1]!r} is not a verdict")
    return OracleAnswer(Verdict(last.lower()), "\n".join(lines[:-1]))


class ExternalCommandOracle:
    """Runs ``<command> <composite_path> <snapshot_path>``; the last stdout line is the verdict."""

    def __init__(self, command: str | None = None, timeout: float = COMMAND_TIMEOUT):
        command = command or os.getenv(ORACLE_CMD_ENV, "")
        if not command:
            raise ConfigInvalid(f"no oracle command given and {ORACLE_CMD_ENV} is unset")
        self.argv = shlex.split(command)
        self.timeout = timeout

    def classify(self, query: OracleQuery) -> OracleAnswer:
        if query.composite_path is None or query.snapshot_path is None:
            raise OracleTransportError("external oracle needs composite and snapshot files")
        argv = self.argv + [str(query.composite_path), str(query.snapshot_path)]
        logger.debug(f"Running oracle command: {argv}")
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as e:
            raise OracleTransportError(f"oracle command failed to run: {e}") from e
        if proc.returncode != 0:
            raise OracleTransportError(f"oracle command exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        return _parse_reply(proc.stdout.splitlines())


class HttpOracle:
    """POSTs the query as JSON and reads ``verdict`` (and optional ``reasoning``) back."""

    def __init__(self, url: str | None = None, token: str | None = None, timeout: float = 120.0):
        self.url = url or ORACLE_URL
        if not self.url:
            raise ConfigInvalid("no oracle URL given and LOOSEROPE_ORACLE_URL is unset")
        self.token = token if token is not None else ORACLE_TOKEN
        self.timeout = timeout

    def _hdrs(self):
        return {"Authorization": f"Bearer {self.token}"} if self.token else {}

    def classify(self, query: OracleQuery) -> OracleAnswer:
        payload = {
            "attempt": query.attempt,
            "ratio": query.ratio,
            "composite_path": str(query.composite_path) if query.composite_path else None,
            "snapshot_path": str(query.snapshot_path) if query.snapshot_path else None,
        }
        for attempt in range(MAX_RETRIES):
            try:
                r = requests.post(self.url, json=payload, headers=self._hdrs(), timeout=self.timeout)
                r.raise_for_status()
                js = r.json()
                break
            except (requests.exceptions.RequestException, ValueError) as e:
                if attempt < MAX_RETRIES - 1:
                    wait_time = RETRY_DELAY * (2 ** attempt)
                    logger.warning(f"Oracle request failed (attempt {attempt + 1}/{MAX_RETRIES}): {e}. Retrying in {wait_time}s...")
                    time.sleep(wait_time)
                else:
                    logger.error(f"Oracle request failed after {MAX_RETRIES} attempts: {e}")
                    raise OracleTransportError(f"oracle endpoint {self.url} unreachable: {e}") from e
        if not isinstance(js, dict):
            raise OracleTransportError(f"oracle endpoint returned {type(js).__name__}, expected an object")
        answer = _parse_reply([str(js.get("verdict", ""))])
        return OracleAnswer(answer.verdict, str(js.get("reasoning") or ""))


def oracle_from_spec(spec: str) -> Oracle:
    """``script:neglect,success`` | ``threshold[:low,high]`` | ``command[:cmd]`` | ``http[:url]``."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "script":
        return ScriptedOracle([v for v in arg.split(",") if v.strip()])
    if kind == "threshold":
        if not arg:
            return ThresholdOracle()
        try:
            low, high = (float(x) for x in arg.split(","))
        except ValueError:
            raise ConfigInvalid(f"threshold oracle expects 'threshold:low,high', got {spec!r}") from None
        return ThresholdOracle(low, high)
    if kind == "command":
        return ExternalCommandOracle(arg or None)
    if kind == "http":
        return HttpOracle(arg or None)
    raise ConfigInvalid(f"unknown oracle kind {kind!r}")
