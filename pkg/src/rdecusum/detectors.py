"""Streaming change detectors with on-off observation control.

Three detector kinds share one statistic/alarm contract:

* ``rde`` — the data-efficient robust detector.  While the statistic is
  nonnegative each observation is used and the statistic accumulates the
  log-likelihood ratio against the least favorable law, truncated below at
  ``-h``.  Once the statistic undershoots zero, observations are skipped and
  the statistic climbs back by ``mu`` per skipped step, so an undershoot of
  ``u`` costs exactly ``ceil(u / mu)`` skipped observations.
* ``robust-cusum`` — the same recursion with ``mu = h = 0``: never skips, and
  the statistic reduces to the classical CUSUM reflection at zero.
* ``fractional`` — the robust CUSUM statistic updated only when a coin lands
  heads; on tails the observation is skipped and the statistic is retained.
  The first observation is always used.

The API is two-phase: ``next_action`` announces whether the upcoming
observation will be used, based only on the current state; ``update`` then
applies it.  This mirrors the causality requirement that the sampling decision
for step n+1 is measurable with respect to information available at step n.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import ContractViolationError, InvalidInputError

#: Default horizon for false-alarm runs; censoring is reported, never dropped.
DEFAULT_MAX_STEPS = 10_000_000

#: Skip runs longer than this are capped; no simulation horizon can outlast it.
SKIP_RUN_CAP = 1 << 62


class DetectorKind(str, enum.Enum):
    RDE = "rde"
    ROBUST = "robust-cusum"
    FRACTIONAL = "fractional"


class Action(enum.Enum):
    SAMPLE = "sample"
    SKIP = "skip"


@dataclass(frozen=True)
class PolicyParams:
    """Tunables of a detector: threshold, skip-recovery rate, truncation depth, kind.

    ``threshold_a`` may be zero (degenerate: alarms at the first nonnegative
    excursion) but not negative.  An ``rde`` detector with ``h > 0`` requires
    ``mu > 0``, otherwise the statistic would be trapped below zero forever.
    """

    threshold_a: float
    mu: float = 0.0
    h: float = 0.0
    kind: DetectorKind = DetectorKind.RDE
    sample_prob: float = 0.5  # fractional kind only

    def __post_init__(self) -> None:
        if not math.isfinite(self.threshold_a) or self.threshold_a < 0:
            raise InvalidInputError(f"threshold must be >= 0, got {self.threshold_a}")
        if self.mu < 0 or not math.isfinite(self.mu):
            raise InvalidInputError(f"mu must be >= 0 and finite, got {self.mu}")
        if self.h < 0 or not math.isfinite(self.h):
            raise InvalidInputError(f"h must be >= 0 and finite, got {self.h}")
        if self.kind is DetectorKind.RDE and self.h > 0 and self.mu <= 0:
            raise InvalidInputError("rde with h > 0 requires mu > 0")
        if self.kind is DetectorKind.ROBUST and (self.mu != 0 or self.h != 0):
            raise InvalidInputError("robust-cusum is the rde recursion with mu = h = 0")
        if self.kind is DetectorKind.FRACTIONAL and not 0 <= self.sample_prob <= 1:
            raise InvalidInputError(f"sample_prob must be in [0, 1], got {self.sample_prob}")

    @classmethod
    def rde_cusum(cls, threshold_a: float, mu: float, h: float) -> "PolicyParams":
        return cls(threshold_a, mu=mu, h=h, kind=DetectorKind.RDE)

    @classmethod
    def robust_cusum(cls, threshold_a: float) -> "PolicyParams":
        return cls(threshold_a, kind=DetectorKind.ROBUST)

    @classmethod
    def fractional(cls, threshold_a: float, sample_prob: float = 0.5) -> "PolicyParams":
        return cls(threshold_a, kind=DetectorKind.FRACTIONAL, sample_prob=sample_prob)

    @property
    def floor(self) -> float:
        """Lower truncation of a sampled update; 0.0 (not -0.0) when h == 0."""
        return -self.h if self.h > 0 else 0.0


def skip_run_length(undershoot: float, mu: float) -> int:
    """Number of consecutive skips for an undershoot of magnitude ``undershoot``.

    ceil(undershoot / mu), guarded against overflow for degenerate mu.
    """
    if undershoot <= 0:
        return 0
    ratio = undershoot / mu
    if ratio >= SKIP_RUN_CAP:
        return SKIP_RUN_CAP
    return math.ceil(ratio)


@dataclass
class DetectorState:
    """Mutable single-owner state; mutate through ``update`` only."""

    statistic: float = 0.0
    step_index: int = 0
    samples_used: int = 0
    alarmed: bool = False
    coin_rng: np.random.Generator | None = None
    # Skip-run bookkeeping: the anchor is the undershoot value the current run
    # started from; remaining <= 0 means no run is active.
    skip_anchor: float = 0.0
    skips_done: int = 0
    skips_left: int = 0
    pending: Action | None = field(default=None, repr=False)


def initial_state(
    params: PolicyParams, coin_rng: np.random.Generator | None = None
) -> DetectorState:
    if params.kind is DetectorKind.FRACTIONAL and coin_rng is None:
        raise InvalidInputError("fractional detector needs a coin generator")
    return DetectorState(coin_rng=coin_rng)


@dataclass(frozen=True)
class StepOutcome:
    sampled: bool
    statistic_after: float
    alarmed: bool


def next_action(state: DetectorState, params: PolicyParams) -> Action:
    """Announce whether the next observation will be used for decision-making.

    Decided from the current state alone; repeated calls before the matching
    ``update`` return the cached decision (the fractional coin is tossed once).
    """
    if state.alarmed:
        raise ContractViolationError("detector already alarmed; no further actions")
    if state.pending is None:
        if params.kind is DetectorKind.FRACTIONAL:
            if state.step_index == 0:
                action = Action.SAMPLE  # the first observation is always used
            else:
                assert state.coin_rng is not None
                heads = state.coin_rng.random() < params.sample_prob
                action = Action.SAMPLE if heads else Action.SKIP
        else:
            action = Action.SAMPLE if state.statistic >= 0.0 else Action.SKIP
        state.pending = action
    return state.pending


def update(
    state: DetectorState,
    params: PolicyParams,
    observation: float | None = None,
    llr: float | None = None,
) -> StepOutcome:
    """Apply one step.  ``observation``/``llr`` must be present iff the action samples."""
    action = next_action(state, params)
    if action is Action.SAMPLE:
        if llr is None or observation is None:
            raise ContractViolationError("sampled step needs the observation and its llr")
        if not math.isfinite(llr):
            raise InvalidInputError(f"log-likelihood ratio must be finite, got {llr}")
        raw = state.statistic + llr
        floor = params.floor
        new = raw if raw > floor else floor
        if new < 0.0:
            # Undershoot: schedule exactly ceil(|new| / mu) skips.
            state.skip_anchor = new
            state.skips_done = 0
            state.skips_left = skip_run_length(-new, params.mu)
        state.samples_used += 1
        sampled = True
    else:
        if llr is not None or observation is not None:
            raise ContractViolationError("skipped step must not receive an observation")
        if params.kind is DetectorKind.FRACTIONAL:
            new = state.statistic  # coin came up tails: retain the statistic
        else:
            if state.skips_left <= 0:
                # State was constructed mid-undershoot; start the run here.
                state.skip_anchor = state.statistic
                state.skips_done = 0
                state.skips_left = skip_run_length(-state.statistic, params.mu)
            state.skips_done += 1
            state.skips_left -= 1
            if state.skips_left == 0:
                new = 0.0  # the climb always hands back control at zero
            else:
                climbed = state.skip_anchor + state.skips_done * params.mu
                new = climbed if climbed < 0.0 else 0.0
        sampled = False
    state.statistic = new
    state.step_index += 1
    state.alarmed = new >= params.threshold_a
    state.pending = None
    return StepOutcome(sampled=sampled, statistic_after=new, alarmed=state.alarmed)


@dataclass(frozen=True)
class Trajectory:
    """Full record of one detector run.

    ``stop_time`` is the 1-based step at which the statistic first reached the
    threshold, or None if the run was censored (stream exhausted or max_steps
    reached without an alarm).
    """

    stop_time: int | None
    samples_used: int
    statistic_path: list[float]
    sampled_flags: list[bool]
    censored: bool

    @property
    def steps(self) -> int:
        return len(self.statistic_path)


def run_detector(
    params: PolicyParams,
    llr_source: Iterable[tuple[float, float]],
    max_steps: int = DEFAULT_MAX_STEPS,
    coin_rng: np.random.Generator | None = None,
) -> Trajectory:
    """Drive a detector over a stream of (observation, llr) pairs until alarm.

    A skipped step still consumes one stream slot: the observation exists, the
    detector just does not read it.  This keeps change-point alignment correct
    when several detectors share one sample path.
    """
    state = initial_state(params, coin_rng)
    path: list[float] = []
    flags: list[bool] = []
    stop_time: int | None = None
    it: Iterator[tuple[float, float]] = iter(llr_source)
    for _ in range(max_steps):
        try:
            x, z = next(it)
        except StopIteration:
            break
        action = next_action(state, params)
        if action is Action.SAMPLE:
            out = update(state, params, observation=x, llr=z)
        else:
            out = update(state, params)
        path.append(out.statistic_after)
        flags.append(out.sampled)
        if out.alarmed:
            stop_time = state.step_index
            break
    return Trajectory(
        stop_time=stop_time,
        samples_used=state.samples_used,
        statistic_path=path,
        sampled_flags=flags,
        censored=stop_time is None,
    )


def classical_cusum_path(llrs: Iterable[float]) -> list[float]:
    """Reference CUSUM recursion W <- max(W + z, 0), as an independent oracle."""
    w = 0.0
    out = []
    for z in llrs:
        w = max(w + z, 0.0)
        out.append(w)
    return out


def verify_trajectory(
    statistics: list[float],
    sampled: list[bool],
    alarmed: list[bool],
    params: PolicyParams,
) -> list[str]:
    """Check a recorded trajectory row by row against the detector invariants.

    Returns a list of human-readable violations (empty when the trajectory is
    consistent).  Rows are numbered from 1 to match the step index.
    """
    problems: list[str] = []
    n = len(statistics)
    if not (n == len(sampled) == len(alarmed)):
        return ["column lengths differ"]
    if n == 0:
        return ["empty trajectory"]
    floor = params.floor
    frac = params.kind is DetectorKind.FRACTIONAL
    if not sampled[0]:
        problems.append("row 1: the first observation must be sampled")
    for i in range(n):
        stat = statistics[i]
        if stat < floor:
            problems.append(f"row {i + 1}: statistic {stat} below the floor {floor}")
        want_alarm = stat >= params.threshold_a
        if alarmed[i] != want_alarm:
            problems.append(f"row {i + 1}: alarm flag disagrees with statistic vs threshold")
        if alarmed[i] and i != n - 1:
            problems.append(f"row {i + 1}: alarmed before the final row")
        if i == 0:
            continue
        prev = statistics[i - 1]
        if frac:
            if not sampled[i] and stat != prev:
                problems.append(f"row {i + 1}: skipped step must retain the statistic")
        else:
            if sampled[i] != (prev >= 0.0):
                problems.append(
                    f"row {i + 1}: sampling decision disagrees with the sign of row {i}"
                )
            if not sampled[i] and not (prev < stat <= 0.0 or stat == 0.0):
                problems.append(f"row {i + 1}: skip step must climb toward zero")
    if not frac:
        # Every complete skip run must have length ceil(undershoot / mu).
        i = 1
        while i < n:
            if not sampled[i]:
                start = i
                while i < n and not sampled[i]:
                    i += 1
                run = i - start
                undershoot = -statistics[start - 1]
                expected = skip_run_length(undershoot, params.mu)
                if i < n and run != expected:
                    problems.append(
                        f"rows {start + 1}-{i}: skip run of {run}, expected {expected}"
                    )
                elif i == n and run > expected:
                    problems.append(
                        f"rows {start + 1}-{i}: truncated skip run longer than {expected}"
                    )
            else:
                i += 1
    return problems
