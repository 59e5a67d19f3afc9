"""Monte-Carlo operating characteristics: FAR, PDC, WADD, and threshold calibration.

All estimators share the trial engine in ``simulate``:

* trials are seeded per index, so estimates are reproducible and identical for
  every detector kind and threshold (common random numbers);
* aggregation uses numpy's pairwise summation, so results do not depend on
  worker scheduling;
* confidence half-widths are normal-approximation 95% intervals, with the
  delta method for reciprocal and ratio estimates.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .detectors import DetectorKind, PolicyParams, skip_run_length
from .distributions import (
    DistributionSpec,
    PostChangeFamily,
    lfl_of_family,
)
from .errors import (
    EstimationFailedError,
    EstimationUnstableError,
    InvalidInputError,
)
from .simulate import WALK_CAP, map_trial_chunks, run_trial, simulate_walks

_Z95 = 1.959963984540054

#: Survival fraction below which the duty-cycle horizon conditioning is judged
#: degenerate and the threshold is raised (doubled) automatically.
MIN_SURVIVAL = 0.02


class MetricName(str, enum.Enum):
    FAR = "FAR"
    PDC_DIRECT = "PDC_direct"
    PDC_RENEWAL = "PDC_renewal"
    WADD = "WADD"
    E_INF_TAU = "E_inf_tau"


@dataclass(frozen=True)
class MetricEstimate:
    """A Monte-Carlo estimate with its 95% confidence half-width."""

    name: MetricName
    value: float
    ci_halfwidth: float
    n_trials: int
    censored_trials: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.ci_halfwidth < 0:
            raise InvalidInputError("ci_halfwidth must be >= 0")
        if self.censored_trials > self.n_trials:
            raise InvalidInputError("censored_trials cannot exceed n_trials")


@dataclass(frozen=True)
class TrialRecord:
    """Per-trial outcome, consistent with the detector trajectory invariants."""

    stop_time: int | None
    samples_used_prechange: int
    samples_used_total: int
    undershoot_at_first_negative: float | None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a Monte-Carlo run.

    ``change_point=None`` means the change never happens (false-alarm and
    duty-cycle regimes); ``change_point=1`` puts every observation under the
    true post-change law (delay regime).
    """

    f: DistributionSpec
    family: PostChangeFamily
    params: PolicyParams
    true_g: DistributionSpec | None = None
    change_point: int | None = None
    n_trials: int = 5000
    max_steps: int = 100_000
    base_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trials < 2:
            raise InvalidInputError(f"need n_trials >= 2, got {self.n_trials}")
        if self.max_steps < 2:
            raise InvalidInputError(f"need max_steps >= 2, got {self.max_steps}")
        if self.change_point is not None:
            if self.change_point < 1:
                raise InvalidInputError(f"change_point must be >= 1, got {self.change_point}")
            if self.true_g is None:
                raise InvalidInputError("a change point needs true_g")
        if self.true_g is not None and not self.family.contains(self.true_g):
            raise InvalidInputError(f"true_g {self.true_g} is outside the post-change family")

    @property
    def gbar(self) -> DistributionSpec:
        return lfl_of_family(self.family)


def simulate_trial(config: ExperimentConfig, trial_index: int) -> TrialRecord:
    """Run a single trial of the configured experiment (public, test-friendly path)."""
    out = run_trial(
        config.f,
        config.gbar,
        config.true_g,
        config.change_point,
        config.params,
        config.max_steps,
        config.base_seed,
        trial_index,
    )
    return TrialRecord(
        stop_time=out.stop_time,
        samples_used_prechange=out.samples_prechange,
        samples_used_total=out.samples_used,
        undershoot_at_first_negative=out.first_undershoot,
    )


def _stop_chunk(args, start: int, stop: int):
    f, gbar, true_g, change_point, params, max_steps, base_seed, threshold = args
    n = stop - start
    stops = np.empty(n, dtype=np.int64)
    samples = np.empty(n, dtype=np.int64)
    samples_pre = np.empty(n, dtype=np.int64)
    for j in range(n):
        out = run_trial(
            f,
            gbar,
            true_g,
            change_point,
            params,
            max_steps,
            base_seed,
            start + j,
            threshold=threshold,
        )
        stops[j] = -1 if out.stop_time is None else out.stop_time
        samples[j] = out.samples_used
        samples_pre[j] = out.samples_prechange
    return stops, samples, samples_pre


def _stopping_times(config: ExperimentConfig, workers: int | None):
    args = (
        config.f,
        config.gbar,
        config.true_g,
        config.change_point,
        config.params,
        config.max_steps,
        config.base_seed,
        None,
    )
    stops, samples, samples_pre = map_trial_chunks(_stop_chunk, args, config.n_trials, workers)
    censored = int(np.count_nonzero(stops < 0))
    taus = np.where(stops < 0, config.max_steps, stops).astype(np.float64)
    return taus, censored, samples, samples_pre


def _mean_half(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    if values.size < 2:
        return mean, 0.0
    return mean, _Z95 * float(np.std(values, ddof=1)) / math.sqrt(values.size)


def estimate_mean_time_to_false_alarm(
    config: ExperimentConfig, workers: int | None = None
) -> MetricEstimate:
    """Mean stopping time under the no-change law; censored trials enter at max_steps."""
    if config.change_point is not None:
        raise InvalidInputError("false-alarm runs need change_point=None")
    taus, censored, _, _ = _stopping_times(config, workers)
    if censored == config.n_trials:
        raise EstimationFailedError("every trial was censored; raise max_steps")
    mean, half = _mean_half(taus)
    return MetricEstimate(
        name=MetricName.E_INF_TAU,
        value=mean,
        ci_halfwidth=half,
        n_trials=config.n_trials,
        censored_trials=censored,
        extras={"censoring_fraction": censored / config.n_trials},
    )


def estimate_far(config: ExperimentConfig, workers: int | None = None) -> MetricEstimate:
    """False alarm rate 1 / E[stopping time] under the no-change law.

    Censored trials are imputed at max_steps, which biases the estimate upward
    (conservative for FAR <= alpha claims); the censored count is reported.
    """
    arl = estimate_mean_time_to_false_alarm(config, workers)
    mean = arl.value
    se = arl.ci_halfwidth / _Z95
    return MetricEstimate(
        name=MetricName.FAR,
        value=1.0 / mean,
        ci_halfwidth=_Z95 * se / mean**2,
        n_trials=arl.n_trials,
        censored_trials=arl.censored_trials,
        extras={
            "mean_stop_time": mean,
            "mean_stop_time_ci_halfwidth": arl.ci_halfwidth,
            "censoring_fraction": arl.extras["censoring_fraction"],
        },
    )


def _pdc_chunk(args, start: int, stop: int):
    f, gbar, params, steps_total, cp_step, base_seed = args
    n = stop - start
    samples_end = np.empty(n, dtype=np.int64)
    max_end = np.empty(n, dtype=np.float64)
    samples_cp = np.empty(n, dtype=np.int64)
    max_cp = np.empty(n, dtype=np.float64)
    for j in range(n):
        out = run_trial(
            f,
            gbar,
            None,
            None,
            params,
            steps_total,
            base_seed,
            start + j,
            stop_on_alarm=False,
            checkpoints=(cp_step,),
        )
        samples_end[j] = out.samples_used
        max_end[j] = out.running_max
        samples_cp[j] = out.checkpoint_samples[cp_step]
        max_cp[j] = out.checkpoint_max[cp_step]
    return samples_end, max_end, samples_cp, max_cp


def estimate_pdc_direct(config: ExperimentConfig, workers: int | None = None) -> MetricEstimate:
    """Fraction of observations used before the change, at a fixed large horizon.

    The horizon is k = config.max_steps; a trial contributes the fraction of
    sampled steps among its first k-1 steps, conditioned on no alarm before k
    (rejection).  If fewer than MIN_SURVIVAL of the trials survive, the
    threshold is doubled until enough do: the statistic path does not depend on
    the threshold, so this only relaxes the conditioning.  The same fraction at
    horizon k/10 is reported as a sensitivity check.
    """
    if config.change_point is not None:
        raise InvalidInputError("duty-cycle runs need change_point=None")
    k = config.max_steps
    if k < 20:
        raise InvalidInputError(f"horizon too small for a duty-cycle estimate: {k}")
    steps_total = k - 1
    cp_step = k // 10 - 1
    args = (config.f, config.gbar, config.params, steps_total, cp_step, config.base_seed)
    samples_end, max_end, samples_cp, max_cp = map_trial_chunks(
        _pdc_chunk, args, config.n_trials, workers
    )
    threshold = config.params.threshold_a
    raised = False
    for _ in range(200):
        alive = max_end < threshold
        if np.count_nonzero(alive) >= MIN_SURVIVAL * config.n_trials:
            break
        threshold *= 2.0
        raised = True
    alive = max_end < threshold
    n_alive = int(np.count_nonzero(alive))
    if n_alive < 100:
        raise EstimationUnstableError(
            f"only {n_alive} trials survive the horizon; need at least 100"
        )
    fractions = samples_end[alive] / steps_total
    value, half = _mean_half(fractions)
    alive_cp = max_cp < threshold
    tenth = samples_cp[alive_cp] / cp_step if cp_step > 0 else np.array([])
    return MetricEstimate(
        name=MetricName.PDC_DIRECT,
        value=value,
        ci_halfwidth=half,
        n_trials=config.n_trials,
        censored_trials=config.n_trials - n_alive,
        extras={
            "horizon": k,
            "effective_threshold": threshold,
            "threshold_raised": raised,
            "survival": n_alive / config.n_trials,
            "pdc_at_tenth_horizon": float(np.mean(tenth)) if tenth.size else math.nan,
            "tenth_horizon": k // 10,
        },
    )


def estimate_pdc_renewal(
    f: DistributionSpec,
    gbar: DistributionSpec,
    params: PolicyParams,
    n_cycles: int = 100_000,
    seed: int = 0,
    workers: int | None = None,
) -> MetricEstimate:
    """Duty cycle from the renewal decomposition of the statistic's excursions.

    Each cycle runs the cumulative llr walk from 0 until it leaves [0, A).
    Among cycles exiting below zero, the mean exit time and the mean skip-run
    length ceil(|truncated endpoint| / mu) are estimated; the duty cycle is
    time-above / (time-above + time-skipping).
    """
    if params.mu <= 0:
        raise InvalidInputError("the renewal duty-cycle estimator needs mu > 0")
    walks = simulate_walks(
        f, gbar, n_cycles, seed, upper=params.threshold_a, cap=WALK_CAP, workers=workers
    )
    if walks.capped > 0.001 * n_cycles:
        raise EstimationUnstableError(f"{walks.capped}/{n_cycles} cycles hit the walk cap")
    finished = walks.lengths < WALK_CAP
    below = finished & ~walks.exited_above
    n_below = int(np.count_nonzero(below))
    if n_below == 0:
        raise EstimationFailedError(
            "no cycle exited below zero; the threshold is too small relative to the drift"
        )
    lam = walks.lengths[below].astype(np.float64)
    ends = walks.end_values[below]
    trunc = np.maximum(ends, -params.h if params.h > 0 else 0.0)
    skips = np.array(
        [skip_run_length(-v, params.mu) if v < 0 else 1 for v in trunc], dtype=np.float64
    )
    mean_lam = float(np.mean(lam))
    mean_skip = float(np.mean(skips))
    value = mean_lam / (mean_lam + mean_skip)
    # Delta method for a/(a+b) with empirical covariance of (lam, skips).
    if n_below > 1:
        cov = np.cov(np.vstack([lam, skips]), ddof=1)
        grad = np.array([mean_skip, -mean_lam]) / (mean_lam + mean_skip) ** 2
        var = float(grad @ cov @ grad) / n_below
        half = _Z95 * math.sqrt(max(var, 0.0))
    else:
        half = 0.0
    return MetricEstimate(
        name=MetricName.PDC_RENEWAL,
        value=value,
        ci_halfwidth=half,
        n_trials=n_cycles,
        censored_trials=int(walks.capped),
        extras={
            "mean_cycle_length": mean_lam,
            "mean_skip_run": mean_skip,
            "below_exits": n_below,
            "above_exits": int(np.count_nonzero(walks.exited_above)),
        },
    )


def estimate_wadd(config: ExperimentConfig, workers: int | None = None) -> MetricEstimate:
    """Worst-case delay estimate: mean delay with the change at step one, plus
    the deterministic cost of the worst pre-change history.

    The worst history leaves the statistic at -h, which costs exactly
    ceil(h/mu) skipped steps before the post-change run begins; that term is
    added analytically for the data-efficient kind and is zero for the others.
    The plain change-at-one delay is reported alongside in ``extras``.
    """
    if config.change_point != 1:
        raise InvalidInputError("worst-case delay runs need change_point=1")
    taus, censored, _, _ = _stopping_times(config, workers)
    if censored > 0.01 * config.n_trials:
        raise EstimationUnstableError(
            f"{censored}/{config.n_trials} delay trials censored; raise max_steps"
        )
    params = config.params
    if params.kind is DetectorKind.RDE and params.h > 0:
        penalty = skip_run_length(params.h, params.mu)
    else:
        penalty = 0
    delay, half = _mean_half(taus)
    return MetricEstimate(
        name=MetricName.WADD,
        value=penalty + delay,
        ci_halfwidth=half,
        n_trials=config.n_trials,
        censored_trials=censored,
        extras={
            "delay_nu1": delay,
            "delay_nu1_ci_halfwidth": half,
            "history_penalty": float(penalty),
        },
    )


def _records_chunk(args, start: int, stop: int):
    f, gbar, params, hi, max_steps, base_seed = args
    steps_list = []
    vals_list = []
    for j in range(start, stop):
        out = run_trial(
            f,
            gbar,
            None,
            None,
            params,
            max_steps,
            base_seed,
            j,
            threshold=hi,
            collect_records=True,
        )
        steps_list.append(
            out.record_steps if out.record_steps is not None else np.empty(0, dtype=np.int64)
        )
        vals_list.append(
            out.record_values if out.record_values is not None else np.empty(0, dtype=np.float64)
        )
    return steps_list, vals_list


@dataclass(frozen=True)
class CrossingRecords:
    """Per-trial running-max record curves; stop times for any threshold below
    the simulated one can be read off without re-simulation."""

    steps: list  # list of int64 arrays, ascending
    values: list  # list of float64 arrays, strictly increasing
    max_steps: int
    threshold_hi: float

    def stop_times(self, threshold: float) -> np.ndarray:
        if not 0 < threshold <= self.threshold_hi:
            raise InvalidInputError(
                f"threshold {threshold} outside the simulated range (0, {self.threshold_hi}]"
            )
        out = np.empty(len(self.steps), dtype=np.float64)
        for i, (st, va) in enumerate(zip(self.steps, self.values)):
            pos = np.searchsorted(va, threshold, side="left")
            out[i] = st[pos] if pos < va.size else self.max_steps
        return out

    def far(self, threshold: float) -> float:
        return 1.0 / float(np.mean(self.stop_times(threshold)))


def simulate_crossing_records(
    f: DistributionSpec,
    gbar: DistributionSpec,
    params: PolicyParams,
    threshold_hi: float,
    n_trials: int,
    max_steps: int,
    base_seed: int,
    workers: int | None = None,
) -> CrossingRecords:
    """Simulate no-change trials once at the bracket top, keeping record curves."""
    args = (f, gbar, params, float(threshold_hi), int(max_steps), int(base_seed))
    steps_list, vals_list = map_trial_chunks(_records_chunk, args, n_trials, workers)
    return CrossingRecords(
        steps=steps_list, values=vals_list, max_steps=max_steps, threshold_hi=threshold_hi
    )


def calibrate_from_records(
    records: CrossingRecords, target_far: float, bracket: tuple[float, float], tol: float
) -> float:
    lo, hi = bracket
    if not 0 < lo < hi:
        raise InvalidInputError(f"bad bracket {bracket}; need 0 < lo < hi")
    if tol <= 0:
        raise InvalidInputError(f"tolerance must be > 0, got {tol}")
    if target_far <= 0:
        raise InvalidInputError(f"target FAR must be > 0, got {target_far}")
    if records.far(lo) < target_far or records.far(hi) > target_far:
        raise InvalidInputError(
            f"bracket {bracket} does not straddle target FAR {target_far}: "
            f"FAR(lo)={records.far(lo):.3g}, FAR(hi)={records.far(hi):.3g}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = records.far(mid)
        if abs(fm - target_far) / target_far <= tol:
            return mid
        if fm > target_far:
            lo = mid
        else:
            hi = mid
    raise EstimationFailedError(
        f"bisection did not reach relative tolerance {tol}; "
        "the empirical FAR curve is too coarse at this trial count"
    )


def calibrate_threshold(
    f: DistributionSpec,
    gbar: DistributionSpec,
    params: PolicyParams,
    target_far: float,
    bracket: tuple[float, float],
    tol: float = 0.05,
    n_trials: int = 5000,
    max_steps: int = 1_000_000,
    base_seed: int = 0,
    workers: int | None = None,
) -> float:
    """Bisect the threshold until the estimated FAR matches the target.

    All candidate thresholds are evaluated on the same simulated sample paths
    (the statistic path does not depend on the threshold), so the empirical
    FAR is exactly monotone in the threshold and bisection is well posed.
    """
    records = simulate_crossing_records(
        f, gbar, params, bracket[1], n_trials, max_steps, base_seed, workers
    )
    return calibrate_from_records(records, target_far, bracket, tol)


@dataclass(frozen=True)
class DetectorVariant:
    """A named detector configuration swept over thresholds."""

    label: str
    kind: DetectorKind
    mu: float = 0.0
    h: float = 0.0
    sample_prob: float = 0.5

    def params(self, threshold: float) -> PolicyParams:
        return PolicyParams(
            threshold, mu=self.mu, h=self.h, kind=self.kind, sample_prob=self.sample_prob
        )


@dataclass(frozen=True)
class SweepPlan:
    """Inputs for an operating-characteristic table (the data behind delay-vs-FAR plots)."""

    f: DistributionSpec
    family: PostChangeFamily
    true_g: DistributionSpec
    detectors: tuple[DetectorVariant, ...]
    thresholds: tuple[float, ...] = ()
    target_fars: tuple[float, ...] = ()
    bracket: tuple[float, float] = (1.0, 12.0)
    tol: float = 0.05
    n_trials: int = 5000
    far_max_steps: int = 1_000_000
    wadd_max_steps: int = 100_000
    pdc_horizon: int = 100_000
    pdc_trials: int = 1000
    renewal_cycles: int = 100_000
    base_seed: int = 0

    def __post_init__(self) -> None:
        if not self.detectors:
            raise InvalidInputError("sweep needs at least one detector")
        if bool(self.thresholds) == bool(self.target_fars):
            raise InvalidInputError("give exactly one of thresholds or target_fars")


@dataclass(frozen=True)
class OCRow:
    """One operating-characteristic table row: a detector at one threshold."""

    label: str
    kind: str
    threshold: float
    target_far: float | None
    far: float
    far_ci: float
    mean_time_to_false_alarm: float
    censored_far: int
    wadd: float
    wadd_ci: float
    delay_nu1: float
    history_penalty: float
    pdc_direct: float
    pdc_direct_ci: float
    pdc_effective_threshold: float
    pdc_renewal: float | None
    pdc_renewal_ci: float | None
    n_trials: int

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "kind": self.kind,
            "threshold": self.threshold,
            "target_far": self.target_far,
            "far": self.far,
            "far_ci": self.far_ci,
            "mean_time_to_false_alarm": self.mean_time_to_false_alarm,
            "censored_far": self.censored_far,
            "wadd": self.wadd,
            "wadd_ci": self.wadd_ci,
            "delay_nu1": self.delay_nu1,
            "history_penalty": self.history_penalty,
            "pdc_direct": self.pdc_direct,
            "pdc_direct_ci": self.pdc_direct_ci,
            "pdc_effective_threshold": self.pdc_effective_threshold,
            "pdc_renewal": self.pdc_renewal,
            "pdc_renewal_ci": self.pdc_renewal_ci,
            "n_trials": self.n_trials,
        }


OC_COLUMNS = (
    "label",
    "kind",
    "threshold",
    "target_far",
    "far",
    "far_ci",
    "mean_time_to_false_alarm",
    "censored_far",
    "wadd",
    "wadd_ci",
    "delay_nu1",
    "history_penalty",
    "pdc_direct",
    "pdc_direct_ci",
    "pdc_effective_threshold",
    "pdc_renewal",
    "pdc_renewal_ci",
    "n_trials",
)


def operating_characteristic_sweep(
    plan: SweepPlan, workers: int | None = None
) -> list[OCRow]:
    """Estimate (FAR, WADD, PDC) for every detector at every grid point.

    All detectors and thresholds share the per-trial observation streams, so
    rows are directly comparable (common random numbers).  With target FARs
    instead of thresholds, each detector is calibrated first.
    """
    gbar = lfl_of_family(plan.family)
    rows: list[OCRow] = []
    for det in plan.detectors:
        if plan.target_fars:
            records = simulate_crossing_records(
                plan.f,
                gbar,
                det.params(plan.bracket[1]),
                plan.bracket[1],
                plan.n_trials,
                plan.far_max_steps,
                plan.base_seed,
                workers,
            )
            grid = [
                (calibrate_from_records(records, t, plan.bracket, plan.tol), t)
                for t in plan.target_fars
            ]
        else:
            grid = [(a, None) for a in plan.thresholds]
        for threshold, target in grid:
            params = det.params(threshold)
            far_config = ExperimentConfig(
                f=plan.f,
                family=plan.family,
                params=params,
                n_trials=plan.n_trials,
                max_steps=plan.far_max_steps,
                base_seed=plan.base_seed,
            )
            far = estimate_far(far_config, workers)
            wadd_config = replace(
                far_config,
                true_g=plan.true_g,
                change_point=1,
                max_steps=plan.wadd_max_steps,
            )
            wadd = estimate_wadd(wadd_config, workers)
            pdc_config = replace(
                far_config, n_trials=plan.pdc_trials, max_steps=plan.pdc_horizon
            )
            pdc = estimate_pdc_direct(pdc_config, workers)
            if params.mu > 0:
                renewal = estimate_pdc_renewal(
                    plan.f,
                    gbar,
                    params,
                    n_cycles=plan.renewal_cycles,
                    seed=plan.base_seed,
                    workers=workers,
                )
                renewal_value, renewal_ci = renewal.value, renewal.ci_halfwidth
            else:
                renewal_value, renewal_ci = None, None
            rows.append(
                OCRow(
                    label=det.label,
                    kind=det.kind.value,
                    threshold=threshold,
                    target_far=target,
                    far=far.value,
                    far_ci=far.ci_halfwidth,
                    mean_time_to_false_alarm=far.extras["mean_stop_time"],
                    censored_far=far.censored_trials,
                    wadd=wadd.value,
                    wadd_ci=wadd.ci_halfwidth,
                    delay_nu1=wadd.extras["delay_nu1"],
                    history_penalty=wadd.extras["history_penalty"],
                    pdc_direct=pdc.value,
                    pdc_direct_ci=pdc.ci_halfwidth,
                    pdc_effective_threshold=pdc.extras["effective_threshold"],
                    pdc_renewal=renewal_value,
                    pdc_renewal_ci=renewal_ci,
                    n_trials=plan.n_trials,
                )
            )
    return rows
