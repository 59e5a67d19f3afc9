"""Map false-alarm and duty-cycle constraints to detector parameters.

The false-alarm constraint alpha fixes the threshold (A = -log(alpha), natural
log).  The duty-cycle constraint beta bounds the skip-recovery rate mu, either
through the asymptotic rule mu <= beta/(1-beta) * KL(f || gbar), or through
the finite-h Monte-Carlo constants:

* C1 — expected first-passage time below zero of the cumulative llr walk under
  the no-change law;
* C2 — E[|truncated llr| given a negative llr] times P(llr < 0)^2, with the
  truncation at -h.

Both constants are estimated from seeded trials with reported confidence
half-widths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import DistributionSpec, kl_divergence
from .errors import EstimationUnstableError, InvalidInputError
from .simulate import WALK_CAP, simulate_walks

_Z95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class DesignConstraints:
    """Target operating constraints: alpha on false alarms, beta on sampling cost."""

    alpha: float
    beta: float
    h: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 < self.beta < 1:
            raise InvalidInputError(f"beta must be in (0, 1), got {self.beta}")
        if self.h < 0:
            raise InvalidInputError(f"h must be >= 0, got {self.h}")


def threshold_for_far(alpha: float) -> float:
    """Threshold guaranteeing a false alarm rate of at most alpha: -ln(alpha)."""
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    return -math.log(alpha)


def mu_asymptotic(beta: float, f: DistributionSpec, gbar: DistributionSpec) -> float:
    """Largest mu permitted by the large-threshold, deep-truncation duty-cycle rule.

    Returns beta/(1-beta) * KL(f || gbar); any mu in (0, bound] satisfies the
    duty-cycle constraint beta in that asymptotic regime.
    """
    if not 0 < beta < 1:
        raise InvalidInputError(f"beta must be in (0, 1), got {beta}")
    return beta / (1.0 - beta) * kl_divergence(f, gbar)


@dataclass(frozen=True)
class AppendixConstants:
    """Monte-Carlo estimates of the duty-cycle design constants for a given h."""

    c1: float
    c2: float
    c1_ci_halfwidth: float
    c2_ci_halfwidth: float
    p_llr_negative: float
    h: float
    n_trials: int
    capped_trials: int

    def __post_init__(self) -> None:
        if self.c1 <= 0:
            raise InvalidInputError(f"c1 must be > 0, got {self.c1}")
        if self.c2 < 0:
            raise InvalidInputError(f"c2 must be >= 0, got {self.c2}")


def estimate_appendix_constants(
    f: DistributionSpec,
    gbar: DistributionSpec,
    h: float,
    n_trials: int = 100_000,
    seed: int = 0,
    workers: int | None = None,
    walk_cap: int = WALK_CAP,
) -> AppendixConstants:
    """Estimate C1 and C2 from n_trials seeded first-passage walks under f.

    C1 is the mean number of steps until the cumulative llr walk first drops
    below zero (each walk capped at ``walk_cap`` steps; more than 0.1% capped
    walks aborts the estimate).  C2 multiplies the conditional mean of the
    truncated negative llr by the squared probability of a negative llr, both
    estimated from the first increment of the same walks.
    """
    if n_trials < 10_000:
        raise InvalidInputError(f"need n_trials >= 10000, got {n_trials}")
    if h < 0:
        raise InvalidInputError(f"h must be >= 0, got {h}")
    drift = kl_divergence(f, gbar)
    if drift <= 0 or not math.isfinite(drift):
        raise InvalidInputError("KL(f || gbar) must be positive and finite")
    walks = simulate_walks(f, gbar, n_trials, seed, cap=walk_cap, workers=workers)
    if walks.capped > 0.001 * n_trials:
        raise EstimationUnstableError(
            f"{walks.capped}/{n_trials} walks hit the {walk_cap}-step cap; "
            "the llr drift is too small for a stable estimate"
        )
    lengths = walks.lengths.astype(np.float64)
    c1 = float(np.mean(lengths))
    c1_half = _Z95 * float(np.std(lengths, ddof=1)) / math.sqrt(n_trials)

    z = walks.first_increments
    negative = z < 0.0
    p_neg = float(np.count_nonzero(negative)) / n_trials
    trunc = np.abs(np.maximum(z[negative], -h))
    n_neg = trunc.size
    if n_neg == 0:
        cond_mean, cond_half = 0.0, 0.0
    else:
        cond_mean = float(np.mean(trunc))
        cond_half = (
            _Z95 * float(np.std(trunc, ddof=1)) / math.sqrt(n_neg) if n_neg > 1 else 0.0
        )
    c2 = cond_mean * p_neg**2
    # The p_neg factor is estimated from the same sample; propagate both pieces.
    p_half = _Z95 * math.sqrt(max(p_neg * (1 - p_neg), 0.0) / n_trials)
    c2_half = p_neg**2 * cond_half + 2.0 * p_neg * cond_mean * p_half
    return AppendixConstants(
        c1=c1,
        c2=c2,
        c1_ci_halfwidth=c1_half,
        c2_ci_halfwidth=c2_half,
        p_llr_negative=p_neg,
        h=h,
        n_trials=n_trials,
        capped_trials=walks.capped,
    )


def mu_for_pdc(beta: float, constants: AppendixConstants) -> float:
    """Finite-h duty-cycle rule: mu <= beta/(1-beta) * C2(h)/C1."""
    if not 0 < beta < 1:
        raise InvalidInputError(f"beta must be in (0, 1), got {beta}")
    if constants.c1 <= 0:
        raise InvalidInputError("c1 must be positive")
    return beta / (1.0 - beta) * constants.c2 / constants.c1


def wadd_lower_bound(alpha: float, gbar: DistributionSpec, f: DistributionSpec) -> float:
    """First-order universal lower bound on worst-case delay: |ln alpha| / KL(gbar || f).

    Holds for every policy meeting the alpha constraint, whatever its sampling
    budget beta.
    """
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    kl = kl_divergence(gbar, f)
    if kl <= 0:
        raise InvalidInputError("KL(gbar || f) must be positive")
    return -math.log(alpha) / kl


def wadd_upper_bound_first_order(
    threshold_a: float, gbar: DistributionSpec, f: DistributionSpec
) -> float:
    """Leading term of the detector's worst-case delay at threshold A: A / KL(gbar || f)."""
    if threshold_a <= 0:
        raise InvalidInputError(f"threshold must be > 0, got {threshold_a}")
    kl = kl_divergence(gbar, f)
    if kl <= 0:
        raise InvalidInputError("KL(gbar || f) must be positive")
    return threshold_a / kl


@dataclass(frozen=True)
class WaldDiagnostic:
    """Agreement check between E|walk endpoint| and E[walk length] * KL(f || gbar)."""

    mean_abs_end: float
    mean_abs_end_se: float
    length_times_kl: float
    length_times_kl_se: float
    n_walks: int

    @property
    def gap(self) -> float:
        return abs(self.mean_abs_end - self.length_times_kl)

    @property
    def joint_se(self) -> float:
        return math.sqrt(self.mean_abs_end_se**2 + self.length_times_kl_se**2)

    def within_sigma(self, n_sigma: float = 3.0) -> bool:
        return self.gap <= n_sigma * self.joint_se


def wald_identity_diagnostic(
    f: DistributionSpec,
    gbar: DistributionSpec,
    n_walks: int = 100_000,
    seed: int = 0,
    workers: int | None = None,
) -> WaldDiagnostic:
    """Monte-Carlo check of Wald's identity on the first-passage walk under f.

    The expected absolute walk value at the first passage below zero equals the
    expected passage time times KL(f || gbar).
    """
    walks = simulate_walks(f, gbar, n_walks, seed, workers=workers)
    if walks.capped:
        raise EstimationUnstableError(f"{walks.capped} walks hit the cap")
    kl = kl_divergence(f, gbar)
    abs_end = np.abs(walks.end_values)
    lengths = walks.lengths.astype(np.float64)
    return WaldDiagnostic(
        mean_abs_end=float(np.mean(abs_end)),
        mean_abs_end_se=float(np.std(abs_end, ddof=1)) / math.sqrt(n_walks),
        length_times_kl=float(np.mean(lengths)) * kl,
        length_times_kl_se=float(np.std(lengths, ddof=1)) / math.sqrt(n_walks) * kl,
        n_walks=n_walks,
    )
