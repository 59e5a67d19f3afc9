"""Univariate pre/post-change laws, likelihood ratios, and least-favorable laws.

Two families are supported: Gaussian with unit variance (parameterized by its
mean) and Poisson (parameterized by its rate).  For both, the log-likelihood
ratio between two members is affine in the observation, which is what every
detector and estimator in this package consumes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

_LOG_2PI = math.log(2.0 * math.pi)


class Kind(str, enum.Enum):
    GAUSSIAN_UNIT_VAR = "norm"
    POISSON = "pois"


@dataclass(frozen=True)
class DistributionSpec:
    """A named univariate law: N(param, 1) or Pois(param)."""

    kind: Kind
    param: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.param):
            raise InvalidInputError(f"distribution parameter must be finite, got {self.param}")
        if self.kind is Kind.POISSON and self.param <= 0:
            raise InvalidInputError(f"Poisson rate must be > 0, got {self.param}")

    def log_density(self, x):
        """Log density (Gaussian) or log pmf (Poisson) at x; accepts scalars or arrays."""
        if self.kind is Kind.GAUSSIAN_UNIT_VAR:
            d = np.asarray(x, dtype=float) - self.param
            out = -0.5 * d * d - 0.5 * _LOG_2PI
        else:
            k = _require_counts(x)
            out = k * math.log(self.param) - self.param - _log_factorial(k)
        return float(out) if np.isscalar(x) else out

    def density(self, x):
        out = np.exp(self.log_density(x))
        return float(out) if np.isscalar(x) else out

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw from the law; deterministic given the generator state."""
        if self.kind is Kind.GAUSSIAN_UNIT_VAR:
            return rng.normal(self.param, 1.0, size)
        return rng.poisson(self.param, size)

    def mean(self) -> float:
        return self.param

    def __str__(self) -> str:  # matches the CLI flag syntax, e.g. "pois:2"
        return f"{self.kind.value}:{self.param:g}"


def gaussian(mean: float) -> DistributionSpec:
    return DistributionSpec(Kind.GAUSSIAN_UNIT_VAR, float(mean))


def poisson(rate: float) -> DistributionSpec:
    return DistributionSpec(Kind.POISSON, float(rate))


def _log_factorial(k):
    return np.array([math.lgamma(v + 1.0) for v in np.atleast_1d(k)]).reshape(np.shape(k))


def _require_counts(x):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(arr != np.floor(arr)):
        raise InvalidInputError("Poisson observations must be nonnegative integers")
    return arr


class FamilyKind(str, enum.Enum):
    GAUSSIAN_MEAN_AT_LEAST = "norm-mean-at-least"
    POISSON_RATE_AT_LEAST = "pois-rate-at-least"
    EXPLICIT_LFL = "explicit-lfl"


@dataclass(frozen=True)
class PostChangeFamily:
    """A post-change family with a one-sided bound parameter and a known least favorable law.

    The least favorable law (LFL) is the member whose induced log-likelihood
    ratio law is stochastically smallest; a detector designed against it is
    robust to every member of the family.
    """

    kind: FamilyKind
    bound: float
    explicit: DistributionSpec | None = None

    def __post_init__(self) -> None:
        if self.kind is FamilyKind.POISSON_RATE_AT_LEAST and self.bound <= 0:
            raise InvalidInputError(f"Poisson rate bound must be > 0, got {self.bound}")
        if self.kind is FamilyKind.EXPLICIT_LFL and self.explicit is None:
            raise InvalidInputError("explicit-lfl family needs a DistributionSpec")

    @classmethod
    def gaussian_mean_at_least(cls, mean_bound: float) -> "PostChangeFamily":
        return cls(FamilyKind.GAUSSIAN_MEAN_AT_LEAST, float(mean_bound))

    @classmethod
    def poisson_rate_at_least(cls, rate_bound: float) -> "PostChangeFamily":
        return cls(FamilyKind.POISSON_RATE_AT_LEAST, float(rate_bound))

    @classmethod
    def explicit_lfl(cls, spec: DistributionSpec) -> "PostChangeFamily":
        return cls(FamilyKind.EXPLICIT_LFL, float(spec.param), spec)

    def contains(self, spec: DistributionSpec) -> bool:
        if self.kind is FamilyKind.GAUSSIAN_MEAN_AT_LEAST:
            return spec.kind is Kind.GAUSSIAN_UNIT_VAR and spec.param >= self.bound
        if self.kind is FamilyKind.POISSON_RATE_AT_LEAST:
            return spec.kind is Kind.POISSON and spec.param >= self.bound
        # Escape hatch: the user vouches for the supplied LFL, so membership is
        # only constrained to the same observation support.
        assert self.explicit is not None
        return spec.kind is self.explicit.kind


def lfl_of_family(family: PostChangeFamily) -> DistributionSpec:
    """The least favorable member: the boundary law, or the user-supplied one."""
    if family.kind is FamilyKind.GAUSSIAN_MEAN_AT_LEAST:
        return gaussian(family.bound)
    if family.kind is FamilyKind.POISSON_RATE_AT_LEAST:
        return poisson(family.bound)
    assert family.explicit is not None
    return family.explicit


def llr_coefficients(f: DistributionSpec, gbar: DistributionSpec) -> tuple[float, float]:
    """(slope, intercept) of the affine map x -> log gbar(x)/f(x).

    Gaussian pair: slope = m_g - m_f, intercept = -(m_g^2 - m_f^2)/2.
    Poisson pair:  slope = log(r_g / r_f), intercept = r_f - r_g.
    """
    if f.kind is not gbar.kind:
        raise InvalidInputError(f"mixed distribution kinds: {f.kind.value} vs {gbar.kind.value}")
    if f.kind is Kind.GAUSSIAN_UNIT_VAR:
        slope = gbar.param - f.param
        intercept = -(gbar.param**2 - f.param**2) / 2.0
    else:
        slope = math.log(gbar.param / f.param)
        intercept = f.param - gbar.param
    return slope, intercept


def log_likelihood_ratio(f: DistributionSpec, gbar: DistributionSpec, x):
    """log gbar(x)/f(x) in closed form; accepts scalars or arrays.

    The closed form avoids forming density quotients, so it stays finite at
    extreme x.  Poisson observations must be nonnegative integers.
    """
    slope, intercept = llr_coefficients(f, gbar)
    if f.kind is Kind.POISSON:
        vals = _require_counts(x)
    else:
        vals = np.asarray(x, dtype=float)
    out = slope * vals + intercept
    return float(out) if np.isscalar(x) else out


def kl_divergence(p: DistributionSpec, q: DistributionSpec) -> float:
    """Kullback-Leibler divergence D(p || q), in closed form.

    Gaussian unit variance: (m_p - m_q)^2 / 2.
    Poisson: r_p log(r_p/r_q) - r_p + r_q.
    """
    if p.kind is not q.kind:
        raise InvalidInputError(f"mixed distribution kinds: {p.kind.value} vs {q.kind.value}")
    if p.kind is Kind.GAUSSIAN_UNIT_VAR:
        return (p.param - q.param) ** 2 / 2.0
    return p.param * math.log(p.param / q.param) - p.param + q.param


def expected_llr(f: DistributionSpec, gbar: DistributionSpec, under: DistributionSpec) -> float:
    """E[log gbar(X)/f(X)] for X ~ under, via the affine closed form."""
    if under.kind is not f.kind:
        raise InvalidInputError("expectation law must match the likelihood-ratio pair kind")
    slope, intercept = llr_coefficients(f, gbar)
    return slope * under.mean() + intercept


@dataclass(frozen=True)
class LlrSample:
    """One realization of log gbar(X)/f(X), tagged with the generating regime."""

    value: float
    source: str  # "pre-change" or "post-change"
    source_param: float | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise InvalidInputError("log-likelihood ratio sample must be finite")


def draw_llr_sample(
    f: DistributionSpec,
    gbar: DistributionSpec,
    under: DistributionSpec,
    rng: np.random.Generator,
    pre_change: bool,
) -> LlrSample:
    x = under.sample(rng)
    return LlrSample(
        value=log_likelihood_ratio(f, gbar, x),
        source="pre-change" if pre_change else "post-change",
        source_param=None if pre_change else under.param,
    )


@dataclass(frozen=True)
class DominanceReport:
    """Result of an empirical stochastic-dominance check for an LFL candidate."""

    holds: bool
    max_cdf_violation: float
    slack: float
    mean_llr_under_g: float
    mean_llr_under_lfl: float
    n_samples: int


def dkw_slack(n_samples: int, delta: float = 0.01) -> float:
    """Two-sided DKW band width for two empirical survival curves of size n each."""
    return 2.0 * math.sqrt(math.log(2.0 / delta) / (2.0 * n_samples))


def check_lfl_dominance(
    family: PostChangeFamily,
    g: DistributionSpec,
    f: DistributionSpec,
    n_samples: int = 100_000,
    seed: int = 0,
    delta: float = 0.01,
) -> DominanceReport:
    """Empirically verify the defining property of the least favorable law.

    With Z = log gbar(X)/f(X), the law of Z under any family member g must
    stochastically dominate its law under the LFL itself:
    P_g(Z >= t) >= P_lfl(Z >= t) for all t.  The check draws n_samples of Z
    under both laws, compares empirical survival functions on the pooled grid,
    and declares a violation only when the gap exceeds a two-sided DKW band
    (benign crossings at finite n are expected).
    """
    if n_samples < 1000:
        raise InvalidInputError(f"need n_samples >= 1000, got {n_samples}")
    if not family.contains(g):
        raise InvalidInputError(f"{g} is not a member of the family (bound {family.bound})")
    gbar = lfl_of_family(family)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    z_g = np.sort(log_likelihood_ratio(f, gbar, g.sample(rng, n_samples)))
    z_lfl = np.sort(log_likelihood_ratio(f, gbar, gbar.sample(rng, n_samples)))
    grid = np.concatenate([z_g, z_lfl])
    # Empirical survival P(Z >= t): count of samples >= t via searchsorted on
    # the sorted draws.
    surv_g = 1.0 - np.searchsorted(z_g, grid, side="left") / n_samples
    surv_lfl = 1.0 - np.searchsorted(z_lfl, grid, side="left") / n_samples
    max_violation = float(np.max(surv_lfl - surv_g))
    slack = dkw_slack(n_samples, delta)
    return DominanceReport(
        holds=max_violation <= slack,
        max_cdf_violation=max(max_violation, 0.0),
        slack=slack,
        mean_llr_under_g=expected_llr(f, gbar, g),
        mean_llr_under_lfl=expected_llr(f, gbar, gbar),
        n_samples=n_samples,
    )


def parse_spec(text: str) -> DistributionSpec:
    """Parse the compact flag syntax 'kind:param', e.g. 'pois:2' or 'norm:0.5'."""
    try:
        kind_text, param_text = text.split(":", 1)
        kind = Kind(kind_text.strip())
        param = float(param_text)
    except (ValueError, KeyError) as exc:
        raise InvalidInputError(
            f"bad distribution spec {text!r}; expected 'norm:<mean>' or 'pois:<rate>'"
        ) from exc
    return DistributionSpec(kind, param)


def parse_family(text: str) -> PostChangeFamily:
    """Parse a family spec: 'norm-mean-at-least:0.5', 'pois-rate-at-least:1', or a plain law."""
    head = text.split(":", 1)[0].strip()
    if head in {Kind.GAUSSIAN_UNIT_VAR.value, Kind.POISSON.value}:
        return PostChangeFamily.explicit_lfl(parse_spec(text))
    try:
        kind = FamilyKind(head)
        bound = float(text.split(":", 1)[1])
    except (ValueError, IndexError, KeyError) as exc:
        raise InvalidInputError(
            f"bad family spec {text!r}; expected e.g. 'norm-mean-at-least:0.5'"
        ) from exc
    if kind is FamilyKind.EXPLICIT_LFL:
        raise InvalidInputError("explicit-lfl must be given as a plain law, e.g. 'pois:2'")
    return PostChangeFamily(kind, bound)
