"""Binomial confidence intervals and per-cluster sample sizes.

Two routes to a required sample size for estimating a proportion p to
half-width delta at a given confidence:

  * Wilson score: closed-form n from the chi-square-inverted interval.
  * modified Jeffreys: smallest n whose expected credible-interval length
    (averaged over the binomial distribution of successes) drops to
    2*delta; found by bracketing and bisection on n.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ParameterError


@dataclass(frozen=True)
class SizingSpec:
    p: float
    delta: float
    confidence: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ParameterError("p must be in (0, 1)")
        if not 0.0 < self.delta <= 0.5:
            raise ParameterError("delta must be in (0, 0.5]")
        if not 0.0 < self.confidence < 1.0:
            raise ParameterError("confidence must be in (0, 1)")

    @property
    def alpha(self):
        return 1.0 - self.confidence


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.upper <= 1.0:
            raise ParameterError("interval endpoints must satisfy 0 <= lower <= upper <= 1")

    @property
    def length(self):
        return self.upper - self.lower


@dataclass(frozen=True)
class SizeResult:
    n_wilson: int
    n_jeffreys: int
    spec: SizingSpec


def normal_quantile(q):
    """Standard normal quantile Phi^{-1}(q) for q in (0, 1)."""
    if not 0.0 < q < 1.0:
        raise ParameterError("q must be in (0, 1)")
    return float(special.ndtri(q))


def beta_quantile(q, a, b):
    """Inverse of the regularized incomplete beta: x with I_x(a, b) = q."""
    if not 0.0 < q < 1.0:
        raise ParameterError("q must be in (0, 1)")
    if a <= 0 or b <= 0:
        raise ParameterError("shape parameters must be positive")
    return float(special.betaincinv(a, b, q))


def wilson_ci(X, n, confidence):
    """Wilson score interval for X successes out of n, clipped to [0, 1]."""
    if n < 1 or not 0 <= X <= n:
        raise ParameterError("need n >= 1 and 0 <= X <= n")
    z = normal_quantile(1.0 - (1.0 - confidence) / 2.0)
    z2 = z * z
    center = 2.0 * X + z2
    half = z * np.sqrt(z2 + 4.0 * X * (1.0 - X / n))
    denom = 2.0 * (n + z2)
    lower = max(0.0, (center - half) / denom)
    upper = min(1.0, (center + half) / denom)
    return Interval(lower, upper)


def wilson_sample_size_raw(spec):
    """Closed-form Wilson sample size before rounding."""
    z = normal_quantile(1.0 - spec.alpha / 2.0)
    z2 = z * z
    d2 = 4.0 * spec.delta * spec.delta
    a = d2 - 2.0 * spec.p * (1.0 - spec.p)
    return (z2 * (-a + np.sqrt(a * a - d2 * (d2 - 1.0)))) / d2


def wilson_sample_size(spec):
    """Wilson sample size rounded to the nearest integer (at least 1).

    A delta large enough to annihilate the formula (e.g. delta = 0.5 with
    p = 0.5) returns 0 with a warning.
    """
    raw = wilson_sample_size_raw(spec)
    if raw <= 0.0:
        warnings.warn(f"wilson_sample_size: nonpositive size at {spec}")
        return 0
    return max(1, int(round(raw)))


def _jeffreys_bounds(n, confidence):
    """Modified-Jeffreys lower/upper arrays over X = 0..n.

    Interior X uses Beta(X+1/2, n-X+1/2) quantiles; X = 0 and X = n use the
    exponential exact bounds, and the inner endpoints at X = 1 and X = n-1
    are anchored at 0 and 1 respectively.
    """
    alpha = 1.0 - confidence
    X = np.arange(n + 1, dtype=float)
    a = X + 0.5
    b = n - X + 0.5
    lower = special.betaincinv(a, b, alpha / 2.0)
    upper = special.betaincinv(a, b, 1.0 - alpha / 2.0)
    edge = (alpha / 2.0) ** (1.0 / n)
    lower[0] = 0.0
    upper[0] = 1.0 - edge
    lower[n] = edge
    upper[n] = 1.0
    if n >= 2:
        lower[1] = 0.0
        upper[n - 1] = 1.0
    return lower, upper


def jeffreys_ci(X, n, confidence):
    """Modified Jeffreys (Beta(1/2,1/2) posterior) interval with boundary fixes."""
    if n < 1 or not 0 <= X <= n:
        raise ParameterError("need n >= 1 and 0 <= X <= n")
    alpha = 1.0 - confidence
    edge = (alpha / 2.0) ** (1.0 / n)
    if X == 0:
        return Interval(0.0, 1.0 - edge)
    if X == n:
        return Interval(edge, 1.0)
    a, b = X + 0.5, n - X + 0.5
    lower = 0.0 if X == 1 else beta_quantile(alpha / 2.0, a, b)
    upper = 1.0 if X == n - 1 else beta_quantile(1.0 - alpha / 2.0, a, b)
    return Interval(lower, upper)


def expected_length(n, spec, include_boundary_terms=False):
    """Expected modified-Jeffreys interval length under Binomial(n, p).

    The sum runs over X = 1..n with exact binomial weights evaluated in log
    space; ``include_boundary_terms`` adds the X = 0 term.
    """
    if n < 2:
        raise ParameterError("expected_length needs n >= 2")
    lower, upper = _jeffreys_bounds(n, spec.confidence)
    delta = upper - lower
    X = np.arange(n + 1, dtype=float)
    log_w = (
        special.gammaln(n + 1.0)
        - special.gammaln(X + 1.0)
        - special.gammaln(n - X + 1.0)
        + X * np.log(spec.p)
        + (n - X) * np.log1p(-spec.p)
    )
    w = np.exp(log_w)
    start = 0 if include_boundary_terms else 1
    return float(np.dot(delta[start:], w[start:]))


def jeffreys_sample_size(spec, include_boundary_terms=False):
    """Smallest n with expected_length(n) <= 2*delta.

    Exponential bracketing followed by integer bisection; the expected
    length vanishes as n grows, so termination is guaranteed.
    """
    target = 2.0 * spec.delta

    def el(n):
        return expected_length(n, spec, include_boundary_terms)

    if el(2) <= target:
        return 2
    lo, hi = 2, 4
    while el(hi) > target:
        lo, hi = hi, hi * 2
        if hi > 1 << 26:
            raise ParameterError("jeffreys_sample_size failed to bracket")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if el(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def compute_sizes(spec, include_boundary_terms=False):
    return SizeResult(
        n_wilson=wilson_sample_size(spec),
        n_jeffreys=jeffreys_sample_size(spec, include_boundary_terms),
        spec=spec,
    )
