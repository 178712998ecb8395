"""Closed-form limit parameters of the rescaled U-process.

Everything downstream of the projections lives here: the polynomial time
weights of the limit process, its variance and covariance function, the
stopped-companion variance, degeneracy conditions, and the exact centering
and scaling constants of every standardized statistic the harness tests.

All factorial-weight formulas are evaluated with exact integer factorials
followed by a single division, and they stay in Fraction arithmetic whenever
the inputs are rational.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb, factorial
from typing import Mapping

import numpy as np

from .errors import ConfigError, DegenerateError


def _is_exact(value) -> bool:
    return isinstance(value, (int, Fraction))


def _entries(sigma):
    """Normalize a matrix-like into a nested list."""
    if isinstance(sigma, np.ndarray):
        return [[sigma[i, j] for j in range(sigma.shape[1])] for i in range(sigma.shape[0])]
    return [list(row) for row in sigma]


def projection_weight(j: int, arity: int, s, t):
    """Weight of the j-th projection increment in the limit process:
    s^(j-1) (t-s)^(arity-j) / ((j-1)! (arity-j)!).

    Summed over j this is t^(arity-1)/(arity-1)! by the binomial theorem.
    """
    if not 1 <= j <= arity:
        raise ConfigError(f"slot {j} out of range 1..{arity}")
    num = s ** (j - 1) * (t - s) ** (arity - j)
    return num / Fraction(factorial(j - 1) * factorial(arity - j)) if _is_exact(num) else num / (
        factorial(j - 1) * factorial(arity - j)
    )


def projection_weight_derivative(j: int, arity: int, s, t):
    """d/ds of projection_weight(j, arity, s, t)."""
    if not 1 <= j <= arity:
        raise ConfigError(f"slot {j} out of range 1..{arity}")
    denom = factorial(j - 1) * factorial(arity - j)
    first = (j - 1) * s ** (j - 2) * (t - s) ** (arity - j) if j >= 2 else 0.0
    second = (arity - j) * s ** (j - 1) * (t - s) ** (arity - j - 1) if j <= arity - 1 else 0.0
    return (first - second) / denom


def variance_weight(i: int, j: int, arity: int) -> Fraction:
    """Coefficient of sigma_ij in Var Z_1, i.e. the Beta integral of the
    i-th and j-th projection weights over [0, 1]."""
    d = arity
    num = factorial(i + j - 2) * factorial(2 * d - i - j)
    den = (
        factorial(i - 1)
        * factorial(j - 1)
        * factorial(d - i)
        * factorial(d - j)
        * factorial(2 * d - 1)
    )
    return Fraction(num, den)


def limit_variance(sigma, arity: int):
    """Var Z_1: the variance of the n^(d-1/2)-scale Gaussian limit."""
    rows = _entries(sigma)
    total = 0
    for i in range(1, arity + 1):
        for j in range(1, arity + 1):
            total = total + variance_weight(i, j, arity) * rows[i - 1][j - 1]
    return total


def limit_covariance_coeffs(sigma, arity: int) -> dict:
    """Cov(Z_s, Z_t) for 0 <= s <= t as {(a, b): coeff} over monomials s^a t^b.

    The defining integral expands exactly by the binomial theorem; the result
    is a homogeneous polynomial of degree 2*arity - 1 with t-degree < arity.
    """
    d = arity
    rows = _entries(sigma)
    coeffs: dict = {}
    for i in range(1, d + 1):
        for j in range(1, d + 1):
            sij = rows[i - 1][j - 1]
            if sij == 0:
                continue
            base = Fraction(
                1,
                factorial(i - 1) * factorial(j - 1) * factorial(d - i) * factorial(d - j),
            )
            for k in range(0, d - j + 1):
                a_exp = i + j - 2
                b_exp = 2 * d - i - j - k
                beta = Fraction(
                    factorial(a_exp) * factorial(b_exp), factorial(a_exp + b_exp + 1)
                )
                # expand (t-s)^k into monomials
                for r in range(0, k + 1):
                    key = (2 * d - 1 - r, r)
                    term = base * comb(d - j, k) * beta * comb(k, r) * (-1) ** (k - r) * sij
                    coeffs[key] = coeffs.get(key, 0) + term
    return {k: v for k, v in coeffs.items() if v != 0}


def limit_covariance(s, t, sigma, arity: int, coeffs: Mapping | None = None):
    """Cov(Z_s, Z_t); symmetric in (s, t)."""
    if s > t:
        s, t = t, s
    if coeffs is None:
        coeffs = limit_covariance_coeffs(sigma, arity)
    total = 0
    for (a, b), c in coeffs.items():
        total = total + c * s**a * t**b
    return total


def cross_z1_covariance(cross_cov, companion_arity: int, arity: int):
    """Cov(companion Z_1, threshold Z_1) from the projection cross-covariances.

    The weight of cross_cov[i][j] is the Beta integral of the i-th companion
    and j-th threshold projection weights over [0, 1].
    """
    rows = _entries(cross_cov)
    dc, d = companion_arity, arity
    total = 0
    for i in range(1, dc + 1):
        for j in range(1, d + 1):
            num = factorial(i + j - 2) * factorial(dc + d - i - j)
            den = (
                factorial(i - 1)
                * factorial(dc - i)
                * factorial(j - 1)
                * factorial(d - j)
                * factorial(dc + d - 1)
            )
            total = total + Fraction(num, den) * rows[i - 1][j - 1]
    return total


@dataclass
class LimitLaw:
    """Parameters of the one-kernel Gaussian limit."""

    arity: int
    variance: object  # Var Z_1
    cov_coeffs: dict
    degenerate: bool

    @classmethod
    def from_projections(cls, model, tol: float = 1e-10, source=None):
        var = limit_variance(model.sigma, model.d)
        if not model.exact:
            degenerate = mc_degeneracy(model).flagged_degenerate
        elif source is not None:
            degenerate = is_degenerate(model, source, tol)
        else:
            degenerate = float(var) <= tol
        return cls(
            arity=model.d,
            variance=var,
            cov_coeffs=limit_covariance_coeffs(model.sigma, model.d),
            degenerate=degenerate,
        )

    def covariance(self, s, t):
        return limit_covariance(s, t, None, self.arity, coeffs=self.cov_coeffs)


@dataclass
class StoppedLimitLaw:
    """Joint limit of (threshold, companion): the stopped-statistic variance."""

    arity: int
    companion_arity: int
    mean: object
    companion_mean: object
    cross_cov: list
    centering_ratio: object  # c = (d-1)! mu_c / ((d_c-1)! mu)
    variance: object  # gamma^2
    var_companion_z1: object
    var_threshold_z1: object
    cov_z1: object
    degenerate_pair: bool


def stopped_limit_variance(threshold_model, companion_model, cross_cov) -> StoppedLimitLaw:
    """The asymptotic variance of the companion statistic stopped when the
    threshold U-process crosses a level.

    gamma^2 = (d!/mu)^((2 d_c - 1)/d) * Var(Zc_1 - c Z_1) with
    c = (d-1)! mu_c / ((d_c-1)! mu); the three variance pieces come from the
    factorial-weight quadratic forms of the projection covariances.
    """
    d, dc = threshold_model.d, companion_model.d
    mu, mu_c = threshold_model.mu, companion_model.mu
    if not float(mu) > 0:
        raise ConfigError("threshold kernel must have positive mean")
    var_z = limit_variance(threshold_model.sigma, d)
    var_zc = limit_variance(companion_model.sigma, dc)
    cov = cross_z1_covariance(cross_cov, dc, d)
    c = Fraction(factorial(d - 1), factorial(dc - 1)) * mu_c / mu if _is_exact(mu) and _is_exact(mu_c) else (
        factorial(d - 1) * mu_c / (factorial(dc - 1) * mu)
    )
    spread = var_zc - 2 * c * cov + c * c * var_z
    ratio = Fraction(factorial(d)) / mu if _is_exact(mu) else factorial(d) / mu
    exponent = Fraction(2 * dc - 1, d)
    if _is_exact(spread) and _is_exact(ratio) and exponent.denominator == 1:
        gamma2 = ratio ** int(exponent) * spread
    else:
        gamma2 = float(ratio) ** float(exponent) * float(spread)
    if float(gamma2) < 0:
        if float(gamma2) < -1e-10:
            raise ConfigError(f"negative stopped variance {float(gamma2)}")
        gamma2 = 0 * gamma2
    return StoppedLimitLaw(
        arity=d,
        companion_arity=dc,
        mean=mu,
        companion_mean=mu_c,
        cross_cov=_entries(cross_cov),
        centering_ratio=c,
        variance=gamma2,
        var_companion_z1=var_zc,
        var_threshold_z1=var_z,
        cov_z1=cov,
        degenerate_pair=float(gamma2) <= 1e-12,
    )


# ---------------------------------------------------------------------------
# Degeneracy conditions
# ---------------------------------------------------------------------------


def _probe_points(model, source, points: int = 64):
    from .ucore import PolyProjections, TabulatedProjections  # local: avoid cycle at import

    rep = model.rep
    if isinstance(rep, TabulatedProjections):
        return list(rep.symbols)
    if isinstance(rep, PolyProjections):
        vals, _ = source.projection_grid(points)
        return list(vals)
    raise ConfigError("exact degeneracy checks need an exact projection model")


def is_degenerate(model, source, tol: float = 1e-10) -> bool:
    """All projections vanish on the support (exact models only)."""
    if not model.exact:
        raise ConfigError("use mc_degeneracy for monte-carlo projection models")
    pts = _probe_points(model, source)
    return all(
        abs(float(model.projection(i, x))) <= tol for i in range(1, model.d + 1) for x in pts
    )


@dataclass
class MCDegeneracyCall:
    """Degeneracy decision from Monte-Carlo projections: a confidence flag,
    never a hard boolean."""

    flagged_degenerate: bool
    max_abs_over_se: float
    threshold_sigmas: float

    def __str__(self):
        verdict = "degenerate" if self.flagged_degenerate else "nondegenerate"
        return (
            f"{verdict} with confidence (max |proj|/se = {self.max_abs_over_se:.2f}, "
            f"threshold {self.threshold_sigmas:.1f})"
        )


def mc_degeneracy(model, threshold_sigmas: float = 3.0) -> MCDegeneracyCall:
    """Flag degeneracy when every estimated projection sits within
    ``threshold_sigmas`` standard errors of zero everywhere on the grid."""
    from .ucore import GridProjections

    if not isinstance(model.rep, GridProjections):
        raise ConfigError("mc_degeneracy needs monte-carlo projections")
    ratios = np.abs(model.rep.values) / np.maximum(model.rep.std_errors, 1e-300)
    worst = float(ratios.max())
    return MCDegeneracyCall(worst <= threshold_sigmas, worst, threshold_sigmas)


def companion_projections_collinear(
    threshold_model, companion_model, source, tol: float = 1e-10
) -> bool:
    """Whether the companion projections are the exact binomial mixture of
    the threshold projections that makes the stopped variance vanish.

    With arities d <= d_c this requires, for every i and a.e. x,
    companion_i(x) = (mu_c/mu) * sum_j C(d-1, j-1) C(d_c-d, i-j) / C(d_c-1, i-1)
    threshold_j(x); for d_c < d the roles swap.
    """
    a, b = threshold_model, companion_model
    if b.d < a.d:
        a, b = b, a  # a is the lower-arity model
    if float(a.mu) == 0:
        return all(
            abs(float(b.projection(i, x))) <= tol
            for i in range(1, b.d + 1)
            for x in _probe_points(b, source)
        )
    ratio = b.mu / a.mu
    pts = _probe_points(a, source)
    scale = max(
        [1.0]
        + [abs(float(b.projection(i, x))) for i in range(1, b.d + 1) for x in pts]
    )
    for i in range(1, b.d + 1):
        den = comb(b.d - 1, i - 1)
        for x in pts:
            mix = sum(
                comb(a.d - 1, j - 1) * comb(b.d - a.d, i - j) * a.projection(j, x)
                for j in range(max(1, i - (b.d - a.d)), min(a.d, i) + 1)
            )
            lhs = b.projection(i, x)
            if abs(float(lhs - ratio * mix / den)) > tol * scale:
                return False
    return True


# ---------------------------------------------------------------------------
# Centering and scaling recipes
# ---------------------------------------------------------------------------

STATISTICS = (
    "ustat-clt",
    "stopping-lln",
    "stopping-clt",
    "stopped-lln",
    "stopped-clt",
    "stopping-mean",
    "stopping-var",
    "stopped-mean",
    "stopped-var",
)


def centering_and_scaling(
    statistic: str,
    size,
    *,
    arity: int,
    mean=None,
    variance=None,
    companion_arity: int | None = None,
    companion_mean=None,
    stopped_variance=None,
):
    """(center, scale) of the standardized statistic named by ``statistic``.

    ``size`` is the sample count n for the fixed-n statistics and the
    threshold x for the stopping/stopped ones.  The *-mean/*-var statistics
    return the predicted moment as the center with scale 1, so that
    empirical/predicted ratios read off directly.
    """
    d = arity
    if statistic == "ustat-clt":
        n = int(size)
        if variance is None or mean is None:
            raise ConfigError("ustat-clt needs mean and variance")
        if float(variance) <= 0:
            raise DegenerateError("degenerate limit: refuse to standardize by zero")
        return comb(n, d) * mean, float(n) ** (d - 0.5) * math.sqrt(float(variance))
    if statistic in ("stopping-lln", "stopping-clt", "stopping-mean", "stopping-var"):
        if mean is None or not float(mean) > 0:
            raise ConfigError("stopping statistics need a positive mean")
        x = float(size)
        rate = (factorial(d) / float(mean)) ** (1.0 / d)
        if statistic == "stopping-lln":
            return rate * x ** (1.0 / d), x ** (1.0 / d)
        if statistic == "stopping-mean":
            return rate * x ** (1.0 / d), 1.0
        if variance is None:
            raise ConfigError(f"{statistic} needs the limit variance")
        spread = (factorial(d) / float(mean)) ** (2.0 + 1.0 / d) / d**2 * float(variance)
        if statistic == "stopping-var":
            return spread * x ** (1.0 / d), 1.0
        if float(variance) <= 0:
            raise DegenerateError("degenerate limit: refuse to standardize by zero")
        return rate * x ** (1.0 / d), x ** (1.0 / (2 * d)) * math.sqrt(spread)
    if statistic in ("stopped-lln", "stopped-clt", "stopped-mean", "stopped-var"):
        if None in (mean, companion_arity, companion_mean):
            raise ConfigError(f"{statistic} needs threshold and companion parameters")
        if not float(mean) > 0:
            raise ConfigError("stopped statistics need a positive threshold mean")
        dc = companion_arity
        x = float(size)
        center = (
            (factorial(d) / float(mean)) ** (dc / d)
            * float(companion_mean)
            / factorial(dc)
            * x ** (dc / d)
        )
        if statistic == "stopped-lln":
            return center, x ** (dc / d)
        if statistic == "stopped-mean":
            return center, 1.0
        if stopped_variance is None:
            raise ConfigError(f"{statistic} needs the stopped variance")
        if statistic == "stopped-var":
            return float(stopped_variance) * x ** ((2 * dc - 1) / d), 1.0
        if float(stopped_variance) <= 0:
            raise DegenerateError("stopped statistic is degenerate; nothing to standardize")
        return center, x ** (dc / d - 1.0 / (2 * d)) * math.sqrt(float(stopped_variance))
    raise ConfigError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")
