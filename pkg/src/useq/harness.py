"""Monte-Carlo verification engine.

Each ``mc_*`` entry point standardizes a simulated statistic by the exact
centering/scaling recipe of its limit theorem and tests the replication
sample against the predicted limit: variance ratio, Kolmogorov-Smirnov
distance to the standard normal, a moment table up to order 4, and, for the
stopping experiments, overshoot law and independence diagnostics.

Determinism contract: replication r always consumes the substream
(master_seed, r); work is split into fixed-size shards whose results are
reassembled in shard order, so reports are bit-identical for any worker
count.  Wall clock and thread count live in a runtime section excluded from
the canonical report.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import __version__
from .errors import ConfigError, DegenerateError
from .limitlaw import centering_and_scaling
from .renewal import (
    RenewalBatch,
    accept_mask,
    condition_on_overshoot,
    merge_batches,
    overshoot_limit_law,
    run_batch,
)
from .sources import substream
from .ucore import prefix_values

SHARD_SIZE = 256
Z_99 = 2.5758293035489004  # two-sided 99% normal quantile


# ---------------------------------------------------------------------------
# Streamed moments with order-independent merging
# ---------------------------------------------------------------------------


@dataclass
class MomentAccumulator:
    """Mergeable central-moment sums up to order 4.

    ``merge`` implements the pairwise update, so shard aggregates combined
    in a fixed order reproduce the monolithic pass to round-off.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def from_array(cls, x: np.ndarray) -> "MomentAccumulator":
        x = np.asarray(x, dtype=float)
        n = len(x)
        if n == 0:
            return cls()
        mean = float(x.mean())
        d = x - mean
        return cls(n, mean, float((d**2).sum()), float((d**3).sum()), float((d**4).sum()))

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        na, nb = self.count, other.count
        if na == 0:
            return MomentAccumulator(**other.__dict__)
        if nb == 0:
            return MomentAccumulator(**self.__dict__)
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * nb / n
        m2 = self.m2 + other.m2 + delta**2 * na * nb / n
        m3 = (
            self.m3
            + other.m3
            + delta**3 * na * nb * (na - nb) / n**2
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n
        )
        m4 = (
            self.m4
            + other.m4
            + delta**4 * na * nb * (na**2 - na * nb + nb**2) / n**3
            + 6.0 * delta**2 * (na**2 * other.m2 + nb**2 * self.m2) / n**2
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n
        )
        return MomentAccumulator(n, mean, m2, m3, m4)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    def raw_moments(self) -> dict:
        """Raw moments E T^k of the sample, k = 1..4."""
        n = self.count
        if n == 0:
            return {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
        mu = self.mean
        c2, c3, c4 = self.m2 / n, self.m3 / n, self.m4 / n
        return {
            1: mu,
            2: c2 + mu**2,
            3: c3 + 3 * mu * c2 + mu**3,
            4: c4 + 4 * mu * c3 + 6 * mu**2 * c2 + mu**4,
        }


def ks_to_standard_normal(sample: np.ndarray) -> float:
    z = np.sort(np.asarray(sample, dtype=float))
    n = len(z)
    u = ndtr(z)
    i = np.arange(1, n + 1)
    return float(max((i / n - u).max(), (u - (i - 1) / n).max()))


def _shards(lo: int, hi: int, size: int = SHARD_SIZE):
    return [(a, min(a + size, hi)) for a in range(lo, hi, size)]


def _parallel_shards(worker, lo, hi, threads):
    """Run worker(lo, hi) over fixed shards; results returned in shard order."""
    spans = _shards(lo, hi)
    if threads <= 1 or len(spans) <= 1:
        return [worker(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: worker(*ab), spans))


def sample_matrix(source, master_seed: int, lo: int, hi: int, n: int) -> np.ndarray:
    """Rows lo..hi-1 of the replication sample matrix, each from its own
    substream (master_seed, rep)."""
    first = source.sample(substream(master_seed, lo), n)
    out = np.empty((hi - lo, n), dtype=np.asarray(first).dtype)
    out[0] = first
    for r in range(lo + 1, hi):
        out[r - lo] = source.sample(substream(master_seed, r), n)
    return out


# ---------------------------------------------------------------------------
# Tolerances and reports
# ---------------------------------------------------------------------------


@dataclass
class Tolerances:
    variance_low: float = 0.9
    variance_high: float = 1.1
    ks_max: float = 0.05
    ratio_low: float = 0.9
    ratio_high: float = 1.1
    cov_se_multiplier: float = 3.0
    tv_max: float = 0.02
    correlation_max: float = 0.05
    degenerate_spread_max: float = 0.05

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class MCReport:
    """Verdict of one Monte-Carlo verification run."""

    scenario: str
    theorem: str
    reps: int
    master_seed: int
    config: dict
    results: dict
    checks: dict
    passed: bool
    runtime: dict = field(default_factory=dict)
    schema_version: int = 1
    artifact_version: str = __version__
    samples: dict | None = field(default=None, repr=False, compare=False)

    def canonical_dict(self) -> dict:
        """Everything except the runtime section (wall clock, thread count)."""
        return {
            "schema_version": self.schema_version,
            "artifact_version": self.artifact_version,
            "scenario": self.scenario,
            "theorem": self.theorem,
            "reps": self.reps,
            "master_seed": self.master_seed,
            "config": self.config,
            "results": self.results,
            "checks": self.checks,
            "passed": self.passed,
        }

    def to_dict(self) -> dict:
        out = self.canonical_dict()
        out["runtime"] = self.runtime
        return out

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def canonical_json(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True)


def _moment_table(acc: MomentAccumulator) -> dict:
    raw = acc.raw_moments()
    normal = {1: 0.0, 2: 1.0, 3: 0.0, 4: 3.0}
    return {
        str(k): {"empirical": raw[k], "normal": normal[k], "delta": raw[k] - normal[k]}
        for k in (1, 2, 3, 4)
    }


def _standardized_summary(acc: MomentAccumulator, sample: np.ndarray) -> dict:
    n = acc.count
    var = acc.variance
    m4 = acc.m4 / n if n else 0.0
    return {
        "mean": acc.mean,
        "variance": var,
        "mean_ci99_halfwidth": Z_99 * math.sqrt(var / n) if n > 1 else float("inf"),
        "variance_ci99_halfwidth": (
            Z_99 * math.sqrt(max(m4 - var**2, 0.0) / n) if n > 1 else float("inf")
        ),
        "ks_distance": ks_to_standard_normal(sample),
        "moments": _moment_table(acc),
    }


def _merge_shard_accumulators(samples: list[np.ndarray]) -> MomentAccumulator:
    acc = MomentAccumulator()
    for shard in samples:
        acc = acc.merge(MomentAccumulator.from_array(shard))
    return acc


def _finalize(
    scenario, theorem, reps, master_seed, config, results, checks, t0, threads, samples=None
):
    return MCReport(
        scenario=scenario,
        theorem=theorem,
        reps=reps,
        master_seed=master_seed,
        config=config,
        results=results,
        checks=checks,
        passed=all(checks.values()),
        runtime={"wall_clock_s": time.perf_counter() - t0, "threads": threads},
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Fixed-n statistics
# ---------------------------------------------------------------------------


def mc_clt_ustat(
    bound,
    n: int,
    reps: int,
    master_seed: int,
    threads: int = 1,
    tolerances: Tolerances | None = None,
) -> MCReport:
    """Standardized U_n against its Gaussian limit, with moment table."""
    tol = tolerances or Tolerances()
    t0 = time.perf_counter()
    law = bound.limit_law
    if law.degenerate:
        raise DegenerateError(
            f"scenario {bound.spec.id} is degenerate (all projections vanish); the "
            "standardized limit is trivial -- see the degeneracy flag in `useq limits`"
        )
    center, scale = centering_and_scaling(
        "ustat-clt",
        n,
        arity=bound.kernel.arity,
        mean=bound.projections.mu,
        variance=law.variance,
    )
    center, scale = float(center), float(scale)

    def worker(lo, hi):
        X = sample_matrix(bound.source, master_seed, lo, hi, n)
        finals = prefix_values(bound.kernel, X)[:, -1].astype(float)
        return (finals - center) / scale

    shards = _parallel_shards(worker, 0, reps, threads)
    statistic = np.concatenate(shards)
    acc = _merge_shard_accumulators(shards)
    summary = _standardized_summary(acc, statistic)
    checks = {
        "variance_in_band": tol.variance_low <= summary["variance"] <= tol.variance_high,
        "ks_below_threshold": summary["ks_distance"] < tol.ks_max,
    }
    results = {
        "statistic": summary,
        "center": center,
        "scale": scale,
        "predicted_variance_of_limit": float(law.variance),
    }
    config = _base_config(bound, dict(n=n), tol)
    return _finalize(
        bound.spec.id, "clt", reps, master_seed, config, results, checks, t0, threads,
        samples={"statistic": statistic},
    )


def mc_fclt(
    bound,
    n: int,
    grid,
    reps: int,
    master_seed: int,
    threads: int = 1,
    tolerances: Tolerances | None = None,
) -> MCReport:
    """Empirical covariance of the rescaled U-process on a time grid against
    the limit covariance polynomial, plus per-time normality."""
    tol = tolerances or Tolerances()
    t0 = time.perf_counter()
    law = bound.limit_law
    if law.degenerate:
        raise DegenerateError(f"scenario {bound.spec.id} is degenerate")
    d = bound.kernel.arity
    mu = float(bound.projections.mu)
    times = np.asarray(sorted(grid), dtype=float)
    if np.any(times < 0):
        raise ConfigError("grid times must be nonnegative")
    idx = np.floor(n * times).astype(int)
    scale = float(n) ** (d - 0.5)
    centers = (n * times) ** d * mu / math.factorial(d)

    def worker(lo, hi):
        X = sample_matrix(bound.source, master_seed, lo, hi, n)
        paths = prefix_values(bound.kernel, X).astype(float)
        vals = np.empty((hi - lo, len(times)))
        for c, m in enumerate(idx):
            vals[:, c] = (paths[:, m - 1] if m >= 1 else 0.0) - centers[c]
        return vals / scale

    shards = _parallel_shards(worker, 0, reps, threads)
    stats = np.concatenate(shards, axis=0)
    emp_mean = stats.mean(axis=0)
    centered = stats - emp_mean
    emp_cov = centered.T @ centered / (reps - 1)
    predicted = np.array(
        [[float(law.covariance(s, t)) for t in times] for s in times]
    )
    # standard error of each covariance entry from the empirical 4th moments
    m22 = (centered[:, :, None] ** 2 * centered[:, None, :] ** 2).mean(axis=0)
    cov_se = np.sqrt(np.maximum(m22 - emp_cov**2, 0.0) / reps)
    deviation = np.abs(emp_cov - predicted)
    within = deviation <= tol.cov_se_multiplier * np.maximum(cov_se, 1e-300)
    ks_per_time = {}
    for c, t in enumerate(times):
        v = predicted[c, c]
        if v > 0:
            ks_per_time[f"{t:g}"] = ks_to_standard_normal(stats[:, c] / math.sqrt(v))
    checks = {"covariance_within_se_band": bool(within.all())}
    results = {
        "times": times.tolist(),
        "empirical_mean": emp_mean.tolist(),
        "empirical_covariance": emp_cov.tolist(),
        "predicted_covariance": predicted.tolist(),
        "covariance_se": cov_se.tolist(),
        "max_deviation_in_se": float(
            (deviation / np.maximum(cov_se, 1e-300)).max()
        ),
        "ks_per_time": ks_per_time,
    }
    config = _base_config(bound, dict(n=n, grid=times.tolist()), tol)
    return _finalize(bound.spec.id, "fclt", reps, master_seed, config, results, checks, t0, threads)


# ---------------------------------------------------------------------------
# Stopping experiments
# ---------------------------------------------------------------------------


def _threaded_batch_runner(bound, x, master_seed, threads, with_companion=True):
    kernel, source = bound.kernel, bound.source
    companion = bound.companion if with_companion else None
    mean = float(bound.projections.mu)

    def runner(rep_indices):
        rep_indices = np.asarray(rep_indices)
        chunks = [rep_indices[i : i + SHARD_SIZE] for i in range(0, len(rep_indices), SHARD_SIZE)]
        if threads <= 1 or len(chunks) <= 1:
            parts = [
                run_batch(kernel, source, x, master_seed, c, companion=companion, mean=mean)
                for c in chunks
            ]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(
                    pool.map(
                        lambda c: run_batch(
                            kernel, source, x, master_seed, c, companion=companion, mean=mean
                        ),
                        chunks,
                    )
                )
        return merge_batches(parts)

    return runner


def mc_renewal_clt(
    bound,
    x: float,
    reps: int,
    master_seed: int,
    threads: int = 1,
    tolerances: Tolerances | None = None,
    stop: str = "minus",
) -> MCReport:
    """Standardized crossing index N+/-(x), plus first/second moment ratios."""
    tol = tolerances or Tolerances()
    t0 = time.perf_counter()
    law = bound.limit_law
    if law.degenerate:
        raise DegenerateError(f"scenario {bound.spec.id} is degenerate")
    d = bound.kernel.arity
    mu = float(bound.projections.mu)
    variance = float(law.variance)
    center, scale = centering_and_scaling(
        "stopping-clt", x, arity=d, mean=mu, variance=variance
    )
    pred_mean, _ = centering_and_scaling("stopping-mean", x, arity=d, mean=mu)
    pred_var, _ = centering_and_scaling(
        "stopping-var", x, arity=d, mean=mu, variance=variance
    )
    runner = _threaded_batch_runner(bound, x, master_seed, threads, with_companion=False)
    batch = runner(np.arange(reps))
    crossing = (batch.n_minus if stop == "minus" else batch.n_plus).astype(float)
    statistic = (crossing - center) / scale
    shards = [statistic[a:b] for a, b in _shards(0, reps)]
    acc = _merge_shard_accumulators(shards)
    summary = _standardized_summary(acc, statistic)
    cross_acc = _merge_shard_accumulators([crossing[a:b] for a, b in _shards(0, reps)])
    mean_ratio = cross_acc.mean / pred_mean
    var_ratio = cross_acc.variance / pred_var
    lln_value = cross_acc.mean / x ** (1.0 / d)
    checks = {
        "variance_in_band": tol.variance_low <= summary["variance"] <= tol.variance_high,
        "ks_below_threshold": summary["ks_distance"] < tol.ks_max,
        "mean_ratio_in_band": tol.ratio_low <= mean_ratio <= tol.ratio_high,
        "var_ratio_in_band": tol.ratio_low <= var_ratio <= tol.ratio_high,
    }
    results = {
        "statistic": summary,
        "center": float(center),
        "scale": float(scale),
        "stop": stop,
        "crossing_mean": cross_acc.mean,
        "crossing_variance": cross_acc.variance,
        "predicted_mean": float(pred_mean),
        "predicted_variance": float(pred_var),
        "mean_ratio": mean_ratio,
        "var_ratio": var_ratio,
        "lln_value": lln_value,
        "lln_limit": (math.factorial(d) / mu) ** (1.0 / d),
    }
    config = _base_config(bound, dict(x=x, stop=stop), tol)
    return _finalize(
        bound.spec.id, "renewal", reps, master_seed, config, results, checks, t0, threads,
        samples={"statistic": statistic, "overshoot": batch.overshoot},
    )


def mc_stopped_clt(
    bound,
    x: float,
    reps: int,
    master_seed: int,
    threads: int = 1,
    tolerances: Tolerances | None = None,
    conditioning=None,
    stop: str = "minus",
    degenerate_branch: bool = False,
) -> MCReport:
    """Standardized stopped companion statistic, optionally conditioned on
    the overshoot value or on an exact threshold hit.

    Unconditioned runs also report the overshoot total-variation distance to
    its limit table and the overshoot/statistic correlation (the asymptotic
    independence of the joint limit).
    """
    tol = tolerances or Tolerances()
    t0 = time.perf_counter()
    if bound.companion is None:
        raise ConfigError(f"scenario {bound.spec.id} has no companion kernel")
    stopped = bound.stopped_law
    d, dc = bound.kernel.arity, bound.companion.arity
    mu = float(bound.projections.mu)
    mu_c = float(bound.companion_projections.mu)
    gamma2 = float(stopped.variance)
    if stopped.degenerate_pair and not degenerate_branch:
        raise DegenerateError(
            "stopped variance is zero (companion projections are collinear with "
            "the threshold's); rerun with degenerate_branch=True to test the decay"
        )
    center = float(
        centering_and_scaling(
            "stopped-mean", x, arity=d, mean=mu, companion_arity=dc, companion_mean=mu_c
        )[0]
    )
    if degenerate_branch:
        scale = float(x) ** (dc / d - 1.0 / (2 * d))
    else:
        _, scale = centering_and_scaling(
            "stopped-clt",
            x,
            arity=d,
            mean=mu,
            companion_arity=dc,
            companion_mean=mu_c,
            stopped_variance=gamma2,
        )
    runner = _threaded_batch_runner(bound, x, master_seed, threads, with_companion=True)
    if conditioning is None:
        batch = runner(np.arange(reps))
        accepted = reps
        attempts = reps
    else:
        batch = condition_on_overshoot(
            bound.kernel,
            bound.source,
            x,
            conditioning,
            master_seed,
            reps,
            companion=bound.companion,
            mean=mu,
            batch_runner=runner,
        )
        accepted = len(batch.n_plus)
        attempts = None
    values = (
        batch.companion_at_nminus if stop == "minus" else batch.companion_at_nplus
    ).astype(float)
    statistic = (values - center) / scale
    shards = [statistic[a:b] for a, b in _shards(0, len(statistic))]
    acc = _merge_shard_accumulators(shards)
    summary = _standardized_summary(acc, statistic)
    pred_var_value, _ = centering_and_scaling(
        "stopped-var",
        x,
        arity=d,
        mean=mu,
        companion_arity=dc,
        companion_mean=mu_c,
        stopped_variance=gamma2,
    )
    raw_acc = _merge_shard_accumulators([values[a:b] for a, b in _shards(0, len(values))])
    results = {
        "statistic": summary,
        "center": center,
        "scale": float(scale),
        "stop": stop,
        "conditioning": _condition_name(conditioning),
        "stopped_mean": raw_acc.mean,
        "stopped_variance": raw_acc.variance,
        "predicted_stopped_variance": float(pred_var_value),
        "gamma2": gamma2,
        "expected_references": bound.expected_references(),
    }
    if degenerate_branch:
        checks = {"degenerate_spread_vanishes": summary["variance"] <= tol.degenerate_spread_max}
        results["raw_spread_variance"] = summary["variance"]
    else:
        checks = {
            "variance_in_band": tol.variance_low <= summary["variance"] <= tol.variance_high,
            "ks_below_threshold": summary["ks_distance"] < tol.ks_max,
        }
    if conditioning is None:
        try:
            law = overshoot_limit_law(bound.kernel, bound.source)
            tv = law.total_variation(batch.overshoot)
            corr = float(np.corrcoef(batch.overshoot, statistic)[0, 1])
            results["overshoot_tv_distance"] = tv
            results["overshoot_statistic_correlation"] = corr
            results["overshoot_table"] = {
                str(int(k)): float(p) for k, p in zip(law.ks, law.probs)
            }
            checks["overshoot_tv_below"] = tv <= tol.tv_max
            checks["overshoot_independence"] = abs(corr) <= tol.correlation_max
        except ConfigError:
            pass
    else:
        results["accepted"] = accepted
    config = _base_config(
        bound,
        dict(x=x, stop=stop, conditioning=_condition_name(conditioning)),
        tol,
    )
    return _finalize(
        bound.spec.id, "stopped", reps, master_seed, config, results, checks, t0, threads,
        samples={"statistic": statistic, "overshoot": batch.overshoot},
    )


def _condition_name(conditioning) -> str | None:
    if conditioning is None:
        return None
    if conditioning == "exact-hit":
        return "exact-hit"
    return f"overshoot={conditioning[1]}"


def _base_config(bound, sizes: dict, tol: Tolerances) -> dict:
    cfg = {
        "kernel": bound.kernel.name,
        "companion": bound.companion.name if bound.companion is not None else None,
        "dist": bound.source.name,
        "tolerances": tol.as_dict(),
    }
    cfg.update(sizes)
    return cfg
