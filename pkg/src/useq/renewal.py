"""Threshold crossings of the U-process and overshoot laws.

For a threshold x, the crossing pair is N+(x) = first n with U_n > x and
N-(x) = last n with U_n <= x.  Nonnegative kernels give N+ = N- + 1 exactly;
for signed kernels N- is only identified heuristically (the process must sit
above x for a confirmation horizon), and outcomes carry nminus_exact=False.

An optional companion kernel is evaluated on the same sample path, so the
stopped companion value and the overshoot come from one run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import factorial, gcd

import numpy as np

from .errors import BudgetError, ConfigError
from .kernels import Kernel, kernel_integer_for, kernel_nonnegative_for
from .sources import FiniteSource, SampleSource, substream
from .ucore import GenericStream, SeparableStream, separable_prefix_values


def expected_crossing_index(arity: int, mean: float, x: float) -> float:
    """The deterministic index scale n(x) = (d!/mean)^(1/d) x^(1/d)."""
    if not mean > 0:
        raise ConfigError("renewal theory needs a positive kernel mean")
    return (factorial(arity) / mean) ** (1.0 / arity) * x ** (1.0 / arity)


def default_confirmation_horizon(nx: float) -> int:
    return int(math.ceil(4.0 * math.sqrt(max(nx, 1.0)))) + 64


@dataclass
class RenewalOutcome:
    """One threshold-crossing run."""

    threshold: float
    n_plus: int
    n_minus: int
    u_at_nplus: float
    u_at_nminus: float
    overshoot: float
    companion_at_nminus: float | None
    companion_at_nplus: float | None
    hit_exact: bool  # some U_m equalled the threshold exactly
    nminus_exact: bool  # False when found by the confirmation-horizon heuristic


def run_to_threshold(
    kernel: Kernel,
    source: SampleSource,
    x: float,
    rng: np.random.Generator,
    companion: Kernel | None = None,
    mean: float | None = None,
    step_budget: int | None = None,
    confirmation_horizon: int | None = None,
) -> RenewalOutcome:
    """Stream samples until the U-process crosses x; scalar reference engine.

    ``mean`` (the kernel mean, required positive) sizes the step budget,
    64 * n(x) by default.  Signed kernels use the confirmation-horizon
    policy for N-; the horizon default is 4 sqrt(n(x)) + 64 steps.
    """
    if mean is None or not mean > 0:
        raise ConfigError("run_to_threshold needs the kernel mean (must be > 0)")
    if x < 0:
        raise ConfigError("threshold must be nonnegative")
    nx = expected_crossing_index(kernel.arity, mean, max(x, 1.0))
    budget = step_budget if step_budget is not None else int(64 * nx) + kernel.arity + 8
    nonneg = kernel_nonnegative_for(kernel, source)
    horizon = (
        confirmation_horizon
        if confirmation_horizon is not None
        else default_confirmation_horizon(nx)
    )

    def new_stream(k):
        return SeparableStream(k) if k.separable else GenericStream(k, n_max=budget + 1)

    stream = new_stream(kernel)
    comp = new_stream(companion) if companion is not None else None
    chunk = max(64, int(nx / 8) + 1)
    values = [0]
    comp_values = [0]
    n_plus = None
    last_below = 0
    above_run = 0
    hit = False
    while True:
        draws = source.sample(rng, chunk)
        for xval in draws:
            stream.update(xval)
            if comp is not None:
                comp.update(xval)
            values.append(stream.value)
            if comp is not None:
                comp_values.append(comp.value)
            n = stream.n
            v = stream.value
            if v == x:
                hit = True
            if v > x:
                if n_plus is None:
                    n_plus = n
                above_run += 1
            else:
                last_below = n
                above_run = 0
            if n_plus is not None and (nonneg or above_run >= horizon):
                n_minus = n_plus - 1 if nonneg else last_below
                return RenewalOutcome(
                    threshold=x,
                    n_plus=n_plus,
                    n_minus=n_minus,
                    u_at_nplus=values[n_plus],
                    u_at_nminus=values[n_minus],
                    overshoot=values[n_plus] - x,
                    companion_at_nminus=comp_values[n_minus] if comp is not None else None,
                    companion_at_nplus=comp_values[n_plus] if comp is not None else None,
                    hit_exact=hit,
                    nminus_exact=nonneg,
                )
            if n >= budget:
                raise BudgetError(
                    f"no crossing of {x} within {budget} items "
                    f"(mis-specified scenario? mean={mean})"
                )


@dataclass
class RenewalBatch:
    """Arrays over replications from vectorized threshold runs."""

    threshold: float
    n_plus: np.ndarray
    n_minus: np.ndarray
    u_at_nplus: np.ndarray
    u_at_nminus: np.ndarray
    overshoot: np.ndarray
    companion_at_nminus: np.ndarray | None
    companion_at_nplus: np.ndarray | None
    hit_exact: np.ndarray


def run_batch(
    kernel: Kernel,
    source: SampleSource,
    x: float,
    master_seed: int,
    rep_indices,
    companion: Kernel | None = None,
    mean: float | None = None,
    step_budget: int | None = None,
) -> RenewalBatch:
    """Vectorized threshold runs for nonnegative separable kernels.

    Replication r consumes the substream (master_seed, r), so results are
    identical however the replications are sharded.
    """
    if not kernel.separable:
        raise ConfigError("run_batch needs a separable kernel; use run_to_threshold")
    if not kernel_nonnegative_for(kernel, source):
        raise ConfigError("run_batch needs a nonnegative kernel; use run_to_threshold")
    if companion is not None and not companion.separable:
        raise ConfigError("run_batch companions must be separable")
    if mean is None or not mean > 0:
        raise ConfigError("run_batch needs the kernel mean (must be > 0)")
    rep_indices = np.asarray(rep_indices, dtype=np.int64)
    nx = expected_crossing_index(kernel.arity, mean, max(x, 1.0))
    budget = step_budget if step_budget is not None else int(64 * nx) + kernel.arity + 8
    first_chunk = int(1.2 * nx) + 32
    reps = len(rep_indices)
    n_plus = np.empty(reps, dtype=np.int64)
    u_plus = np.empty(reps, dtype=np.float64)
    u_minus = np.empty(reps, dtype=np.float64)
    comp_minus = np.empty(reps, dtype=np.float64) if companion is not None else None
    comp_plus = np.empty(reps, dtype=np.float64) if companion is not None else None
    hit = np.zeros(reps, dtype=bool)
    for out_i, rep in enumerate(rep_indices):
        rng = substream(master_seed, int(rep))
        consumed = 0
        rows = None
        comp_rows = None
        chunk = first_chunk
        prev_u = 0.0
        prev_c = 0.0
        crossing = None
        while crossing is None:
            if consumed >= budget:
                raise BudgetError(f"replication {rep}: no crossing within {budget} items")
            draws = source.sample(rng, min(chunk, budget - consumed))
            path, rows = separable_prefix_values(kernel, draws[None, :], initial_row=rows)
            path = path[0]
            above = np.nonzero(path > x)[0]
            cpath = None
            if companion is not None:
                cpath, comp_rows = separable_prefix_values(
                    companion, draws[None, :], initial_row=comp_rows
                )
                cpath = cpath[0]
            if above.size:
                j = int(above[0])
                crossing = consumed + j + 1
                u_plus[out_i] = path[j]
                u_minus[out_i] = path[j - 1] if j > 0 else prev_u
                hit[out_i] = hit[out_i] or bool(np.any(path[: j + 1] == x))
                if companion is not None:
                    comp_plus[out_i] = cpath[j]
                    comp_minus[out_i] = cpath[j - 1] if j > 0 else prev_c
            else:
                hit[out_i] = hit[out_i] or bool(np.any(path == x))
                prev_u = float(path[-1])
                if companion is not None:
                    prev_c = float(cpath[-1])
            consumed += len(draws)
            chunk = max(64, chunk // 2)
        n_plus[out_i] = crossing
    return RenewalBatch(
        threshold=x,
        n_plus=n_plus,
        n_minus=n_plus - 1,
        u_at_nplus=u_plus,
        u_at_nminus=u_minus,
        overshoot=u_plus - x,
        companion_at_nminus=comp_minus,
        companion_at_nplus=comp_plus,
        hit_exact=hit,
    )


# ---------------------------------------------------------------------------
# Overshoot limit laws
# ---------------------------------------------------------------------------


@dataclass
class LatticeOvershootLaw:
    """P(limit overshoot = k * span) = (span/mean) P(f(X) >= k * span)."""

    span: int
    ks: np.ndarray  # multiples of span, k = 1, 2, ...
    probs: np.ndarray
    mean: float

    def total_variation(self, observed: np.ndarray) -> float:
        observed = np.asarray(observed)
        n = len(observed)
        tv = 0.0
        matched = np.zeros(n, dtype=bool)
        for k, p in zip(self.ks, self.probs):
            sel = observed == k
            matched |= sel
            tv += abs(sel.mean() - p)
        tail_emp = 1.0 - matched.mean()
        tail_law = max(0.0, 1.0 - float(self.probs.sum()))
        return 0.5 * (tv + abs(tail_emp - tail_law))


@dataclass
class ContinuousOvershootLaw:
    """CDF grid of the nonlattice overshoot limit."""

    grid: np.ndarray
    cdf: np.ndarray
    mean: float

    def cdf_at(self, y: float) -> float:
        return float(np.interp(y, self.grid, self.cdf))


def _value_distribution(kernel: Kernel, source: SampleSource, tail: float = 1e-15):
    """Distribution of f(X) for arity-1 kernels on tabulatable sources."""
    if kernel.arity != 1:
        raise ConfigError("overshoot laws are defined for arity-1 kernels")
    if isinstance(source, FiniteSource):
        pairs = {}
        for s, p in source.pmf_pairs():
            v = kernel.evaluate(s)
            pairs[v] = pairs.get(v, 0) + p
        return sorted(pairs.items())
    if source.integer_support:
        ks, probs = source.pmf_table(tail)
        pairs = {}
        for k, p in zip(ks, probs):
            v = kernel.evaluate(int(k))
            pairs[v] = pairs.get(v, 0.0) + float(p)
        return sorted(pairs.items())
    raise ConfigError(f"no tabulated value distribution for {kernel.name} on {source.name}")


def overshoot_limit_law(
    kernel: Kernel,
    source: SampleSource,
    quantile_cutoff: float = 1e-12,
):
    """The limiting overshoot law of the d=1 renewal process U_n = sum f(X_i).

    Integer-valued nonnegative kernels give the lattice law on multiples of
    the span; the uniform(0,1) identity pairing gives the nonlattice law
    with CDF (1/mean) * integral of P(f > s).
    """
    if not kernel_nonnegative_for(kernel, source):
        raise ConfigError("overshoot laws need a nonnegative kernel")
    if kernel.arity != 1:
        raise ConfigError("overshoot laws are defined for arity-1 kernels")
    if kernel_integer_for(kernel, source):
        pairs = _value_distribution(kernel, source)
        values = [int(v) for v, _ in pairs]
        probs = [float(p) for _, p in pairs]
        mean = float(sum(v * p for v, p in zip(values, probs)))
        if not mean > 0:
            raise ConfigError("overshoot law needs a positive mean")
        span = 0
        for v, p in zip(values, probs):
            if p > 0 and v != 0:
                span = gcd(span, v)
        if span == 0:
            raise ConfigError("f(X) = 0 a.s.; no renewal process")
        vmax = values[-1]
        ks, ps = [], []
        k = 1
        acc = 0.0
        while k * span <= vmax:
            tail_p = sum(p for v, p in zip(values, probs) if v >= k * span)
            prob = span / mean * tail_p
            ks.append(k * span)
            ps.append(prob)
            acc += prob
            if 1.0 - acc <= quantile_cutoff:
                break
            k += 1
        return LatticeOvershootLaw(span, np.asarray(ks), np.asarray(ps), mean)
    if kernel.name == "identity" and source.name == "uniform01":
        # P(f > s) = 1 - s on [0, 1]
        grid = np.linspace(0.0, 1.0, 513)
        tail_vals = 1.0 - grid
        mean = 0.5
        cdf = np.concatenate([[0.0], np.cumsum((tail_vals[1:] + tail_vals[:-1]) / 2.0)])
        cdf *= (grid[1] - grid[0]) / mean
        cdf = np.clip(cdf, 0.0, 1.0)
        return ContinuousOvershootLaw(grid, cdf, mean)
    raise ConfigError(f"unsupported overshoot pairing: {kernel.name} on {source.name}")


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------


def check_condition_feasible(kernel: Kernel, source: SampleSource, x: float, condition):
    """Span arithmetic: conditioning events must have positive probability.

    Overshoot k needs x + k on the value lattice of the partial sums and
    P(limit overshoot = k) > 0; an exact hit needs x itself on the lattice.
    """
    law = overshoot_limit_law(kernel, source)
    if not isinstance(law, LatticeOvershootLaw):
        raise ConfigError("conditioning needs an integer-valued kernel")
    h = law.span
    if x != int(x):
        raise ConfigError("conditioning thresholds must be integers")
    if condition == "exact-hit":
        if int(x) % h != 0:
            raise ConfigError(f"exact hit of {x} impossible: partial sums live on {h}Z")
        return law
    kind, k = condition
    if kind != "overshoot":
        raise ConfigError(f"unknown condition {condition!r}")
    k = int(k)
    if k < 1:
        raise ConfigError("overshoot target must be >= 1")
    if (int(x) + k) % h != 0:
        raise ConfigError(
            f"overshoot {k} at threshold {x} impossible: x + k must be a multiple "
            f"of the span {h}"
        )
    idx = np.nonzero(law.ks == k)[0]
    if len(idx) == 0 or law.probs[idx[0]] <= 0:
        raise ConfigError(f"overshoot {k} has limit probability 0")
    return law


def accept_mask(batch: RenewalBatch, condition) -> np.ndarray:
    if condition is None:
        return np.ones(len(batch.n_plus), dtype=bool)
    if condition == "exact-hit":
        return batch.hit_exact.copy()
    kind, k = condition
    if kind != "overshoot":
        raise ConfigError(f"unknown condition {condition!r}")
    return batch.overshoot == int(k)


def merge_batches(batches: list[RenewalBatch], keep_masks=None, limit=None) -> RenewalBatch:
    """Concatenate batches (optionally filtered by masks) in the given order."""

    def gather(field):
        if getattr(batches[0], field) is None:
            return None
        parts = []
        for i, b in enumerate(batches):
            arr = getattr(b, field)
            parts.append(arr if keep_masks is None else arr[keep_masks[i]])
        out = np.concatenate(parts)
        return out[:limit] if limit is not None else out

    return RenewalBatch(
        threshold=batches[0].threshold,
        n_plus=gather("n_plus"),
        n_minus=gather("n_minus"),
        u_at_nplus=gather("u_at_nplus"),
        u_at_nminus=gather("u_at_nminus"),
        overshoot=gather("overshoot"),
        companion_at_nminus=gather("companion_at_nminus"),
        companion_at_nplus=gather("companion_at_nplus"),
        hit_exact=gather("hit_exact"),
    )


def acceptance_estimate(law: LatticeOvershootLaw, condition) -> float:
    """Limit probability of the conditioning event, used to size waves."""
    if condition == "exact-hit":
        return law.span / law.mean  # P(some partial sum = x) -> span/mean
    idx = np.nonzero(law.ks == int(condition[1]))[0]
    return float(law.probs[idx[0]])


def condition_on_overshoot(
    kernel: Kernel,
    source: SampleSource,
    x: float,
    condition,
    master_seed: int,
    accepted_target: int,
    companion: Kernel | None = None,
    mean: float | None = None,
    max_attempts: int | None = None,
    batch_runner=None,
) -> RenewalBatch:
    """Rejection-sample threshold runs until ``accepted_target`` outcomes
    satisfy the conditioning event (overshoot = k, or an exact hit).

    Attempts consume substreams (master_seed, 0), (master_seed, 1), ... in
    order, so the accepted set is deterministic and worker-count free.
    ``batch_runner(rep_indices) -> RenewalBatch`` may be supplied to run
    attempt waves on a worker pool.
    """
    law = check_condition_feasible(kernel, source, x, condition)
    p_est = acceptance_estimate(law, condition)
    if max_attempts is None:
        max_attempts = int(50 * accepted_target / max(p_est, 1e-6)) + 1000
    if batch_runner is None:

        def batch_runner(rep_indices):
            return run_batch(
                kernel, source, x, master_seed, rep_indices, companion=companion, mean=mean
            )

    batches = []
    masks = []
    accepted = 0
    next_rep = 0
    while accepted < accepted_target:
        if next_rep >= max_attempts:
            raise BudgetError(
                f"conditioning accepted {accepted}/{accepted_target} after "
                f"{next_rep} attempts"
            )
        wave = int((accepted_target - accepted) / max(p_est, 1e-6) * 1.25) + 16
        wave = min(wave, max_attempts - next_rep)
        batch = batch_runner(np.arange(next_rep, next_rep + wave))
        keep = accept_mask(batch, condition)
        batches.append(batch)
        masks.append(keep)
        accepted += int(keep.sum())
        next_rep += wave
    return merge_batches(batches, masks, limit=accepted_target)
