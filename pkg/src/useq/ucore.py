"""U-statistic evaluation engines and Hoeffding projections.

Three independent engines compute U_n = sum over increasing index d-tuples of
f(X_{i_1}, ..., X_{i_d}):

- ``u_oracle``: brute-force enumeration of all C(n, d) tuples;
- ``SeparableStream``: O(d)-per-item dynamic program for product kernels;
- ``GenericStream``: incremental evaluation adding the C(n-1, d-1) tuples
  that end at the newest item.

The oracle exists so the streaming engines are self-verifying; all three
agree exactly for integer kernels.  Batch (replication-vectorized) variants
of the streaming engines back the Monte-Carlo harness.

Projections: mu = E f, f_i(x) = E f(X_1..X_{i-1}, x, X_{i+1}..X_d) - mu, and
the d x d matrix sigma_ij = E f_i(X) f_j(X), computed exactly by finite
enumeration, by relative-order enumeration (rank-based kernels), by moment
algebra (separable polynomial kernels), or by Monte Carlo with standard
errors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial
from typing import Sequence

import numpy as np

from . import polys
from .errors import BudgetError, ConfigError, EnumerationError
from .kernels import Kernel
from .sources import FiniteSource, SampleSource

# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------


def u_oracle(kernel: Kernel, xs: Sequence):
    """Exact U_n by summing f over all increasing index d-tuples (0 if n < d)."""
    d = kernel.arity
    total = 0
    for tup in itertools.combinations(xs, d):
        total += kernel.evaluate(*tup)
    return total


def u_prefix_oracle(kernel: Kernel, xs: Sequence) -> list:
    """[U_0, U_1, ..., U_n] by brute force; the reference for every engine."""
    return [u_oracle(kernel, xs[:m]) for m in range(len(xs) + 1)]


class SeparableStream:
    """Streaming U-state for separable kernels.

    Maintains the row p_0..p_d with p_j the sum over increasing j-tuples of
    the product of the first j factors; p_0 = 1 and U_n = p_d.  Each item
    updates the row in descending j so the current item is never reused
    (the classic subsequence-count DP).
    """

    def __init__(self, kernel: Kernel):
        if not kernel.separable:
            raise ConfigError(f"kernel {kernel.name} is not separable")
        self.kernel = kernel
        self.n = 0
        self.dp_row = [0] * (kernel.arity + 1)
        self.dp_row[0] = 1
        self.running_max_abs = 0

    @property
    def value(self):
        return self.dp_row[self.kernel.arity]

    def update(self, x):
        gs = self.kernel.separable_factors
        for j in range(self.kernel.arity, 0, -1):
            self.dp_row[j] = self.dp_row[j] + self.dp_row[j - 1] * gs[j - 1](x)
        self.n += 1
        self.running_max_abs = max(self.running_max_abs, abs(self.value))

    def update_many(self, xs):
        for x in xs:
            self.update(x)
        return self


class GenericStream:
    """Streaming U-state for arbitrary kernels; retains the sample prefix.

    Each new item adds the kernel sum over all (d-1)-subsets of the history,
    with the new item in the last argument slot.  Refuses to grow past
    ``n_max`` rather than silently degrading.
    """

    def __init__(self, kernel: Kernel, n_max: int = 100_000):
        self.kernel = kernel
        self.n_max = n_max
        self.history: list = []
        self.value = 0
        self.running_max_abs = 0

    @property
    def n(self):
        return len(self.history)

    def update(self, x):
        if len(self.history) >= self.n_max:
            raise BudgetError(f"generic engine capped at n_max={self.n_max} items")
        d = self.kernel.arity
        if d == 1:
            self.value = self.value + self.kernel.evaluate(x)
        elif len(self.history) >= d - 1:
            ev = self.kernel.evaluate
            acc = 0
            for tup in itertools.combinations(self.history, d - 1):
                acc += ev(*tup, x)
            self.value = self.value + acc
        self.history.append(x)
        self.running_max_abs = max(self.running_max_abs, abs(self.value))

    def update_many(self, xs):
        for x in xs:
            self.update(x)
        return self


# ---------------------------------------------------------------------------
# Batch engines (replication-vectorized)
# ---------------------------------------------------------------------------


def _int64_bound_ok(kernel: Kernel, X: np.ndarray) -> bool:
    if not np.issubdtype(X.dtype, np.integer):
        return False
    n = X.shape[-1]
    gmax = 1
    for g in kernel.vector_factors:
        vals = g(X)
        if not np.issubdtype(np.asarray(vals).dtype, np.integer):
            return False
        gmax = max(gmax, int(np.abs(vals).max(initial=0)))
    bound = comb(n, kernel.arity) * gmax**kernel.arity if n >= kernel.arity else gmax
    return bound < 2**62


def separable_prefix_values(
    kernel: Kernel,
    X: np.ndarray,
    initial_row: np.ndarray | None = None,
    dtype=None,
):
    """U value after each item, vectorized over replications.

    Parameters
    ----------
    X : array (reps, steps) of samples, one replication per row.
    initial_row : optional (reps, d+1) DP rows carried over from an earlier
        chunk of the same streams.
    dtype : optional override; by default int64 is used whenever an a-priori
        bound keeps every partial product below 2^62, else float64 (exact
        for integer values up to 2^53).

    Returns
    -------
    paths : (reps, steps) array, paths[:, t] = U_{t+1}.
    rows : (reps, d+1) final DP rows, for chunked continuation.
    """
    if not kernel.separable:
        raise ConfigError(f"kernel {kernel.name} is not separable")
    X = np.atleast_2d(X)
    reps, steps = X.shape
    d = kernel.arity
    if dtype is None:
        use_int = (
            _int64_bound_ok(kernel, X)
            if initial_row is None
            else np.issubdtype(np.asarray(initial_row).dtype, np.integer)
        )
        dtype = np.int64 if use_int else np.float64
    if initial_row is None:
        rows_prev = np.zeros((reps, d + 1), dtype=dtype)
        rows_prev[:, 0] = 1
    else:
        rows_prev = np.asarray(initial_row, dtype=dtype).copy()
    # p_j path = p_j(0) + cumsum(g_j * [p_{j-1} path shifted right by one]);
    # the shift inserts p_{j-1}(0) so each item pairs with the state before it.
    prev_path = np.broadcast_to(rows_prev[:, 0:1], (reps, steps)).astype(dtype)
    final = np.empty((reps, d + 1), dtype=dtype)
    final[:, 0] = 1
    paths = prev_path
    for j in range(1, d + 1):
        gvals = np.asarray(kernel.vector_factors[j - 1](X), dtype=dtype)
        shifted = np.empty_like(prev_path)
        shifted[:, 0] = rows_prev[:, j - 1]
        shifted[:, 1:] = prev_path[:, :-1]
        pj = rows_prev[:, j : j + 1] + np.cumsum(gvals * shifted, axis=1, dtype=dtype)
        final[:, j] = pj[:, -1]
        prev_path = pj
        paths = pj
    return paths, final


def descent_prefix_counts(X: np.ndarray) -> np.ndarray:
    """Inversion (descending-pair) counts of every prefix, per replication.

    counts[:, t] = #{i < j <= t+1 : X_i > X_j}, computed with a Fenwick tree
    over within-row ranks, vectorized across rows.
    """
    X = np.atleast_2d(X)
    reps, n = X.shape
    ranks = np.argsort(np.argsort(X, axis=1, kind="stable"), axis=1, kind="stable") + 1
    tree = np.zeros((reps, n + 1), dtype=np.int64)
    rows = np.arange(reps)
    smaller = np.empty((reps, n), dtype=np.int64)
    depth = max(1, int(n).bit_length())
    for t in range(n):
        r = ranks[:, t]
        idx = r - 1
        acc = np.zeros(reps, dtype=np.int64)
        for _ in range(depth):
            live = idx > 0
            if not live.any():
                break
            acc[live] += tree[rows[live], idx[live]]
            idx = idx - (idx & -idx)
        smaller[:, t] = acc
        idx = r.copy()
        for _ in range(depth):
            live = idx <= n
            if not live.any():
                break
            np.add.at(tree, (rows[live], idx[live]), 1)
            idx = np.where(live, idx + (idx & -idx), idx)
    larger = np.arange(n, dtype=np.int64)[None, :] - smaller
    return np.cumsum(larger, axis=1)


def pair_rank_prefix_values(kernel: Kernel, X: np.ndarray) -> np.ndarray:
    """Prefix U paths for arity-2 rank-based kernels via inversion counts.

    Any such kernel is a (value-on-descent, value-on-ascent) pair, so
    U_m = a * desc_m + b * (C(m,2) - desc_m).
    """
    if not (kernel.rank_based and kernel.arity == 2):
        raise ConfigError("pair_rank engine needs an arity-2 rank-based kernel")
    a = kernel.evaluate(1.0, 0.0)  # descending pair
    b = kernel.evaluate(0.0, 1.0)  # ascending pair
    desc = descent_prefix_counts(X)
    m = np.arange(1, X.shape[-1] + 1, dtype=np.int64)
    pairs = m * (m - 1) // 2
    return a * desc + b * (pairs[None, :] - desc)


def prefix_values(kernel: Kernel, X: np.ndarray) -> np.ndarray:
    """Vectorized prefix U paths, choosing the fastest applicable engine."""
    X = np.atleast_2d(X)
    if kernel.separable:
        paths, _ = separable_prefix_values(kernel, X)
        return paths
    if kernel.rank_based and kernel.arity == 2:
        return pair_rank_prefix_values(kernel, X)
    out = np.empty(X.shape, dtype=np.float64)
    for r in range(X.shape[0]):
        stream = GenericStream(kernel, n_max=max(100_000, X.shape[1]))
        for t in range(X.shape[1]):
            stream.update(X[r, t])
            out[r, t] = stream.value
    return out


# ---------------------------------------------------------------------------
# Hoeffding projections
# ---------------------------------------------------------------------------


@dataclass
class TabulatedProjections:
    """Projections over a finite alphabet: table[i][symbol] = f_{i+1}(symbol)."""

    symbols: tuple
    probs: tuple
    table: list

    def value(self, i: int, x):
        return self.table[i - 1][x]

    def support_values(self, i: int):
        return [self.table[i - 1][s] for s in self.symbols]


@dataclass
class PolyProjections:
    """Projections as exact power-basis polynomials in the sample value."""

    coeffs: list  # coeffs[i-1] is the polynomial of f_i

    def value(self, i: int, x):
        return polys.evaluate(self.coeffs[i - 1], x)


@dataclass
class GridProjections:
    """Monte-Carlo projection estimates on a fixed grid, with standard errors."""

    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray  # (d, K)
    std_errors: np.ndarray  # (d, K)

    def value(self, i: int, x):
        k = int(np.argmin(np.abs(self.points - x)))
        return float(self.values[i - 1, k])


@dataclass
class ProjectionModel:
    """mu, the projections f_1..f_d, and sigma_ij = E f_i(X) f_j(X).

    ``method`` is one of exact-finite, exact-order, exact-separable or
    monte-carlo; exact methods report error_bound 0 and keep Fraction
    arithmetic wherever the kernel and law are rational.
    """

    kernel_name: str
    d: int
    mu: object
    sigma: list
    method: str
    error_bound: float
    rep: object
    sigma_se: np.ndarray | None = None
    mu_se: float = 0.0

    @property
    def exact(self) -> bool:
        return self.method.startswith("exact")

    def projection(self, i: int, x):
        """f_i evaluated at x (i is 1-based)."""
        return self.rep.value(i, x)

    def sigma_array(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.sigma])


def _projection_budget_check(count: float, budget: int, what: str):
    if count > budget:
        raise EnumerationError(f"{what} needs {count:.3g} evaluations, over budget {budget}")


def hoeffding_exact_finite(kernel: Kernel, source: FiniteSource, budget: int = 2_000_000):
    """Exact projections by enumerating the |A|^d input tuples.

    Rational throughout when the kernel is integer-valued, since finite
    sources carry Fraction probabilities.
    """
    if not isinstance(source, FiniteSource):
        raise ConfigError("exact-finite projections need a finite-alphabet source")
    d, symbols, probs = kernel.arity, source.symbols, source.probs
    _projection_budget_check(len(symbols) ** d, budget, "finite enumeration")
    mu = Fraction(0) if kernel.integer_valued else 0.0
    cond = [dict((s, Fraction(0) if kernel.integer_valued else 0.0) for s in symbols) for _ in range(d)]
    for tup in itertools.product(range(len(symbols)), repeat=d):
        weight = math.prod(probs[t] for t in tup)
        val = kernel.evaluate(*(symbols[t] for t in tup))
        mu += weight * val
        for i in range(d):
            pi = probs[tup[i]]
            cond[i][symbols[tup[i]]] += (weight / pi) * val
    table = [{s: cond[i][s] - mu for s in symbols} for i in range(d)]
    sigma = [
        [
            sum(p * table[i][s] * table[j][s] for s, p in zip(symbols, probs))
            for j in range(d)
        ]
        for i in range(d)
    ]
    rep = TabulatedProjections(symbols, probs, table)
    return ProjectionModel(kernel.name, d, mu, sigma, "exact-finite", 0.0, rep)


def _rank_kernel_on(kernel: Kernel, ranks: Sequence[int]):
    return kernel.evaluate(*(float(r) for r in ranks))


def hoeffding_exact_order(kernel: Kernel, source: SampleSource, budget: int = 20_000_000):
    """Exact projections for rank-based kernels under a continuous law.

    mu and the f_i come from the d! relative orderings of one argument
    tuple; sigma_ij + mu^2 is the average kernel product over the (2d-1)!
    orderings of two tuples sharing one value at slots i and j.  All values
    are exact rationals for integer-valued kernels.
    """
    if not kernel.rank_based:
        raise ConfigError("exact-order projections need a rank-based kernel")
    if not source.continuous:
        raise ConfigError("exact-order projections need a continuous source")
    d = kernel.arity
    _projection_budget_check(factorial(2 * d - 1) * d * d, budget, "order enumeration")
    dfact = factorial(d)
    mu = Fraction(0)
    # f_i(x) + mu = sum over full-rank patterns tau with tau_i = r of
    # f(tau) * x^(r-1)(1-x)^(d-r) / ((r-1)! (d-r)!)
    slot_rank_totals = [[Fraction(0)] * (d + 1) for _ in range(d)]
    for tau in itertools.permutations(range(1, d + 1)):
        val = Fraction(_rank_kernel_on(kernel, tau))
        mu += val
        for i in range(d):
            slot_rank_totals[i][tau[i]] += val
    mu = mu / dfact
    coeffs = []
    for i in range(d):
        poly = (Fraction(0),)
        for r in range(1, d + 1):
            w = slot_rank_totals[i][r] / (factorial(r - 1) * factorial(d - r))
            if w != 0:
                poly = polys.add(poly, polys.bernstein_to_power(w, r, d))
        coeffs.append(polys.add(poly, (-mu,)))
    sigma = [[Fraction(0)] * d for _ in range(d)]
    base = factorial(2 * d - 1)
    for i in range(1, d + 1):
        for j in range(i, d + 1):
            total = Fraction(0)
            # variables: common value, then d-1 others for each tuple
            for perm in itertools.permutations(range(1, 2 * d)):
                common = perm[0]
                others1 = perm[1:d]
                others2 = perm[d:]
                args1 = others1[: i - 1] + (common,) + others1[i - 1 :]
                args2 = others2[: j - 1] + (common,) + others2[j - 1 :]
                total += Fraction(
                    _rank_kernel_on(kernel, args1)
                ) * _rank_kernel_on(kernel, args2)
            val = total / base - mu * mu
            sigma[i - 1][j - 1] = val
            sigma[j - 1][i - 1] = val
    rep = PolyProjections(coeffs)
    return ProjectionModel(kernel.name, d, mu, sigma, "exact-order", 0.0, rep)


def hoeffding_exact_separable(kernel: Kernel, source: SampleSource):
    """Exact projections for separable kernels with polynomial factors.

    With f = prod g_r and m_r = E g_r(X):  mu = prod m_r,
    f_i(x) = (prod_{r != i} m_r) g_i(x) - mu, and
    sigma_ij = c_i c_j E[g_i(X) g_j(X)] - mu^2, c_i = prod_{r != i} m_r.
    Needs exact moments of the factor products from the source.
    """
    if kernel.factor_polys is None:
        raise ConfigError(f"kernel {kernel.name} has no polynomial factorization")
    d = kernel.arity
    means = [source.exact_expectation(p) for p in kernel.factor_polys]
    mu = math.prod(means)
    cofactors = []
    for i in range(d):
        c = 1
        for r in range(d):
            if r != i:
                c = c * means[r]
        cofactors.append(c)
    sigma = [[0] * d for _ in range(d)]
    for i in range(d):
        for j in range(i, d):
            cross = source.exact_expectation(
                polys.mul(kernel.factor_polys[i], kernel.factor_polys[j])
            )
            val = cofactors[i] * cofactors[j] * cross - mu * mu
            sigma[i][j] = val
            sigma[j][i] = val
    coeffs = [
        polys.add(polys.scale(kernel.factor_polys[i], cofactors[i]), (-mu,)) for i in range(d)
    ]
    rep = PolyProjections(coeffs)
    return ProjectionModel(kernel.name, d, mu, sigma, "exact-separable", 0.0, rep)


def hoeffding_monte_carlo(
    kernel: Kernel,
    source: SampleSource,
    budget: int = 4096,
    rng: np.random.Generator | None = None,
    grid_points: int = 256,
):
    """Monte-Carlo projections on a fixed grid, with per-point standard errors.

    For each slot i the same batch of companion draws is reused across grid
    points (common random numbers), so the estimate of f_i is a smooth random
    function and the 3-standard-error degeneracy sweep is not diluted by
    hundreds of effectively independent tests.  sigma is the quadrature
    Gram matrix of the estimated projections.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    d = kernel.arity
    points, weights = source.projection_grid(grid_points)
    if not np.issubdtype(np.asarray(points).dtype, np.number):
        raise ConfigError("monte-carlo projections need numeric support points")
    K = len(points)

    def batch_eval(cols):
        if kernel.vector_evaluate is not None:
            return np.asarray(kernel.vector_evaluate(*cols), dtype=float)
        n = len(cols[0])
        out = np.empty(n)
        for b in range(n):
            out[b] = kernel.evaluate(*(c[b] for c in cols))
        return out

    mu_draws = batch_eval([source.sample(rng, budget) for _ in range(d)])
    mu = float(mu_draws.mean())
    mu_se = float(mu_draws.std(ddof=1) / math.sqrt(budget))
    values = np.empty((d, K))
    ses = np.empty((d, K))
    for i in range(d):
        others = [source.sample(rng, budget) for _ in range(d - 1)]
        for k in range(K):
            args = others[:i] + [np.full(budget, points[k])] + others[i:]
            draws = batch_eval(args)
            values[i, k] = draws.mean() - mu
            ses[i, k] = math.sqrt(draws.var(ddof=1) / budget + mu_se**2)
    sigma = (values * weights[None, :]) @ values.T
    # first-order error propagation through the quadrature Gram matrix
    sigma_se = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            var_ij = np.sum(
                weights**2
                * (
                    values[i] ** 2 * ses[j] ** 2
                    + values[j] ** 2 * ses[i] ** 2
                    + ses[i] ** 2 * ses[j] ** 2
                )
            )
            sigma_se[i, j] = math.sqrt(var_ij)
    rep = GridProjections(np.asarray(points, dtype=float), weights, values, ses)
    err = float(ses.max() + mu_se)
    return ProjectionModel(
        kernel.name, d, mu, sigma.tolist(), "monte-carlo", err, rep,
        sigma_se=sigma_se, mu_se=mu_se,
    )


def hoeffding_projections(
    kernel: Kernel,
    source: SampleSource,
    method: str = "auto",
    budget: int = 4096,
    rng: np.random.Generator | None = None,
) -> ProjectionModel:
    """Dispatch to an exact projection method where one applies, else MC.

    ``method``: auto | exact | order | mc.  "exact" covers both the finite
    enumeration and the separable moment path.
    """
    if method in ("auto", "exact"):
        if isinstance(source, FiniteSource):
            if kernel.rank_based:
                raise ConfigError(
                    f"rank-based kernel {kernel.name} cannot run on the discrete "
                    f"source {source.name}"
                )
            return hoeffding_exact_finite(kernel, source)
        if kernel.rank_based and source.continuous:
            return hoeffding_exact_order(kernel, source)
        if kernel.factor_polys is not None:
            return hoeffding_exact_separable(kernel, source)
        if method == "exact":
            raise ConfigError(
                f"no exact projection path for kernel {kernel.name} on {source.name}"
            )
        return hoeffding_monte_carlo(kernel, source, budget, rng)
    if method == "order":
        return hoeffding_exact_order(kernel, source)
    if method == "mc":
        return hoeffding_monte_carlo(kernel, source, budget, rng)
    raise ConfigError(f"unknown projection method {method!r}")


def cross_projection_cov(model_a: ProjectionModel, model_b: ProjectionModel, source: SampleSource):
    """Cov(a_i(X), b_j(X)) for the projections of two kernels on one source.

    Returns a (d_a x d_b) nested list; exact when both models are exact and
    the source integrates the product representation exactly.
    """
    ra, rb = model_a.rep, model_b.rep
    out = [[0] * model_b.d for _ in range(model_a.d)]
    if isinstance(ra, TabulatedProjections) and isinstance(rb, TabulatedProjections):
        for i in range(model_a.d):
            for j in range(model_b.d):
                out[i][j] = sum(
                    p * ra.table[i][s] * rb.table[j][s]
                    for s, p in zip(ra.symbols, ra.probs)
                )
        return out
    if isinstance(ra, PolyProjections) and isinstance(rb, PolyProjections):
        for i in range(model_a.d):
            for j in range(model_b.d):
                out[i][j] = source.exact_expectation(polys.mul(ra.coeffs[i], rb.coeffs[j]))
        return out
    if isinstance(ra, GridProjections) and isinstance(rb, GridProjections):
        if len(ra.points) != len(rb.points) or not np.allclose(ra.points, rb.points):
            raise ConfigError("grid projections must share the quadrature grid")
        m = (ra.values * ra.weights[None, :]) @ rb.values.T
        return m.tolist()
    raise ConfigError("incompatible projection representations for cross covariance")


# ---------------------------------------------------------------------------
# Decomposition diagnostics
# ---------------------------------------------------------------------------


def position_weight(i: int, n: int, j: int, d: int) -> int:
    """Number of d-tuples containing index i in slot j: C(i-1, j-1) C(n-i, d-j)."""
    return comb(i - 1, j - 1) * comb(n - i, d - j)


def position_weights_sum_ok(n: int, d: int) -> bool:
    """Vandermonde identity: sum_i C(i-1, j-1) C(n-i, d-j) = C(n, d) for all j."""
    return all(
        sum(position_weight(i, n, j, d) for i in range(1, n + 1)) == comb(n, d)
        for j in range(1, d + 1)
    )


@dataclass
class ResidualDiagnostic:
    """Result of checking the first-order decomposition on sampled prefixes."""

    max_identity_gap: float
    max_residual_projection: float
    prefixes_checked: int
    exact: bool

    @property
    def ok(self) -> bool:
        tol = 0 if self.exact else 1e-9
        return self.max_identity_gap <= tol and self.max_residual_projection <= 1e-9


def residual_check(
    kernel: Kernel,
    model: ProjectionModel,
    source: SampleSource,
    n: int = 12,
    reps: int = 5,
    rng: np.random.Generator | None = None,
) -> ResidualDiagnostic:
    """Verify U_n(f) = C(n,d) mu + sum_j sum_i w_{n,j}(i) f_j(X_i) + U_n(f*)
    on sampled prefixes, with f* the fully centered residual kernel, and
    verify that the projections of f* vanish.
    """
    if not model.exact:
        raise ConfigError("residual check needs an exact projection model")
    if rng is None:
        rng = np.random.default_rng(0)
    d, mu = kernel.arity, model.mu

    def fstar(*args):
        return kernel.evaluate(*args) - mu - sum(
            model.projection(j + 1, args[j]) for j in range(d)
        )

    exact_mode = isinstance(model.rep, TabulatedProjections) and kernel.integer_valued
    max_gap = 0
    for _ in range(reps):
        xs = list(source.sample(rng, n))
        lhs = u_oracle(kernel, xs) - comb(n, d) * mu
        for j in range(1, d + 1):
            lhs -= sum(
                position_weight(i, n, j, d) * model.projection(j, xs[i - 1])
                for i in range(1, n + 1)
            )
        rhs = 0
        for tup in itertools.combinations(xs, d):
            rhs += fstar(*tup)
        max_gap = max(max_gap, abs(lhs - rhs))
    # projections of f* vanish: exact enumeration on finite alphabets,
    # Monte-Carlo probe otherwise
    max_proj = 0.0
    if isinstance(model.rep, TabulatedProjections):
        symbols, probs = model.rep.symbols, model.rep.probs
        mu_star = 0
        for tup in itertools.product(range(len(symbols)), repeat=d):
            mu_star += math.prod(probs[t] for t in tup) * fstar(*(symbols[t] for t in tup))
        for i in range(d):
            for s in symbols:
                acc = 0
                for tup in itertools.product(range(len(symbols)), repeat=d - 1):
                    w = math.prod(probs[t] for t in tup)
                    args = [symbols[t] for t in tup]
                    args.insert(i, s)
                    acc += w * fstar(*args)
                max_proj = max(max_proj, abs(float(acc - mu_star)))
    else:
        # Monte-Carlo probe: |mean| should sit within noise of zero
        probes = 400
        for i in range(d):
            xs = source.sample(rng, probes)
            others = [source.sample(rng, probes) for _ in range(d - 1)]
            draws = np.empty(probes)
            for b in range(probes):
                args = [o[b] for o in others]
                args.insert(i, xs[b])
                draws[b] = float(fstar(*args))
            se = float(draws.std(ddof=1) / math.sqrt(probes)) or 1e-12
            max_proj = max(max_proj, max(0.0, abs(float(draws.mean())) - 3.0 * se))
    return ResidualDiagnostic(
        max_identity_gap=0 if (exact_mode and max_gap == 0) else float(max_gap),
        max_residual_projection=float(max_proj),
        prefixes_checked=reps,
        exact=exact_mode,
    )
