"""Seeded i.i.d. sample generation with exact-moment access.

Supported laws: finite alphabets with rational probabilities, uniform(0,1),
uniform[0,2*pi), geometric on {1,2,...}, and the two-point block law
P(L=1)=p, P(L=2)=p^2 with p+p^2=1 (p the golden-ratio conjugate).

Seed derivation uses a splitmix-style hash of (master seed, path indices), so
replication k receives the same stream no matter how work is sharded across
workers.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import polys
from .errors import BudgetError, ConfigError

_MASK64 = (1 << 64) - 1

GOLDEN_P = (math.sqrt(5.0) - 1.0) / 2.0  # root of p + p^2 = 1


def splitmix64(z: int) -> int:
    """One splitmix64 scramble of a 64-bit value."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def stream_seed(master: int, *path: int) -> int:
    """Derive the seed of the substream addressed by (master, *path)."""
    s = splitmix64(master & _MASK64)
    for p in path:
        s = splitmix64(s ^ splitmix64(p & _MASK64))
    return s


def substream(master: int, *path: int) -> np.random.Generator:
    """Generator for the substream addressed by (master, *path).

    Identical arguments give bit-identical streams regardless of worker
    count or calling order.
    """
    return np.random.Generator(np.random.PCG64(stream_seed(master, *path)))


def _parse_probability(text: str) -> Fraction:
    try:
        p = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad probability {text!r}") from exc
    if not 0 < p < 1:
        raise ConfigError(f"probability {text!r} must lie strictly inside (0, 1)")
    return p


class SampleSource:
    """Base class: a law for the i.i.d. inputs.

    Subclasses provide seeded sampling plus exact expectations of polynomial
    or tabulated maps where the law permits.  Instances are immutable and
    safe to share; every caller owns its own Generator.
    """

    name: str
    continuous: bool
    integer_support: bool
    min_value: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def exact_expectation(self, g):
        """E g(X), exactly where the law supports it.

        ``g`` is either a mapping {value: g(value)} covering the support
        (tabulated) or a sequence of power-basis polynomial coefficients.
        """
        if isinstance(g, Mapping):
            return self._expect_tabulated(g)
        if isinstance(g, Sequence):
            return self._expect_poly(tuple(g))
        raise ConfigError(f"unsupported map representation {type(g).__name__}")

    def _expect_tabulated(self, table: Mapping):
        raise ConfigError(f"{self.name}: tabulated maps are not exactly integrable")

    def _expect_poly(self, coeffs):
        raise ConfigError(f"{self.name}: polynomial maps are not exactly integrable")

    def projection_grid(self, points: int = 256):
        """(values, weights) grid used for quadrature of projection products."""
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class FiniteSource(SampleSource):
    """Finite alphabet with a rational probability vector."""

    continuous = False

    def __init__(self, symbols: Sequence, probs: Sequence[Fraction], name: str | None = None):
        if len(symbols) != len(probs):
            raise ConfigError("symbols and probabilities must have equal length")
        probs = tuple(Fraction(p) for p in probs)
        if any(p < 0 for p in probs):
            raise ConfigError("probabilities must be nonnegative")
        total = sum(probs)
        if abs(float(total) - 1.0) > 1e-12:
            raise ConfigError(f"probabilities sum to {float(total)}, not 1")
        self.symbols = tuple(symbols)
        self.probs = probs
        self.name = name or f"finite:{self.symbols}"
        self.integer_support = all(isinstance(s, int) for s in self.symbols)
        numeric = all(isinstance(s, (int, float)) for s in self.symbols)
        self.min_value = min(self.symbols) if numeric else float("nan")
        self._symbol_array = np.asarray(self.symbols)
        self._prob_array = np.asarray([float(p) for p in probs])

    def sample(self, rng, n):
        idx = rng.choice(len(self.symbols), size=n, p=self._prob_array)
        return self._symbol_array[idx]

    def _expect_tabulated(self, table):
        missing = [s for s in self.symbols if s not in table]
        if missing:
            raise ConfigError(f"tabulated map misses support points {missing}")
        return sum(p * table[s] for s, p in zip(self.symbols, self.probs))

    def _expect_poly(self, coeffs):
        return sum(p * polys.evaluate(coeffs, s) for s, p in zip(self.symbols, self.probs))

    def projection_grid(self, points: int = 256):
        return self._symbol_array, self._prob_array.copy()

    def pmf_pairs(self):
        return list(zip(self.symbols, self.probs))

    def pmf_table(self, tail: float = 1e-15):
        if not self.integer_support:
            raise ConfigError(f"{self.name} has no integer probability table")
        order = np.argsort(self._symbol_array)
        return self._symbol_array[order], self._prob_array[order]


class Uniform01Source(SampleSource):
    """Uniform law on (0, 1)."""

    name = "uniform01"
    continuous = True
    integer_support = False
    min_value = 0.0

    def sample(self, rng, n):
        return rng.random(n)

    def _expect_poly(self, coeffs):
        return sum(c * Fraction(1, k + 1) for k, c in enumerate(coeffs))

    def projection_grid(self, points: int = 256):
        pts = (np.arange(points) + 0.5) / points
        return pts, np.full(points, 1.0 / points)


class Uniform2PiSource(SampleSource):
    """Uniform law on [0, 2*pi), i.e. a uniform angle on the circle."""

    name = "uniform2pi"
    continuous = True
    integer_support = False
    min_value = 0.0

    def sample(self, rng, n):
        return rng.random(n) * (2.0 * math.pi)

    def _expect_poly(self, coeffs):
        width = 2.0 * math.pi
        return sum(float(c) * width**k / (k + 1) for k, c in enumerate(coeffs))

    def projection_grid(self, points: int = 256):
        pts = (np.arange(points) + 0.5) / points * (2.0 * math.pi)
        return pts, np.full(points, 1.0 / points)


def _stirling2_row(m: int) -> list[list[int]]:
    """S(k, j) for k = 0..m as a triangular table."""
    table = [[1]]
    for k in range(1, m + 1):
        row = [0] * (k + 1)
        for j in range(1, k + 1):
            below = table[k - 1]
            row[j] = j * (below[j] if j < len(below) else 0) + below[j - 1]
        table.append(row)
    return table


class GeometricSource(SampleSource):
    """Geometric law on {1, 2, ...}: P(L=k) = q (1-q)^(k-1)."""

    continuous = False
    integer_support = True
    min_value = 1

    def __init__(self, q: Fraction):
        q = Fraction(q)
        if not 0 < q < 1:
            raise ConfigError("geometric parameter must lie in (0, 1)")
        self.q = q
        self.name = f"geom:{float(q)}"

    def sample(self, rng, n):
        return rng.geometric(float(self.q), size=n).astype(np.int64)

    def pmf(self, k: int) -> Fraction:
        if k < 1:
            return Fraction(0)
        return self.q * (1 - self.q) ** (k - 1)

    def falling_factorial_moment(self, j: int) -> Fraction:
        """E[L(L-1)...(L-j+1)] = j! (1-q)^(j-1) / q^j for j >= 1."""
        if j == 0:
            return Fraction(1)
        return Fraction(math.factorial(j)) * (1 - self.q) ** (j - 1) / self.q**j

    def _expect_poly(self, coeffs):
        table = _stirling2_row(len(coeffs) - 1)
        total = Fraction(0)
        for k, c in enumerate(coeffs):
            if c == 0:
                continue
            moment_k = sum(table[k][j] * self.falling_factorial_moment(j) for j in range(k + 1))
            total += c * moment_k
        return total

    def _expect_tabulated(self, table):
        return sum(self.pmf(int(k)) * v for k, v in table.items())

    def support_cutoff(self, tail: float = 1e-15) -> int:
        # P(L > K) = (1-q)^K
        return max(1, math.ceil(math.log(tail) / math.log(1.0 - float(self.q))))

    def pmf_table(self, tail: float = 1e-15):
        K = self.support_cutoff(tail)
        ks = np.arange(1, K + 1)
        probs = float(self.q) * (1.0 - float(self.q)) ** (ks - 1.0)
        return ks, probs

    def projection_grid(self, points: int = 256):
        ks, probs = self.pmf_table()
        if len(ks) > points:
            ks, probs = ks[:points], probs[:points]
        return ks.astype(np.int64), probs / probs.sum()


class GoldenBlockSource(SampleSource):
    """Two-point block law P(L=1)=p, P(L=2)=p^2 with p+p^2=1."""

    name = "golden-blocks"
    continuous = False
    integer_support = True
    min_value = 1

    def __init__(self):
        self.p = GOLDEN_P
        assert abs(self.p + self.p**2 - 1.0) < 1e-12

    def sample(self, rng, n):
        return np.where(rng.random(n) < self.p, 1, 2).astype(np.int64)

    def pmf(self, k: int) -> float:
        if k == 1:
            return self.p
        if k == 2:
            return self.p**2
        return 0.0

    def _expect_poly(self, coeffs):
        return self.p * float(polys.evaluate(coeffs, 1)) + self.p**2 * float(
            polys.evaluate(coeffs, 2)
        )

    def _expect_tabulated(self, table):
        if 1 not in table or 2 not in table:
            raise ConfigError("tabulated map must cover {1, 2}")
        return self.p * table[1] + self.p**2 * table[2]

    def pmf_table(self, tail: float = 1e-15):
        return np.array([1, 2]), np.array([self.p, self.p**2])

    def projection_grid(self, points: int = 256):
        return np.array([1, 2], dtype=np.int64), np.array([self.p, self.p**2])


def parse_source(spec: str) -> SampleSource:
    """Build a source from a config string.

    Grammar: ``bernoulli:0.5@binary``, ``uniform01``, ``uniform2pi``,
    ``geom:0.5``, ``golden-blocks``.
    """
    spec = spec.strip()
    if spec == "uniform01":
        return Uniform01Source()
    if spec == "uniform2pi":
        return Uniform2PiSource()
    if spec == "golden-blocks":
        return GoldenBlockSource()
    if spec.startswith("geom:"):
        return GeometricSource(_parse_probability(spec[len("geom:") :]))
    if spec.startswith("bernoulli:"):
        rest = spec[len("bernoulli:") :]
        if "@" in rest:
            ptext, alphabet = rest.split("@", 1)
        else:
            ptext, alphabet = rest, "binary"
        if alphabet != "binary":
            raise ConfigError(f"unknown alphabet {alphabet!r} for bernoulli source")
        p1 = _parse_probability(ptext)
        return FiniteSource((0, 1), (1 - p1, p1), name=f"bernoulli:{ptext}@binary")
    raise ConfigError(f"unknown source spec {spec!r}")


# ---------------------------------------------------------------------------
# Conditioned block sequences (i.i.d. blocks conditioned to sum exactly to n)
# ---------------------------------------------------------------------------


def _hit_masses(source: SampleSource, n: int, tail: float = 1e-15) -> np.ndarray:
    """z[m] = P(some partial sum of i.i.d. blocks equals m), m = 0..n.

    z[0] = 1 and z[m] = sum_k P(L=k) z[m-k].  The masses converge to
    span/mean, so they are stored in linear space; once the recursion is
    flat to machine precision the tail is frozen as a constant.
    """
    ks, probs = source.pmf_table(tail)
    K = int(ks[-1])
    dense = np.zeros(K)  # dense[k-1] = P(L = k)
    for k, p in zip(ks, probs):
        dense[int(k) - 1] = float(p)
    z = np.empty(n + 1)
    z[0] = 1.0
    frozen_from = None
    for m in range(1, n + 1):
        kmax = min(K, m)
        z[m] = float(np.dot(dense[:kmax], z[m - 1 :: -1][:kmax]))
        if m > 2 * K and z[m] > 0 and abs(z[m] - z[m - 1]) < 1e-15 * z[m]:
            frozen_from = m
            break
    if frozen_from is not None:
        z[frozen_from:] = z[frozen_from]
    return z


def conditioned_block_sequence(
    source: SampleSource,
    n: int,
    rng: np.random.Generator,
    method: str = "dp",
    max_attempts: int = 100_000,
) -> np.ndarray:
    """Block lengths (L_1, ..., L_B) with sum exactly n, distributed as the
    i.i.d. sequence conditioned on some partial sum hitting n.

    Two interchangeable implementations:

    - ``dp``: exact sequential sampling; the next block given remaining mass
      m is drawn with weight P(L=k) z(m-k), z the hit-mass recursion.
    - ``rejection``: regenerate i.i.d. prefixes until the partial-sum walk
      hits n exactly.
    """
    if not source.integer_support or source.min_value < 1:
        raise ConfigError("conditioned sequences need a positive-integer block law")
    if n < 1:
        raise ValueError("target must be >= 1")
    if method == "dp":
        return _conditioned_dp(source, n, rng)
    if method == "rejection":
        return _conditioned_rejection(source, n, rng, max_attempts)
    raise ConfigError(f"unknown method {method!r}")


def _conditioned_dp(source, n, rng):
    ks, probs = source.pmf_table()
    z = _hit_masses(source, n)
    if z[n] <= 0:
        raise ValueError(f"target {n} is unreachable under {source.name}")
    out = []
    m = n
    while m > 0:
        u = rng.random() * z[m]
        acc = 0.0
        pick = None
        last_feasible = None
        for k, pk in zip(ks, probs):
            if k > m:
                break
            w = pk * z[m - k]
            if w > 0:
                last_feasible = int(k)
            acc += w
            if u <= acc:
                pick = int(k)
                break
        if pick is None:
            pick = last_feasible  # round-off slack at the top of the scan
        out.append(pick)
        m -= pick
    return np.asarray(out, dtype=np.int64)


def _conditioned_rejection(source, n, rng, max_attempts):
    mean_est = float(source.exact_expectation((0, 1)))
    chunk = max(8, int(n / mean_est * 1.25) + 8)
    for _ in range(max_attempts):
        blocks = source.sample(rng, chunk)
        sums = np.cumsum(blocks)
        while sums[-1] < n:
            more = source.sample(rng, chunk)
            blocks = np.concatenate([blocks, more])
            sums = np.cumsum(blocks)
        j = int(np.searchsorted(sums, n))
        if sums[j] == n:
            return blocks[: j + 1].astype(np.int64)
    raise BudgetError(f"no exact hit of {n} within {max_attempts} attempts")
