"""Kernel abstraction and the built-in kernels.

A kernel is an arity-d real map on sample tuples, summed over all increasing
index d-tuples of the input stream.  Capability flags (separable, rank-based,
nonnegative, integer-valued) drive engine selection and configuration checks
downstream.  Kernels are immutable after construction and safe to share; the
only mutable piece is a tie-diagnostic counter on rank-based kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import polys
from .errors import ConfigError

ALPHABETS = {"binary": (0, 1)}


class TieCounter:
    """Counts tied-argument evaluations of a rank-based kernel.

    Ties occur with probability zero under the continuous sources this
    library pairs with rank-based kernels, so a nonzero count flags a
    misconfigured experiment rather than an error.
    """

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def bump(self):
        self.count += 1


@dataclass(frozen=True)
class Kernel:
    """Arity-d kernel with capability flags.

    ``separable_factors`` holds scalar maps g_1..g_d with f = prod g_j when
    the kernel factorizes; ``vector_factors`` are their numpy-vectorized
    twins used by the batch engines.  ``factor_polys`` holds power-basis
    coefficient tuples when every factor is a polynomial, which enables
    exact moment-based projections.
    """

    name: str
    arity: int
    evaluate: Callable
    separable_factors: tuple | None = None
    vector_factors: tuple | None = None
    factor_polys: tuple | None = None
    vector_evaluate: Callable | None = None
    rank_based: bool = False
    nonnegative: bool = False
    integer_valued: bool = False
    span_hint: float | None = None
    ties: TieCounter = field(default_factory=TieCounter, compare=False, repr=False)

    @property
    def separable(self) -> bool:
        return self.separable_factors is not None

    def __call__(self, *args):
        return self.evaluate(*args)


def _ranks_of(args: Sequence[float]) -> tuple | None:
    """1-based ranks of distinct reals; None when tied."""
    order = sorted(range(len(args)), key=lambda i: args[i])
    for a, b in zip(order, order[1:]):
        if args[a] == args[b]:
            return None
    ranks = [0] * len(args)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return tuple(ranks)


def make_pattern_kernel(word: Sequence, alphabet: Sequence = ALPHABETS["binary"]) -> Kernel:
    """0/1 kernel counting subsequence occurrences of ``word``.

    Separable with g_i(x) = 1 iff x equals the i-th letter.
    """
    letters = tuple(word)
    if not letters:
        raise ConfigError("pattern word must be nonempty")
    alphabet = tuple(alphabet)
    for ch in letters:
        if ch not in alphabet:
            raise ConfigError(f"letter {ch!r} outside alphabet {alphabet}")

    def factor(letter):
        return lambda x: 1 if x == letter else 0

    def vector_factor(letter):
        return lambda xs: (np.asarray(xs) == letter).astype(np.int64)

    factors = tuple(factor(ch) for ch in letters)

    def evaluate(*args):
        if len(args) != len(letters):
            raise ValueError(f"expected {len(letters)} arguments")
        return int(all(a == ch for a, ch in zip(args, letters)))

    vector_factors = tuple(vector_factor(ch) for ch in letters)

    def vector_evaluate(*cols):
        out = vector_factors[0](cols[0])
        for g, c in zip(vector_factors[1:], cols[1:]):
            out = out * g(c)
        return out

    return Kernel(
        name=f"pattern:{''.join(str(c) for c in letters)}",
        arity=len(letters),
        evaluate=evaluate,
        separable_factors=factors,
        vector_factors=vector_factors,
        vector_evaluate=vector_evaluate,
        rank_based=False,
        nonnegative=True,
        integer_valued=True,
        span_hint=1.0 if len(letters) == 1 else None,
    )


def make_perm_pattern_kernel(pattern: Sequence[int]) -> Kernel:
    """Rank-based 0/1 kernel: 1 iff the arguments have the relative order of
    ``pattern`` (a permutation of 1..m).  Tied arguments return 0 and bump
    the tie counter."""
    pat = tuple(int(p) for p in pattern)
    m = len(pat)
    if m == 0 or sorted(pat) != list(range(1, m + 1)):
        raise ConfigError(f"{pattern!r} is not a permutation of 1..{m}")
    ties = TieCounter()

    def evaluate(*args):
        if len(args) != m:
            raise ValueError(f"expected {m} arguments")
        ranks = _ranks_of(args)
        if ranks is None:
            ties.bump()
            return 0
        return int(ranks == pat)

    return Kernel(
        name=f"permpattern:{''.join(str(p) for p in pat)}",
        arity=m,
        evaluate=evaluate,
        rank_based=True,
        nonnegative=True,
        integer_valued=True,
        ties=ties,
    )


def make_block_count_kernel(lengths: Sequence[int]) -> Kernel:
    """Product of binomial coefficients: f(x_1..x_b) = prod C(x_i, l_i).

    Defined on nonnegative integers; C(x, l) = 0 when x < l.
    """
    ls = tuple(lengths)
    if not ls or any((not isinstance(l, int)) or l < 1 for l in ls):
        raise ConfigError("block lengths must be positive integers")

    def factor(length):
        def g(x):
            xi = int(x)
            if xi != x or xi < 0:
                raise ValueError(f"block kernel argument {x!r} is not a nonnegative integer")
            return math.comb(xi, length)

        return g

    def vector_factor(length):
        def g(xs):
            xs = np.asarray(xs, dtype=np.int64)
            out = np.ones_like(xs)
            for i in range(length):
                out = out * (xs - i)
            neg = out < 0  # only from invalid negative inputs
            out = out // math.factorial(length)
            out[neg] = 0
            return out

        return g

    factors = tuple(factor(l) for l in ls)
    vector_factors = tuple(vector_factor(l) for l in ls)

    def evaluate(*args):
        if len(args) != len(ls):
            raise ValueError(f"expected {len(ls)} arguments")
        out = 1
        for g, x in zip(factors, args):
            out *= g(x)
        return out

    def vector_evaluate(*cols):
        out = vector_factors[0](cols[0])
        for g, c in zip(vector_factors[1:], cols[1:]):
            out = out * g(c)
        return out

    return Kernel(
        name="blocks:" + ",".join(str(l) for l in ls),
        arity=len(ls),
        evaluate=evaluate,
        separable_factors=factors,
        vector_factors=vector_factors,
        vector_evaluate=vector_evaluate,
        factor_polys=tuple(polys.binomial_coefficient_poly(l) for l in ls),
        nonnegative=True,
        integer_valued=True,
    )


def make_antisym_sine_kernel() -> Kernel:
    """f(x, y) = sin(x - y); fully degenerate on the uniform circle."""

    def evaluate(x, y):
        return math.sin(x - y)

    return Kernel(
        name="antisym-sine",
        arity=2,
        evaluate=evaluate,
        vector_evaluate=lambda x, y: np.sin(np.asarray(x) - np.asarray(y)),
    )


def make_antisym_sign_kernel() -> Kernel:
    """f(x, y) = sign(x - y): the nondegenerate antisymmetric pair kernel.

    Rank-based with values in {-1, 0, +1}; ties return 0 and are counted.
    """
    ties = TieCounter()

    def evaluate(x, y):
        if x == y:
            ties.bump()
            return 0
        return 1 if x > y else -1

    return Kernel(
        name="antisym-sign",
        arity=2,
        evaluate=evaluate,
        vector_evaluate=lambda x, y: np.sign(np.asarray(x) - np.asarray(y)).astype(np.int64),
        rank_based=True,
        integer_valued=True,
        ties=ties,
    )


def make_identity_kernel() -> Kernel:
    """d=1, f(x) = x; the partial-sum (threshold) kernel."""

    def evaluate(x):
        return x

    identity = lambda x: x  # noqa: E731

    return Kernel(
        name="identity",
        arity=1,
        evaluate=evaluate,
        separable_factors=(identity,),
        vector_factors=(lambda xs: np.asarray(xs),),
        vector_evaluate=lambda xs: np.asarray(xs),
        factor_polys=((Fraction(0), Fraction(1)),),
    )


def make_const_one_kernel() -> Kernel:
    """d=1, f = 1; turns the U-process into the sample counter."""

    def evaluate(x):
        return 1

    return Kernel(
        name="const1",
        arity=1,
        evaluate=evaluate,
        separable_factors=(lambda x: 1,),
        vector_factors=(lambda xs: np.ones(np.shape(xs), dtype=np.int64),),
        vector_evaluate=lambda xs: np.ones(np.shape(xs), dtype=np.int64),
        factor_polys=((Fraction(1),),),
        nonnegative=True,
        integer_valued=True,
        span_hint=1.0,
    )


def parse_kernel(spec: str) -> Kernel:
    """Build a kernel from a config string.

    Grammar: ``pattern:10@binary``, ``permpattern:21``, ``blocks:2``,
    ``blocks:1,2``, ``antisym-sine``, ``antisym-sign``, ``identity``,
    ``const1``.
    """
    spec = spec.strip()
    if spec == "antisym-sine":
        return make_antisym_sine_kernel()
    if spec == "antisym-sign":
        return make_antisym_sign_kernel()
    if spec == "identity":
        return make_identity_kernel()
    if spec == "const1":
        return make_const_one_kernel()
    if spec.startswith("pattern:"):
        rest = spec[len("pattern:") :]
        if "@" in rest:
            word_text, alph_text = rest.split("@", 1)
        else:
            word_text, alph_text = rest, "binary"
        if alph_text in ALPHABETS:
            alphabet = ALPHABETS[alph_text]
            word = tuple(int(c) if alph_text == "binary" else c for c in word_text)
        else:
            alphabet = tuple(alph_text)
            word = tuple(word_text)
        return make_pattern_kernel(word, alphabet)
    if spec.startswith("permpattern:"):
        digits = spec[len("permpattern:") :]
        if not digits.isdigit():
            raise ConfigError(f"bad permutation pattern {digits!r}")
        return make_perm_pattern_kernel([int(c) for c in digits])
    if spec.startswith("blocks:"):
        parts = spec[len("blocks:") :].split(",")
        try:
            lengths = [int(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"bad block lengths in {spec!r}") from exc
        return make_block_count_kernel(lengths)
    raise ConfigError(f"unknown kernel spec {spec!r}")


def kernel_nonnegative_for(kernel: Kernel, source) -> bool:
    """Whether f(X...) >= 0 a.s. under ``source`` (flag or support analysis)."""
    if kernel.nonnegative:
        return True
    if kernel.name == "identity":
        m = getattr(source, "min_value", float("-inf"))
        return m == m and m >= 0  # NaN-safe
    return False


def kernel_integer_for(kernel: Kernel, source) -> bool:
    """Whether f(X...) is integer-valued a.s. under ``source``."""
    if kernel.integer_valued:
        return True
    if kernel.name == "identity":
        return bool(source.integer_support)
    return False
