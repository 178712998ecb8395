import math

import numpy as np
import pytest

from useq.errors import ConfigError
from useq.kernels import (
    make_antisym_sign_kernel,
    make_antisym_sine_kernel,
    make_block_count_kernel,
    make_const_one_kernel,
    make_identity_kernel,
    make_pattern_kernel,
    make_perm_pattern_kernel,
    parse_kernel,
)


class TestPatternKernel:
    def test_word_10_over_binary(self):
        k = make_pattern_kernel((1, 0))
        assert k.evaluate(1, 0) == 1
        assert k.evaluate(0, 1) == 0

    def test_single_letter_word(self):
        k = make_pattern_kernel(("a",), alphabet=("a", "b"))
        assert k.evaluate("a") == 1
        assert k.evaluate("b") == 0

    def test_word_110(self):
        k = make_pattern_kernel((1, 1, 0))
        assert k.evaluate(1, 1, 0) == 1
        assert k.evaluate(1, 0, 1) == 0

    def test_flags(self):
        k = make_pattern_kernel((1, 0))
        assert k.separable and k.nonnegative and k.integer_valued and not k.rank_based

    def test_empty_word_rejected(self):
        with pytest.raises(ConfigError):
            make_pattern_kernel(())

    def test_letter_outside_alphabet_rejected(self):
        with pytest.raises(ConfigError):
            make_pattern_kernel((2, 0))


class TestPermPatternKernel:
    def test_descending_pair(self):
        k = make_perm_pattern_kernel([2, 1])
        assert k.evaluate(0.7, 0.2) == 1
        assert k.evaluate(0.2, 0.7) == 0

    def test_identity_pattern_on_increasing_triple(self):
        k = make_perm_pattern_kernel([1, 2, 3])
        assert k.evaluate(-1.0, 0.4, 2.2) == 1

    def test_pattern_132(self):
        k = make_perm_pattern_kernel([1, 3, 2])
        assert k.evaluate(0.1, 0.9, 0.5) == 1
        assert k.evaluate(0.5, 0.9, 0.1) == 0

    def test_identity_pattern_on_sorted_reals(self):
        rng = np.random.default_rng(1)
        for m in (2, 3, 4, 5):
            k = make_perm_pattern_kernel(range(1, m + 1))
            vals = np.sort(rng.random(m))
            assert k.evaluate(*vals) == 1

    def test_ties_return_zero_and_count(self):
        k = make_perm_pattern_kernel([2, 1])
        assert k.ties.count == 0
        assert k.evaluate(0.5, 0.5) == 0
        assert k.ties.count == 1

    def test_not_a_permutation_rejected(self):
        with pytest.raises(ConfigError):
            make_perm_pattern_kernel([1, 3])


class TestBlockCountKernel:
    def test_choose_two_of_three(self):
        k = make_block_count_kernel([2])
        assert k.evaluate(3) == 3

    def test_product_of_factors(self):
        k = make_block_count_kernel([1, 1])
        assert k.evaluate(2, 3) == 6

    def test_short_block_gives_zero(self):
        k = make_block_count_kernel([2])
        assert k.evaluate(1) == 0

    def test_vector_factors_match_scalar(self):
        k = make_block_count_kernel([3, 2])
        xs = np.arange(0, 12)
        for g_scalar, g_vec in zip(k.separable_factors, k.vector_factors):
            assert np.array_equal(g_vec(xs), [g_scalar(int(x)) for x in xs])

    def test_bad_lengths_rejected(self):
        with pytest.raises(ConfigError):
            make_block_count_kernel([0])
        with pytest.raises(ConfigError):
            make_block_count_kernel([])


class TestAntisymmetricKernels:
    def test_sine_diagonal_vanishes(self):
        k = make_antisym_sine_kernel()
        for x in (0.0, 1.3, 5.9):
            assert k.evaluate(x, x) == 0.0

    def test_sine_quarter_turn(self):
        k = make_antisym_sine_kernel()
        assert k.evaluate(math.pi / 2, 0.0) == pytest.approx(1.0)

    def test_sine_antisymmetry_on_random_pairs(self):
        k = make_antisym_sine_kernel()
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b = rng.random(2) * 2 * math.pi
            assert k.evaluate(a, b) == pytest.approx(-k.evaluate(b, a))

    def test_sign_kernel_values(self):
        k = make_antisym_sign_kernel()
        assert k.evaluate(0.9, 0.1) == 1
        assert k.evaluate(0.1, 0.9) == -1
        assert k.evaluate(0.5, 0.5) == 0
        assert k.ties.count == 1


def _random_monotone_transforms():
    return [lambda u: u**3, np.exp]


@pytest.mark.parametrize("spec", ["permpattern:21", "permpattern:132", "antisym-sign"])
def test_rank_based_invariance_under_monotone_transforms(spec):
    k = parse_kernel(spec)
    rng = np.random.default_rng(3)
    for _ in range(200):
        args = rng.random(k.arity)
        while len(set(args)) < k.arity:
            args = rng.random(k.arity)
        base = k.evaluate(*args)
        for f in _random_monotone_transforms():
            assert k.evaluate(*(f(a) for a in args)) == base


@pytest.mark.parametrize(
    "spec,sampler",
    [
        ("pattern:10@binary", lambda rng, d: rng.integers(0, 2, d)),
        ("pattern:110@binary", lambda rng, d: rng.integers(0, 2, d)),
        ("blocks:2", lambda rng, d: rng.integers(1, 9, d)),
        ("blocks:1,2", lambda rng, d: rng.integers(1, 9, d)),
        ("identity", lambda rng, d: rng.random(d)),
        ("const1", lambda rng, d: rng.random(d)),
    ],
)
def test_separability_probe(spec, sampler):
    k = parse_kernel(spec)
    rng = np.random.default_rng(4)
    for _ in range(200):
        args = sampler(rng, k.arity)
        product = 1
        for g, x in zip(k.separable_factors, args):
            product *= g(x)
        if k.integer_valued:
            assert k.evaluate(*args) == product
        else:
            assert k.evaluate(*args) == pytest.approx(product, abs=1e-12)


class TestParseKernel:
    def test_all_documented_specs(self):
        for spec, arity in [
            ("pattern:10@binary", 2),
            ("permpattern:21", 2),
            ("blocks:2", 1),
            ("blocks:1,2", 2),
            ("antisym-sine", 2),
            ("antisym-sign", 2),
            ("identity", 1),
            ("const1", 1),
        ]:
            assert parse_kernel(spec).arity == arity

    def test_const_and_identity(self):
        assert make_const_one_kernel().evaluate(17.4) == 1
        assert make_identity_kernel().evaluate(17.4) == 17.4

    def test_unknown_spec(self):
        with pytest.raises(ConfigError):
            parse_kernel("nonsense:1")

    def test_bad_block_lengths(self):
        with pytest.raises(ConfigError):
            parse_kernel("blocks:2,x")

    def test_custom_alphabet_pattern(self):
        k = parse_kernel("pattern:ab@ab")
        assert k.evaluate("a", "b") == 1
        assert k.evaluate("b", "a") == 0
