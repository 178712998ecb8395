import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from useq.errors import ConfigError
from useq.sources import (
    FiniteSource,
    GeometricSource,
    GoldenBlockSource,
    conditioned_block_sequence,
    parse_source,
    splitmix64,
    stream_seed,
    substream,
)


class TestSeeding:
    def test_splitmix_is_deterministic_64bit(self):
        assert splitmix64(0) == splitmix64(0)
        assert 0 <= splitmix64(123456789) < 2**64
        assert splitmix64(1) != splitmix64(2)

    def test_stream_seed_depends_on_path(self):
        assert stream_seed(7, 1) != stream_seed(7, 2)
        assert stream_seed(7, 1, 2) != stream_seed(7, 2, 1)

    def test_replay_is_bit_identical(self):
        a = substream(99, 4).random(1000)
        b = substream(99, 4).random(1000)
        assert np.array_equal(a, b)


class TestFiniteSource:
    def test_probability_vector_validated(self):
        with pytest.raises(ConfigError):
            FiniteSource((0, 1), (Fraction(1, 2), Fraction(1, 3)))
        with pytest.raises(ConfigError):
            FiniteSource((0, 1), (Fraction(3, 2), Fraction(-1, 2)))

    def test_exact_expectation_tabulated_and_poly(self):
        s = FiniteSource((0, 1), (Fraction(1, 2), Fraction(1, 2)))
        assert s.exact_expectation({0: 3, 1: 5}) == 4
        assert s.exact_expectation((0, 1)) == Fraction(1, 2)  # E X

    def test_bernoulli_parse(self):
        s = parse_source("bernoulli:0.5@binary")
        assert isinstance(s, FiniteSource)
        assert s.probs == (Fraction(1, 2), Fraction(1, 2))


class TestGeometric:
    def test_exact_moments(self):
        s = GeometricSource(Fraction(1, 2))
        assert s.exact_expectation((0, 1)) == 2  # E L
        assert s.exact_expectation((0, 0, 1)) == 6  # E L^2
        assert s.exact_expectation((0, 0, 0, 1)) == 26  # E L^3
        assert s.exact_expectation((0, 0, 0, 0, 1)) == 150  # E L^4
        # E C(L, 2) = E L(L-1)/2
        assert s.exact_expectation((0, Fraction(-1, 2), Fraction(1, 2))) == 2

    def test_tabulated_expectation(self):
        s = GeometricSource(Fraction(1, 2))
        # indicator of {1}: P(L=1) = 1/2
        assert s.exact_expectation({1: 1}) == Fraction(1, 2)

    def test_empirical_mean_large_sample(self):
        s = parse_source("geom:0.5")
        draws = s.sample(substream(20260810, 1), 1_000_000)
        assert abs(draws.mean() - 2.0) < 0.01

    def test_bad_parameter(self):
        with pytest.raises(ConfigError):
            parse_source("geom:1.5")


class TestGoldenBlocks:
    def test_golden_ratio_identity(self):
        s = GoldenBlockSource()
        assert abs(s.p + s.p**2 - 1.0) < 1e-12

    def test_exact_mean(self):
        s = GoldenBlockSource()
        expected = (5.0 - math.sqrt(5.0)) / 2.0
        assert s.exact_expectation((0, 1)) == pytest.approx(expected, abs=1e-14)

    def test_empirical_proportion(self):
        s = parse_source("golden-blocks")
        draws = s.sample(substream(20260810, 2), 1_000_000)
        assert abs((draws == 1).mean() - 0.6180) < 0.005


class TestUniformMoments:
    def test_uniform01_polynomial(self):
        s = parse_source("uniform01")
        assert s.exact_expectation((0, 1)) == Fraction(1, 2)
        assert s.exact_expectation((0, 0, 1)) == Fraction(1, 3)

    def test_uniform2pi_constant(self):
        s = parse_source("uniform2pi")
        assert s.exact_expectation((1,)) == pytest.approx(1.0)
        assert s.exact_expectation((0, 1)) == pytest.approx(math.pi)

    def test_tabulated_rejected_on_continuous(self):
        with pytest.raises(ConfigError):
            parse_source("uniform01").exact_expectation({0: 1})


def _exact_conditional_law(source, n):
    """Enumerate compositions of n and their conditional probabilities."""
    ks, probs = source.pmf_table()
    pmf = {int(k): float(p) for k, p in zip(ks, probs)}
    law = {}

    def rec(remaining, prefix, weight):
        if remaining == 0:
            law[tuple(prefix)] = weight
            return
        for k, p in pmf.items():
            if k <= remaining:
                rec(remaining - k, prefix + [k], weight * p)

    rec(n, [], 1.0)
    total = sum(law.values())
    return {comp: w / total for comp, w in law.items()}


class TestConditionedBlocks:
    def test_target_one_is_single_block(self):
        s = parse_source("geom:0.5")
        for method in ("dp", "rejection"):
            seq = conditioned_block_sequence(s, 1, substream(5, 0), method=method)
            assert list(seq) == [1]

    def test_golden_n2_fifty_fifty(self):
        s = parse_source("golden-blocks")
        rng = substream(6, 0)
        singles = sum(
            len(conditioned_block_sequence(s, 2, rng, method="dp")) == 1
            for _ in range(4000)
        )
        assert abs(singles / 4000 - 0.5) < 0.03

    @pytest.mark.parametrize("dist", ["geom:0.5", "golden-blocks"])
    @pytest.mark.parametrize("n", [5, 8])
    def test_methods_match_exact_law_and_each_other(self, dist, n):
        source = parse_source(dist)
        law = _exact_conditional_law(source, n)
        comps = sorted(law)
        index = {c: i for i, c in enumerate(comps)}
        draws = 20_000
        counts = np.zeros((2, len(comps)), dtype=int)
        for row, method in enumerate(("dp", "rejection")):
            rng = substream(7, row)
            for _ in range(draws):
                seq = tuple(conditioned_block_sequence(source, n, rng, method=method))
                assert sum(seq) == n
                counts[row, index[seq]] += 1
        expected = np.array([law[c] for c in comps]) * draws
        for row in range(2):
            chi2 = ((counts[row] - expected) ** 2 / expected).sum()
            p = stats.chi2.sf(chi2, df=len(comps) - 1)
            assert p > 0.001
        _, p_homog, _, _ = stats.chi2_contingency(counts)
        assert p_homog > 0.001

    def test_block_count_lln(self):
        s = parse_source("geom:0.5")
        seq = conditioned_block_sequence(s, 10_000, substream(8, 0), method="dp")
        assert seq.sum() == 10_000
        assert abs(len(seq) / 10_000 - 0.5) < 0.015

    def test_unreachable_target(self):
        two_only = FiniteSource((2,), (Fraction(1),))
        with pytest.raises(ValueError):
            conditioned_block_sequence(two_only, 3, substream(9, 0), method="dp")

    def test_replay_determinism(self):
        s = parse_source("geom:0.5")
        a = conditioned_block_sequence(s, 500, substream(10, 3), method="dp")
        b = conditioned_block_sequence(s, 500, substream(10, 3), method="dp")
        assert np.array_equal(a, b)

    def test_continuous_law_rejected(self):
        with pytest.raises(ConfigError):
            conditioned_block_sequence(parse_source("uniform01"), 5, substream(1, 0))
