import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from arbmetric.errors import DimensionError, DomainError, MetricError
from arbmetric.model import (
    AWGN,
    Absolute,
    Pointwise,
    Poisson,
    PowP,
    SparseGaussian,
    SparseWeibull,
    Squared,
    SupportXor,
    Tabulated,
    eval_linf,
    eval_metric,
    parse_metric,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def vec_pair(n_min=1, n_max=30):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.tuples(arrays(float, n, elements=finite), arrays(float, n, elements=finite))
    )


class TestEvalMetric:
    def test_squared_identity_is_zero(self):
        x = np.array([0.3, -1.2, 0.0, 5.0])
        assert eval_metric(Squared(), x, x) == 0.0

    def test_absolute_direct_sum(self):
        assert eval_metric(Absolute(), [1.0, 2.0], [0.0, 0.0]) == 3.0

    def test_support_xor_one_mismatch(self):
        assert eval_metric(SupportXor(), [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]) == 1.0

    def test_support_xor_uses_exact_zero(self):
        assert eval_metric(SupportXor(), [1e-300], [0.0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            eval_metric(Squared(), [1.0, 2.0], [1.0])

    @given(vec_pair())
    def test_pow2_equals_squared_exactly(self, pair):
        a, b = pair
        assert eval_metric(PowP(2), a, b) == eval_metric(Squared(), a, b)

    @given(vec_pair(), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, pair, rnd):
        a, b = pair
        perm = list(range(a.size))
        rnd.shuffle(perm)
        for metric in (Squared(), Absolute(), PowP(0.5), SupportXor()):
            assert eval_metric(metric, a[perm], b[perm]) == pytest.approx(eval_metric(metric, a, b), rel=1e-12, abs=1e-12)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_pnorm_approaches_linf_monotonically(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(20)
        b = rng.standard_normal(20)
        linf = eval_linf(a, b)
        norms = [eval_metric(PowP(p), a, b) ** (1.0 / p) for p in (1, 2, 8, 32)]
        gaps = [n - linf for n in norms]
        assert all(g >= -1e-12 for g in gaps)
        assert all(gaps[i + 1] <= gaps[i] + 1e-12 for i in range(3))


class TestEvalLinf:
    def test_identity(self):
        x = np.arange(5.0)
        assert eval_linf(x, x) == 0.0

    def test_max_magnitude(self):
        assert eval_linf(np.array([0.5, -2.0, 1.0]), np.zeros(3)) == 2.0

    def test_scalar_case(self):
        assert eval_linf([-3.0], [0.0]) == 3.0

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            eval_linf([1.0], [1.0, 2.0])


class TestPriors:
    @pytest.mark.parametrize("s", [-0.1, 1.5])
    def test_sparsity_range(self, s):
        with pytest.raises(DomainError):
            SparseGaussian(s, 1.0)

    def test_positive_parameters(self):
        with pytest.raises(DomainError):
            SparseGaussian(0.1, 0.0)
        with pytest.raises(DomainError):
            SparseWeibull(0.1, scale=-1.0)
        with pytest.raises(DomainError):
            SparseWeibull(0.1, shape=0.0)

    def test_weibull_moments(self):
        p = SparseWeibull(0.03, 1.0, 0.5)
        # Gamma(3) = 2 and Gamma(5) = 24
        assert p.mean() == pytest.approx(0.06)
        assert p.second_moment() == pytest.approx(0.72)

    def test_tabulated_normalisation(self):
        with pytest.raises(DomainError):
            Tabulated(0.5, (1.0,), (0.4,))
        t = Tabulated(0.5, (1.0, 0.0, 1.0), (0.2, 0.1, 0.2))
        assert t.atom == pytest.approx(0.6)
        assert t.points == (1.0,)
        assert t.weights == pytest.approx((0.4,))

    def test_tabulated_negative_weight(self):
        with pytest.raises(DomainError):
            Tabulated(1.2, (1.0,), (-0.2,))


class TestChannels:
    def test_invalid(self):
        with pytest.raises(DomainError):
            AWGN(0.0)
        with pytest.raises(DomainError):
            Poisson(-1.0)

    def test_poisson_negative_input(self):
        with pytest.raises(DomainError):
            Poisson(100.0).sample(np.random.default_rng(0), np.array([0.1, -0.1]))


class TestMetrics:
    def test_pointwise_valid(self):
        m = Pointwise(lambda a, b: np.abs(a - b) ** 3)
        assert eval_metric(m, [2.0], [0.0]) == 8.0

    def test_pointwise_scalar_function(self):
        m = Pointwise(lambda a, b: abs(a - b) if abs(a - b) < 1 else 1.0)
        assert eval_metric(m, [0.5, 4.0], [0.0, 0.0]) == 1.5

    def test_pointwise_rejects_negative(self):
        with pytest.raises(MetricError):
            Pointwise(lambda a, b: a - b)

    def test_pointwise_rejects_nonzero_diagonal(self):
        with pytest.raises(MetricError):
            Pointwise(lambda a, b: np.abs(a - b) + 1.0)

    def test_pow_requires_positive_exponent(self):
        with pytest.raises(DomainError):
            PowP(0.0)

    @pytest.mark.parametrize("p", [0.5, 1.5, 3.0, 0.7])
    def test_pow_fast_paths_match_power(self, p):
        d = np.linspace(-3, 3, 101)
        assert np.allclose(PowP(p)(d, 0.0), np.abs(d) ** p, rtol=1e-14)

    def test_parse_metric(self):
        assert isinstance(parse_metric("mae"), Absolute)
        assert isinstance(parse_metric("squared"), Squared)
        assert isinstance(parse_metric("support"), SupportXor)
        assert parse_metric("error_0.5") == PowP(0.5)
        assert parse_metric("pow:1.5") == PowP(1.5)
        with pytest.raises(DomainError):
            parse_metric("linf")

    def test_convexity_flags(self):
        assert PowP(1.5).convex and not PowP(0.5).convex
        assert not math.isnan(PowP(2)(1.0, 0.0))
