import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stochricci.analysis import (AnalysisError, fit_exponential, kolmogorov_sf, ks_statistic,
                                 ks_two_sample, mc_reduce, observed_order)
from stochricci.rng import RngStream, block_sizes, concat, run_blocks


def test_fit_exact_exponential():
    t = np.linspace(0, 1, 20)
    fit = fit_exponential(t, np.exp(-3 * t))
    assert fit.rate == pytest.approx(3.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_constant():
    fit = fit_exponential(np.arange(5.0), np.full(5, 2.0))
    assert fit.rate == pytest.approx(0.0, abs=1e-15)
    assert fit.r_squared == 1.0


def test_fit_floor_and_validation():
    with pytest.raises(AnalysisError):
        fit_exponential(np.arange(5.0), [1.0, 1e-13, 1e-14, 1e-15, 1e-16])
    with pytest.raises(AnalysisError):
        fit_exponential([0, 1, 1, 2], [1, 1, 1, 1])


@given(st.floats(0.01, 100.0))
def test_fit_scale_equivariant(k):
    t = np.linspace(0, 1, 10)
    v = np.exp(-2 * t) * (1 + 0.1 * np.sin(7 * t))
    a, b = fit_exponential(t, v), fit_exponential(t, k * v)
    assert b.rate == pytest.approx(a.rate, abs=1e-9)
    assert b.log_prefactor - a.log_prefactor == pytest.approx(math.log(k), abs=1e-9)


def test_kolmogorov_sf_matches_scipy():
    for lam in (0.05, 0.3, 0.8, 1.0, 1.36, 2.5, 5.0):
        assert kolmogorov_sf(lam) == pytest.approx(stats.kstwobign.sf(lam), abs=1e-12)


def test_ks_examples():
    a = np.random.default_rng(0).random(100)
    d, p = ks_two_sample(a, a.copy())
    assert d == 0.0 and p == 1.0
    gen = np.random.default_rng(1)
    d, p = ks_two_sample(gen.random(1000), 0.5 + gen.random(1000))
    assert d == pytest.approx(0.5, abs=0.05)
    assert p < 1e-6
    with pytest.raises(AnalysisError, match="insufficient samples"):
        ks_two_sample(a[:10], a)


def test_ks_statistic_matches_scipy():
    gen = np.random.default_rng(2)
    a, b = gen.normal(size=300), gen.normal(0.1, 1.0, size=450)
    assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-15)


def test_ks_invariant_under_monotone_map():
    gen = np.random.default_rng(3)
    a, b = gen.normal(size=200), gen.normal(size=250)
    assert ks_statistic(a, b) == ks_statistic(np.exp(a), np.exp(b))
    assert ks_statistic(a, b) == ks_statistic(a**3, b**3)


def test_ks_calibration():
    gen = np.random.default_rng(4)
    hits = sum(ks_two_sample(gen.normal(size=1000), gen.normal(size=1000))[1] < 0.05
               for _ in range(200))
    assert abs(hits / 200 - 0.05) <= 0.03


def test_mc_reduce_examples():
    e = mc_reduce(np.full(10, 3.0))
    assert (e.mean, e.std_error) == (3.0, 0.0)
    e = mc_reduce([0.0, 2.0])
    assert (e.mean, e.std_error, e.n_paths) == (1.0, 1.0, 2)
    e = mc_reduce(np.random.default_rng(5).normal(size=10_000))
    assert abs(e.mean) <= 0.03
    with pytest.raises(AnalysisError, match="insufficient samples"):
        mc_reduce([1.0])


def test_observed_order():
    h = np.array([0.4, 0.1, 0.025])
    assert observed_order(h, 3 * h**0.5) == pytest.approx(0.5)


def test_streams_are_reproducible_and_distinct():
    a = RngStream(7, 0).normal(5)
    np.testing.assert_array_equal(a, RngStream(7, 0).normal(5))
    assert not np.array_equal(a, RngStream(7, 1).normal(5))
    assert not np.array_equal(a, RngStream(8, 0).normal(5))


def test_block_results_independent_of_threads():
    fn = lambda b, size, gen: gen.normal(size=size)
    assert block_sizes(5000, 2048) == [2048, 2048, 904]
    one = concat(run_blocks(fn, 5000, 11, threads=1))
    many = concat(run_blocks(fn, 5000, 11, threads=3))
    np.testing.assert_array_equal(one, many)
    assert one.size == 5000
