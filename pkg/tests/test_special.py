"""Accuracy of the in-house special functions against external oracles.

scipy is used as the everyday referee; mpmath arbitrates the extreme tails
where scipy's own implementations drift above 1e-13.
"""

import math

import numpy as np
import pytest

from targeted_fx.special import (betainc, erf, erfc, f_sf, log_beta,
                                 normal_cdf, normal_quantile, normal_sf,
                                 two_sided_normal_p)

scipy_special = pytest.importorskip("scipy.special")
scipy_stats = pytest.importorskip("scipy.stats")
mpmath = pytest.importorskip("mpmath")


def rel_err(got, want):
    if want == 0.0:
        return abs(got)
    return abs(got - want) / abs(want)


class TestErfc:
    def test_against_mpmath_wide_grid(self):
        # mpmath referee: scipy's erfc itself drifts to ~6e-14 near x = 23
        mpmath.mp.dps = 50
        xs = np.concatenate([
            np.linspace(-6.0, 6.0, 121),
            np.linspace(6.0, 27.4, 83),
            [0.74, 0.75, 0.76, 1e-12, -1e-12],
        ])
        worst = 0.0
        for x in xs:
            want = float(mpmath.erfc(mpmath.mpf(float(x))))
            worst = max(worst, rel_err(erfc(float(x)), want))
        assert worst < 5e-15

    def test_against_scipy_moderate(self):
        xs = np.linspace(-5.0, 15.0, 401)
        for x in xs:
            assert rel_err(erfc(float(x)), float(scipy_special.erfc(x))) < 1e-13

    def test_edges(self):
        assert erfc(0.0) == 1.0
        assert erfc(30.0) == 0.0
        assert erfc(-30.0) == pytest.approx(2.0, abs=0.0)

    def test_erf_complement(self):
        for x in np.linspace(-4.0, 4.0, 81):
            assert erf(float(x)) + erfc(float(x)) == pytest.approx(1.0, rel=1e-15)


class TestNormal:
    def test_cdf_sf_symmetry(self):
        for z in np.linspace(-8.0, 8.0, 161):
            assert normal_cdf(float(z)) == pytest.approx(normal_sf(float(-z)), rel=1e-14)

    def test_quantile_round_trip(self):
        for p in [1e-12, 1e-8, 1e-4, 0.025, 0.3, 0.5, 0.7, 0.975, 1 - 1e-4,
                  1 - 1e-8, 1 - 1e-12]:
            z = normal_quantile(p)
            back = normal_cdf(z) if p <= 0.5 else 1.0 - normal_sf(z)
            assert rel_err(back, p) < 1e-12 or abs(back - p) < 1e-15

    def test_quantile_values(self):
        assert normal_quantile(0.975) == pytest.approx(1.9599639845400543, abs=1e-14)
        assert normal_quantile(0.5) == 0.0
        assert normal_quantile(0.025) == pytest.approx(-1.9599639845400543, abs=1e-14)

    def test_quantile_against_scipy(self):
        for p in np.linspace(0.001, 0.999, 199):
            assert rel_err(normal_quantile(float(p)),
                           float(scipy_stats.norm.ppf(p))) < 1e-12

    def test_two_sided_p(self):
        for z in [0.0, 0.5, 1.96, 3.0, 8.0]:
            want = 2.0 * float(scipy_stats.norm.sf(abs(z)))
            assert rel_err(two_sided_normal_p(z), want) < 1e-12

    def test_quantile_domain(self):
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                normal_quantile(bad)


class TestLogBeta:
    def test_against_mpmath(self):
        mpmath.mp.dps = 50
        cases = [(0.5, 0.5), (1.0, 1.0), (2.0, 3.0), (14.9, 15.1), (30.0, 40.0),
                 (200.0, 0.5), (5000.0, 2.5), (50000.0, 2.5), (231059.5, 28.0),
                 (1e6, 0.5), (1e6, 1e6)]
        for a, b in cases:
            want = float(mpmath.log(mpmath.beta(mpmath.mpf(a), mpmath.mpf(b))))
            assert rel_err(log_beta(a, b), want) < 5e-15, (a, b)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b = np.exp(rng.uniform(-2, 12, size=2))
            assert log_beta(a, b) == pytest.approx(log_beta(b, a), rel=1e-15, abs=1e-300)


class TestBetainc:
    def test_against_scipy_grid(self):
        # scipy's own deep tails drift by ~5e-11, so scipy is only a loose
        # oracle here; the worst disagreement is refereed against mpmath.
        rng = np.random.default_rng(1)
        worst, worst_case = 0.0, None
        for _ in range(400):
            a = float(np.exp(rng.uniform(-1, 8)))
            b = float(np.exp(rng.uniform(-1, 8)))
            x = float(rng.uniform(0, 1))
            want = float(scipy_special.betainc(a, b, x))
            if want < 1e-280:
                continue
            err = rel_err(betainc(a, b, x), want)
            if err > worst:
                worst, worst_case = err, (a, b, x)
        assert worst < 1e-10
        a, b, x = worst_case
        mpmath.mp.dps = 60
        referee = float(mpmath.betainc(mpmath.mpf(a), mpmath.mpf(b), 0,
                                       mpmath.mpf(x), regularized=True))
        assert rel_err(betainc(a, b, x), referee) < 1e-12

    def test_edges_and_symmetry(self):
        assert betainc(2.0, 3.0, 0.0) == 0.0
        assert betainc(2.0, 3.0, 1.0) == 1.0
        for a, b, x in [(2.0, 5.0, 0.3), (0.5, 0.5, 0.2), (40.0, 2.0, 0.9)]:
            assert betainc(a, b, x) + betainc(b, a, 1.0 - x) == pytest.approx(
                1.0, rel=1e-12)

    def test_uniform_case(self):
        for x in np.linspace(0.0, 1.0, 11):
            assert betainc(1.0, 1.0, float(x)) == pytest.approx(x, abs=1e-15)


class TestFTail:
    def test_against_scipy_moderate(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            d1 = float(rng.integers(1, 200))
            d2 = float(rng.integers(2, 10_000))
            f = float(np.exp(rng.uniform(-2.0, 2.5)))
            want = float(scipy_stats.f.sf(f, d1, d2))
            if want < 1e-250:
                continue
            assert rel_err(f_sf(f, d1, d2), want) < 5e-10, (f, d1, d2)

    def test_huge_denominator_df_against_mpmath(self):
        # here scipy's own tail is only good to ~1e-9; x is formed inside
        # mpmath so the reference does not inherit double rounding of 1 - x
        mpmath.mp.dps = 60
        for f, d1, d2 in [(1.37, 56.0, 462119.0), (2.0, 3.0, 5_000_000.0),
                          (1.01, 200.0, 1_000_000.0), (3.0, 5.0, 1e12),
                          (0.5, 7.0, 1e12), (10.0, 1.0, 1e14)]:
            x = mpmath.mpf(d2) / (mpmath.mpf(d2) + mpmath.mpf(d1) * mpmath.mpf(f))
            want = float(mpmath.betainc(mpmath.mpf(d2) / 2, mpmath.mpf(d1) / 2,
                                        0, x, regularized=True))
            assert rel_err(f_sf(f, d1, d2), want) < 1e-11, (f, d1, d2)

    def test_edges(self):
        assert f_sf(0.0, 3.0, 4.0) == 1.0
        assert f_sf(-1.0, 3.0, 4.0) == 1.0
        assert f_sf(math.inf, 3.0, 4.0) == 0.0

    def test_chi2_limit(self):
        # d2 -> infinity turns F(d1, d2) into chi2(d1) / d1
        for f in (0.5, 1.0, 2.0, 4.0):
            want = float(scipy_stats.chi2.sf(f * 7.0, 7.0))
            assert rel_err(f_sf(f, 7.0, 1e12), want) < 1e-9
