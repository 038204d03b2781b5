"""Inference algebra: Wald intervals, joint tests, delta method, BH, Wilson."""

from dataclasses import dataclass

import numpy as np
import pytest
import scipy.stats

from targeted_fx.errors import DataError, EstimationError
from targeted_fx.inference import (
    allelic_effect_difference,
    benjamini_hochberg,
    delta_method,
    hotelling,
    joint_covariance,
    linear_combination,
    pvalue,
    wald_ci,
    wilson_interval,
)
from targeted_fx.rng import rng_for


@dataclass
class Rep:
    """Minimal stand-in for an estimate report: psi, eif, row_index."""

    psi: float
    eif: np.ndarray
    row_index: np.ndarray


def make_reports(n=200, p=2, seed=0):
    rng = rng_for(seed, "inference")
    index = np.arange(n)
    reports = []
    for j in range(p):
        eif = rng.standard_normal(n)
        eif -= eif.mean()
        reports.append(Rep(psi=float(rng.normal()), eif=eif, row_index=index))
    return reports


# ---------------------------------------------------------------- wald / p


def test_wald_ci_pinned_quantile():
    lo, hi = wald_ci(0.0, 1.0, alpha=0.05)
    assert hi == pytest.approx(1.9599639845400543, rel=1e-15)
    assert lo == -hi


def test_wald_ci_shift_and_scale():
    lo, hi = wald_ci(2.0, 0.5, alpha=0.05)
    z = 1.9599639845400543
    assert lo == pytest.approx(2.0 - z * 0.5, rel=1e-14)
    assert hi == pytest.approx(2.0 + z * 0.5, rel=1e-14)


def test_wald_ci_alpha_validation():
    for alpha in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            wald_ci(0.0, 1.0, alpha=alpha)


def test_pvalue_zero_se_degenerate():
    assert pvalue(0.0, 0.0) == 1.0
    assert pvalue(0.3, 0.0) == 0.0
    assert pvalue(0.3, 0.0, null=0.3) == 1.0


def test_pvalue_matches_normal_tail():
    for z in (0.1, 0.5, 1.0, 1.96, 3.2, 5.0, 8.0):
        expected = 2.0 * scipy.stats.norm.sf(z)
        assert pvalue(z, 1.0) == pytest.approx(expected, rel=1e-11)
        assert pvalue(-z, 1.0) == pytest.approx(expected, rel=1e-11)
        assert pvalue(z + 1.0, 1.0, null=1.0) == pytest.approx(expected, rel=1e-11)


# ---------------------------------------------------------- joint covariance


def test_joint_covariance_is_cross_moment():
    reports = make_reports(n=100, p=3, seed=1)
    D = np.column_stack([r.eif for r in reports])
    sigma = joint_covariance(reports)
    assert np.allclose(sigma, D.T @ D / 100, atol=1e-14)
    assert np.allclose(sigma, sigma.T, atol=1e-14)


def test_joint_covariance_rejects_misaligned_rows():
    a, b = make_reports(n=50, p=2, seed=2)
    b.row_index = b.row_index + 1
    with pytest.raises(DataError):
        joint_covariance([a, b])
    b.row_index = np.arange(49)
    b.eif = b.eif[:49]
    with pytest.raises(DataError):
        joint_covariance([a, b])


def test_joint_covariance_needs_a_report():
    with pytest.raises(ValueError):
        joint_covariance([])


# ------------------------------------------------------------------ hotelling


def test_hotelling_p1_matches_squared_t():
    # With one estimate the scaled statistic is referred to F(1, n-1),
    # which is exactly the law of a squared t with n-1 degrees of freedom.
    worst = 0.0
    for n in (4, 11, 57, 200, 1001):
        index = np.arange(n)
        signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        for sigma in (0.2, 1.0, 3.5):
            for psi in (0.05, 0.5, 2.0, -1.3):
                rep = Rep(psi=psi, eif=sigma * signs, row_index=index)
                res = hotelling([rep])
                t = abs(psi) * np.sqrt(n) / sigma
                expected = 2.0 * scipy.stats.t.sf(t, n - 1)
                if expected == 0.0:
                    assert res.p_value < 1e-300
                    continue
                worst = max(worst, abs(res.p_value - expected) / expected)
                assert res.df1 == 1 and res.df2 == n - 1
                assert res.f_statistic == pytest.approx(res.statistic, rel=1e-14)
                assert res.statistic == pytest.approx(n * psi * psi / sigma**2,
                                                      rel=1e-12)
    assert worst < 1e-10


def test_hotelling_null_at_estimate_gives_p_one():
    reports = make_reports(n=120, p=2, seed=3)
    res = hotelling(reports, null=[reports[0].psi, reports[1].psi])
    assert res.statistic == pytest.approx(0.0, abs=1e-14)
    assert res.p_value == 1.0


def test_hotelling_invariant_under_reparameterization():
    reports = make_reports(n=150, p=2, seed=4)
    null = np.array([0.1, -0.2])
    base = hotelling(reports, null=null)
    M = np.array([[2.0, 1.0], [-0.5, 3.0]])
    psi = np.array([r.psi for r in reports])
    D = np.column_stack([r.eif for r in reports])
    tpsi = M @ psi
    tD = D @ M.T
    transformed = [Rep(psi=tpsi[j], eif=tD[:, j], row_index=reports[0].row_index)
                   for j in range(2)]
    res = hotelling(transformed, null=M @ null)
    assert res.statistic == pytest.approx(base.statistic, rel=1e-9)
    assert res.p_value == pytest.approx(base.p_value, rel=1e-8)


def test_hotelling_needs_more_rows_than_estimates():
    index = np.arange(2)
    reports = [Rep(psi=0.0, eif=np.array([1.0, -1.0]), row_index=index)
               for _ in range(2)]
    with pytest.raises(EstimationError, match="n > p"):
        hotelling(reports)


def test_hotelling_singular_covariance_raises():
    a, _ = make_reports(n=80, p=2, seed=5)
    twin = Rep(psi=a.psi + 0.1, eif=a.eif.copy(), row_index=a.row_index)
    with pytest.raises(EstimationError, match="singular"):
        hotelling([a, twin])


def test_hotelling_null_shape_validation():
    reports = make_reports(n=60, p=2, seed=6)
    with pytest.raises(ValueError):
        hotelling(reports, null=[0.0, 0.0, 0.0])


def test_hotelling_report_contents():
    reports = make_reports(n=90, p=3, seed=7)
    res = hotelling(reports)
    assert res.n == 90
    assert res.condition_number >= 1.0
    assert 0.0 <= res.p_value <= 1.0
    d = res.to_dict()
    assert d["df1"] == 3 and d["df2"] == 87
    assert d["psi"] == [r.psi for r in reports]


# --------------------------------------------------------------- delta method


def test_delta_identity_transform():
    (rep,) = make_reports(n=100, p=1, seed=8)
    derived = delta_method([rep], lambda v: v[0], gradient=[1.0])
    assert derived.psi == rep.psi
    assert np.array_equal(derived.eif, rep.eif)
    assert derived.variance == pytest.approx(float((rep.eif**2).mean()), rel=1e-14)
    assert derived.se == pytest.approx(np.sqrt(derived.variance / 100), rel=1e-14)


def test_delta_finite_difference_matches_explicit_gradient():
    reports = make_reports(n=100, p=2, seed=9)

    def transform(v):
        return v[0] * v[1] ** 2

    psi = np.array([r.psi for r in reports])
    grad = np.array([psi[1] ** 2, 2.0 * psi[0] * psi[1]])
    numeric = delta_method(reports, transform)
    explicit = delta_method(reports, transform, gradient=grad)
    assert numeric.psi == explicit.psi
    assert np.allclose(numeric.gradient, explicit.gradient, rtol=1e-8, atol=1e-10)
    assert np.allclose(numeric.eif, explicit.eif, rtol=1e-7, atol=1e-8)
    callable_grad = delta_method(reports, transform, gradient=lambda v: grad)
    assert np.array_equal(callable_grad.gradient, grad)


def test_delta_composition_chain_rule():
    # delta(g o f) agrees with delta(g) applied to the derived estimate of f;
    # a DerivedEstimate quacks like a report, so it can be fed back in.
    reports = make_reports(n=100, p=2, seed=10)
    inner = delta_method(reports, lambda v: v[0] + v[1] ** 2, name="inner")
    outer = delta_method([inner], lambda u: np.exp(u[0]), name="outer")
    direct = delta_method(reports, lambda v: np.exp(v[0] + v[1] ** 2))
    assert outer.psi == pytest.approx(direct.psi, rel=1e-12)
    assert np.allclose(outer.eif, direct.eif, rtol=1e-6, atol=1e-6)


def test_delta_difference_variance_identity():
    # Var(psi2 - psi1) = Var1 - 2 Cov + Var2 from the joint EIF covariance.
    reports = make_reports(n=400, p=2, seed=11)
    sigma = joint_covariance(reports)
    diff = allelic_effect_difference(reports[0], reports[1])
    expected = sigma[0, 0] - 2.0 * sigma[0, 1] + sigma[1, 1]
    assert diff.variance == pytest.approx(expected, rel=1e-12)


def test_delta_gradient_shape_validation():
    reports = make_reports(n=50, p=2, seed=12)
    with pytest.raises(ValueError):
        delta_method(reports, lambda v: v[0], gradient=[1.0, 0.0, 0.0])


def test_delta_rejects_misaligned_rows():
    a, b = make_reports(n=50, p=2, seed=13)
    b.row_index = b.row_index[::-1].copy()
    with pytest.raises(DataError):
        delta_method([a, b], lambda v: v[0] - v[1])


def test_linear_combination_exact():
    reports = make_reports(n=80, p=3, seed=14)
    coef = np.array([0.5, -1.0, 2.0])
    lc = linear_combination(reports, coef, name="combo")
    psi = np.array([r.psi for r in reports])
    D = np.column_stack([r.eif for r in reports])
    assert lc.psi == pytest.approx(float(psi @ coef), rel=1e-14)
    assert np.allclose(lc.eif, D @ coef, atol=1e-14)
    assert lc.name == "combo"


def test_allelic_effect_difference_is_second_minus_first():
    first, second = make_reports(n=70, p=2, seed=15)
    diff = allelic_effect_difference(first, second, name="d")
    assert diff.psi == pytest.approx(second.psi - first.psi, rel=1e-14)
    assert np.allclose(diff.eif, second.eif - first.eif, atol=1e-14)
    assert np.array_equal(diff.gradient, [-1.0, 1.0])


# ----------------------------------------------------------------------- BH


def bh_reference(p):
    """Step-up definition evaluated literally, for cross-checking."""
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    adjusted = [0.0] * m
    running = 1.0
    for rank in range(m, 0, -1):
        i = order[rank - 1]
        running = min(running, p[i] * m / rank)
        adjusted[i] = min(running, 1.0)
    return np.array(adjusted)


def test_bh_hand_example():
    adjusted = benjamini_hochberg([0.01, 0.02, 0.30])
    assert np.allclose(adjusted, [0.03, 0.03, 0.30], atol=1e-15)


def test_bh_preserves_order_and_range():
    rng = rng_for(16, "bh")
    for _ in range(20):
        p = rng.uniform(size=rng.integers(1, 40))
        adjusted = benjamini_hochberg(p)
        assert np.all(adjusted >= p - 1e-15)
        assert np.all(adjusted <= 1.0)
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(adjusted[order]) >= -1e-15)


def test_bh_matches_reference_with_ties():
    rng = rng_for(17, "bh-ref")
    for _ in range(20):
        p = np.round(rng.uniform(size=25), 2)
        assert np.allclose(benjamini_hochberg(p), bh_reference(p), atol=1e-14)


def test_bh_single_value_passthrough():
    assert benjamini_hochberg([0.2])[0] == pytest.approx(0.2)


def test_bh_validation():
    for bad in ([], [0.1, np.nan], [0.1, -0.2], [0.1, 1.2]):
        with pytest.raises(ValueError):
            benjamini_hochberg(bad)
    with pytest.raises(ValueError):
        benjamini_hochberg(np.array([[0.1, 0.2]]))


# ------------------------------------------------------------------- wilson


def test_wilson_solves_score_quadratic():
    # Endpoints are the roots of (1 + z2) p^2 - (2 phat + z2) p + phat^2 = 0
    # with z2 = z^2 / n, which is the score equation solved for p.
    z = 1.9599639845400543
    for successes, trials in ((8, 10), (1, 30), (250, 500), (0, 12), (7, 7)):
        lo, hi = wilson_interval(successes, trials)
        phat = successes / trials
        z2 = z * z / trials
        roots = np.sort(np.roots([1.0 + z2, -(2.0 * phat + z2), phat * phat]))
        assert lo == pytest.approx(float(roots[0]), abs=1e-12)
        assert hi == pytest.approx(float(roots[1]), abs=1e-12)
        assert 0.0 <= lo <= phat <= hi <= 1.0


def test_wilson_edge_counts():
    lo, hi = wilson_interval(0, 20)
    assert lo == pytest.approx(0.0, abs=1e-15)
    assert 0.0 < hi < 0.25
    lo, hi = wilson_interval(20, 20)
    assert hi == pytest.approx(1.0, abs=1e-15)
    assert 0.75 < lo < 1.0


def test_wilson_narrows_with_trials():
    _, hi_small = wilson_interval(5, 10)
    lo_small, _ = wilson_interval(5, 10)
    lo_big, hi_big = wilson_interval(500, 1000)
    assert hi_big - lo_big < hi_small - lo_small


def test_wilson_validation():
    with pytest.raises(ValueError):
        wilson_interval(0, 0)
