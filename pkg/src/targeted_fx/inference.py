"""Inference on influence-function based estimates.

Single estimates get Wald intervals and normal p-values.  Collections of
estimates computed on identical rows get a joint covariance from their
influence-function cross moments, a Hotelling test against a point null,
and smooth transformations by the delta method.  All tail probabilities
come from the in-house special-function module, so no statistical runtime
dependency is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, EstimationError
from .special import f_sf, normal_quantile, two_sided_normal_p


def wald_ci(psi: float, se: float, alpha: float = 0.05) -> tuple[float, float]:
    """Two-sided normal interval psi +- z_{1 - alpha/2} * se."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    z = normal_quantile(1.0 - alpha / 2.0)
    return psi - z * se, psi + z * se


def pvalue(psi: float, se: float, null: float = 0.0) -> float:
    """Two-sided normal p-value for psi against a point null."""
    if se == 0.0:
        return 1.0 if psi == null else 0.0
    return two_sided_normal_p((psi - null) / se)


def _stack_aligned(reports) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack EIF columns after checking the reports share identical rows."""
    reports = list(reports)
    if len(reports) < 1:
        raise ValueError("need at least one estimate")
    index = reports[0].row_index
    for r in reports[1:]:
        if len(r.row_index) != len(index) or not np.array_equal(r.row_index, index):
            raise DataError(
                "joint inference needs estimates computed on identical rows; "
                "row indices differ"
            )
    psi = np.array([r.psi for r in reports], dtype=np.float64)
    D = np.column_stack([r.eif for r in reports])
    return psi, D, index


def joint_covariance(reports) -> np.ndarray:
    """Influence-function covariance (1/n) sum_i D_i D_i^T of aligned estimates."""
    _, D, _ = _stack_aligned(reports)
    return D.T @ D / D.shape[0]


@dataclass
class HotellingResult:
    statistic: float
    f_statistic: float
    df1: int
    df2: int
    p_value: float
    psi: np.ndarray
    covariance: np.ndarray
    condition_number: float
    n: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "f_statistic": self.f_statistic,
            "df1": self.df1,
            "df2": self.df2,
            "p_value": self.p_value,
            "psi": self.psi.tolist(),
            "condition_number": self.condition_number,
            "n": self.n,
        }


def hotelling(reports, null=None) -> HotellingResult:
    """Hotelling T-squared test of a vector of estimates against a point null.

    The statistic n (psi - null) Sigma^{-1} (psi - null)^T is referred to an
    F distribution with (p, n - p) degrees of freedom through the usual
    scaling t2 (n - p) / (p (n - 1)).  A singular covariance is an error;
    the condition number is always reported so near-singularity is visible.
    """
    psi, D, _ = _stack_aligned(reports)
    n, p = D.shape
    if n <= p:
        raise EstimationError(f"Hotelling test needs n > p; got n={n}, p={p}")
    sigma = D.T @ D / n
    null = np.zeros(p) if null is None else np.asarray(null, dtype=np.float64)
    if null.shape != (p,):
        raise ValueError(f"null must have shape ({p},)")
    rank = int(np.linalg.matrix_rank(sigma))
    if rank < p:
        raise EstimationError(
            f"influence-function covariance is singular (rank {rank} < {p}); "
            "the joint test is undefined"
        )
    cond = float(np.linalg.cond(sigma))
    diff = psi - null
    t2 = float(n * diff @ np.linalg.solve(sigma, diff))
    f_stat = t2 * (n - p) / (p * (n - 1))
    return HotellingResult(
        statistic=t2, f_statistic=f_stat, df1=p, df2=n - p,
        p_value=f_sf(f_stat, p, n - p), psi=psi, covariance=sigma,
        condition_number=cond, n=n,
    )


@dataclass
class DerivedEstimate:
    """A smooth scalar transform of aligned estimates, with its own EIF.

    Quacks enough like an estimate report (psi, variance, n, eif,
    row_index) for confidence intervals and relatedness-corrected variances
    to apply unchanged.
    """

    name: str
    psi: float
    variance: float
    n: int
    eif: np.ndarray
    row_index: np.ndarray
    gradient: np.ndarray

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance / self.n))


def _numeric_gradient(transform, psi: np.ndarray, step: float) -> np.ndarray:
    grad = np.empty(len(psi))
    for j in range(len(psi)):
        h = step * max(1.0, abs(psi[j]))
        hi, lo = psi.copy(), psi.copy()
        hi[j] += h
        lo[j] -= h
        grad[j] = (float(transform(hi)) - float(transform(lo))) / (2.0 * h)
    return grad


def delta_method(reports, transform, gradient=None, step: float = 1e-6,
                 name: str = "derived") -> DerivedEstimate:
    """Delta-method estimate of a scalar transform of aligned estimates.

    ``gradient`` may be a callable, an explicit vector, or None, in which
    case central finite differences with a relative step are used.  The
    transformed influence function is the gradient contracted against the
    component influence functions, so downstream variance machinery sees a
    plain estimate.
    """
    psi, D, index = _stack_aligned(reports)
    value = float(transform(psi))
    if gradient is None:
        grad = _numeric_gradient(transform, psi, step)
    elif callable(gradient):
        grad = np.asarray(gradient(psi), dtype=np.float64)
    else:
        grad = np.asarray(gradient, dtype=np.float64)
    if grad.shape != psi.shape:
        raise ValueError(f"gradient must have shape {psi.shape}")
    eif = D @ grad
    return DerivedEstimate(
        name=name, psi=value, variance=float((eif ** 2).mean()), n=D.shape[0],
        eif=eif, row_index=index, gradient=grad,
    )


def linear_combination(reports, coefficients, name: str = "linear") -> DerivedEstimate:
    """Exact delta method for sum_j c_j psi_j (the gradient is the coefficients)."""
    coef = np.asarray(coefficients, dtype=np.float64)
    return delta_method(reports, lambda v: float(v @ coef), gradient=coef, name=name)


def allelic_effect_difference(first, second, name: str = "difference") -> DerivedEstimate:
    """Difference of two effect estimates, second minus first.

    Both estimates must come from the same rows of the same dataset, which
    is what makes their influence functions jointly defined.
    """
    return linear_combination([first, second], [-1.0, 1.0], name=name)


def benjamini_hochberg(pvalues) -> np.ndarray:
    """Step-up adjusted p-values: cumulative minimum of p_(i) * m / i from the top."""
    p = np.asarray(pvalues, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("pvalues must be a nonempty one-dimensional array")
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("pvalues must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adjusted_sorted, 1.0)
    return adjusted


def wilson_interval(successes: int, trials: int, alpha: float = 0.05) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    z = normal_quantile(1.0 - alpha / 2.0)
    phat = successes / trials
    z2 = z * z / trials
    center = (phat + z2 / 2.0) / (1.0 + z2)
    half = z * np.sqrt(phat * (1.0 - phat) / trials + z2 / (4.0 * trials)) / (1.0 + z2)
    return float(center - half), float(center + half)
