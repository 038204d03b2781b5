"""Effect definitions and their expansion into signed counterfactual terms.

A k-way interaction contrast over treatments ``A_1 .. A_k`` with per-
treatment level changes ``a_j(0) -> a_j(1)`` expands into the alternating
sum over the vertices of the change hypercube

    sum over s in {0,1}^k of (-1)^(k - |s|) * E[ E(Y | A = a(s), W) ],

where ``a(s)`` sets each treatment to ``a_j(s_j)`` and ``|s|`` is the
number of ones in ``s``.  The k = 1 case is the average treatment effect;
a single vertex with sign +1 is a counterfactual mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import DataError

ESTIMAND_KINDS = ("counterfactual_mean", "ate", "aie")


@dataclass(frozen=True)
class SignedTerm:
    """One vertex of the expansion: a sign and a joint treatment level."""

    sign: int
    levels: tuple[str, ...]


@dataclass(frozen=True)
class Estimand:
    """A causal contrast over one or more discrete treatments.

    Parameters
    ----------
    kind : str
        ``"counterfactual_mean"``, ``"ate"`` (one treatment), or ``"aie"``
        (k >= 1 treatments; k = 1 coincides with the ATE).
    treatments : tuple of str
        Treatment column names, pairwise distinct.
    from_levels, to_levels : tuple of str
        The level change per treatment.  ``from_levels`` must be None for a
        counterfactual mean, whose single vertex is ``to_levels``.
    outcome : str
        Outcome column name.
    name : str
        Optional label used in result records; autogenerated when empty.
    """

    kind: str
    treatments: tuple[str, ...]
    from_levels: tuple[str, ...] | None
    to_levels: tuple[str, ...]
    outcome: str
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "treatments", tuple(self.treatments))
        object.__setattr__(self, "to_levels", tuple(self.to_levels))
        if self.from_levels is not None:
            object.__setattr__(self, "from_levels", tuple(self.from_levels))
        if self.kind not in ESTIMAND_KINDS:
            raise DataError(f"unknown estimand kind {self.kind!r}")
        k = len(self.treatments)
        if k < 1:
            raise DataError("an estimand needs at least one treatment")
        if len(set(self.treatments)) != k:
            raise DataError("estimand treatments must be pairwise distinct")
        if len(self.to_levels) != k:
            raise DataError("to_levels must name one level per treatment")
        if self.kind == "counterfactual_mean":
            if self.from_levels is not None:
                raise DataError("a counterfactual mean has no from_levels")
        else:
            if self.kind == "ate" and k != 1:
                raise DataError("an ATE involves exactly one treatment")
            if self.from_levels is None or len(self.from_levels) != k:
                raise DataError("from_levels must name one level per treatment")
            for j, (lo, hi) in enumerate(zip(self.from_levels, self.to_levels)):
                if lo == hi:
                    raise DataError(
                        f"treatment {self.treatments[j]!r} must change: "
                        f"from and to levels are both {lo!r}"
                    )
        if not self.name:
            object.__setattr__(self, "name", self.default_name())

    @property
    def k(self) -> int:
        return len(self.treatments)

    def default_name(self) -> str:
        if self.kind == "counterfactual_mean":
            changes = ",".join(f"{t}={l}" for t, l in zip(self.treatments, self.to_levels))
            return f"{self.outcome}|{changes}"
        changes = ",".join(
            f"{t}:{a}->{b}" for t, a, b in zip(self.treatments, self.from_levels, self.to_levels)
        )
        return f"{self.outcome}|{changes}"

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "treatments": list(self.treatments),
            "from": None if self.from_levels is None else list(self.from_levels),
            "to": list(self.to_levels),
            "outcome": self.outcome,
            "name": self.name,
        }


def expand_estimand(estimand: Estimand) -> tuple[SignedTerm, ...]:
    """Enumerate the signed vertices of an estimand's expansion.

    Vertices follow the k-bit counter order with the first treatment in the
    least significant position, so the all-``from`` vertex comes first and
    the all-``to`` vertex last.  Signs alternate as ``(-1)**(k - |s|)``.
    """
    if estimand.kind == "counterfactual_mean":
        return (SignedTerm(1, estimand.to_levels),)
    k = estimand.k
    terms = []
    for i in range(2 ** k):
        bits = [(i >> j) & 1 for j in range(k)]
        levels = tuple(
            estimand.to_levels[j] if bits[j] else estimand.from_levels[j]
            for j in range(k)
        )
        sign = -1 if (k - sum(bits)) % 2 else 1
        terms.append(SignedTerm(sign, levels))
    return tuple(terms)


@dataclass(frozen=True)
class FilterDecision:
    """Outcome of the positivity prefilter for one estimand.

    ``frequencies`` and ``counts`` line up with ``expand_estimand`` order
    and are computed on the complete-case rows for the estimand.
    """

    keep: bool
    threshold: float
    frequencies: tuple[float, ...]
    counts: tuple[int, ...]
    n: int

    def to_dict(self) -> dict:
        return {
            "keep": self.keep,
            "threshold": self.threshold,
            "frequencies": list(self.frequencies),
            "counts": [int(c) for c in self.counts],
            "n": self.n,
        }


def frequency_filter(data: Dataset, estimand: Estimand, threshold: float,
                     rows: np.ndarray | None = None) -> FilterDecision:
    """Decide whether an estimand is estimable at a positivity threshold.

    Drops the estimand when any vertex of its expansion is unobserved, or
    observed with empirical frequency below ``threshold`` among the rows
    used for the estimand.  At threshold 0 this keeps an estimand exactly
    when every vertex occurs at least once.
    """
    if threshold < 0 or threshold >= 1:
        raise ValueError(f"threshold must lie in [0, 1), got {threshold}")
    if rows is None:
        rows = data.complete_rows(estimand.treatments)
    n = len(rows)
    counts = []
    for term in expand_estimand(estimand):
        counts.append(int(data.match_mask(estimand.treatments, term.levels, rows).sum()))
    freqs = tuple(c / n if n else 0.0 for c in counts)
    keep = n > 0 and all(c > 0 for c in counts) and all(f >= threshold for f in freqs)
    return FilterDecision(keep, float(threshold), freqs, tuple(counts), n)
