"""Genetic relatedness and variance correction for dependent samples.

The relatedness matrix is the variance-weighted cross-product of centered
genotype dosages, accumulated in marker tiles so the genotype matrix never
needs to be materialized whole.  Only the lower triangle is stored.  Influence-function variances are corrected by adding cross terms
for every pair of samples whose genetic distance (one minus relatedness)
falls below a threshold, and the threshold is chosen where the resulting
variance curve flattens.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .dataset import NA_TOKENS
from .errors import DataError
from .inference import pvalue
from .special import normal_quantile

GRM_MAGIC = b"GRM1"
DEFAULT_TAUS = np.linspace(0.0, 1.0, 101)
TAU_CEILING = 2.0


@dataclass
class GRM:
    """Packed lower triangle of a genetic relatedness matrix.

    Entry (i, j) with j <= i lives at position i (i + 1) / 2 + j.  The
    allele frequencies are kept when the matrix was computed in-process
    and are None after loading from disk, where only their hash is stored.
    """

    n: int
    n_markers: int
    packed: np.ndarray
    freq_hash: bytes
    allele_frequencies: np.ndarray | None = None
    excluded_markers: tuple = ()

    def value(self, i: int, j: int) -> float:
        a, b = (i, j) if i >= j else (j, i)
        return float(self.packed[a * (a + 1) // 2 + b])

    def dense(self) -> np.ndarray:
        out = np.empty((self.n, self.n))
        ii, jj = np.tril_indices(self.n)
        out[ii, jj] = self.packed
        out[jj, ii] = self.packed
        return out


def compute_grm(genotypes: np.ndarray, tile: int = 1024) -> GRM:
    """Standardized relatedness from a dosage matrix with NaN for missing.

    Allele frequencies are half the observed column means.  Monomorphic
    markers (frequency exactly 0 or 1, or no observed value) are excluded
    and reported.  Missing dosages are imputed at twice the frequency,
    which is zero after centering.  Relatedness sums the centered
    cross-products weighted by 1 / (2 p (1 - p)) per marker and divides by
    R - 1 over the R retained markers.  The weight is applied to one side
    of the product rather than as a square-root scale on both, so integer
    dosages at dyadic frequencies give exact results.
    """
    genotypes = np.asarray(genotypes, dtype=np.float64)
    if genotypes.ndim != 2:
        raise DataError("genotypes must be a 2-d array of dosages")
    n, r_total = genotypes.shape
    if n < 2:
        raise DataError("relatedness needs at least two samples")
    observed = ~np.isnan(genotypes)
    finite = np.where(observed, genotypes, 0.0)
    if np.any((finite < 0.0) | (finite > 2.0)):
        raise DataError("dosages must lie in [0, 2]")
    counts = observed.sum(axis=0)
    sums = finite.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = np.where(counts > 0, sums / np.maximum(counts, 1) / 2.0, np.nan)
    keep = (counts > 0) & (freq > 0.0) & (freq < 1.0)
    excluded = tuple(int(k) for k in np.flatnonzero(~keep))
    r_used = int(keep.sum())
    if r_used < 2:
        raise DataError(
            f"only {r_used} polymorphic marker(s); relatedness needs at least two"
        )
    p = freq[keep]
    cols = np.flatnonzero(keep)
    acc = np.zeros((n, n))
    for start in range(0, r_used, tile):
        block = cols[start:start + tile]
        g = genotypes[:, block]
        pb = p[start:start + tile]
        centered = np.where(np.isnan(g), 2.0 * pb, g) - 2.0 * pb
        acc += (centered / (2.0 * pb * (1.0 - pb))) @ centered.T
    acc /= r_used - 1
    ii, jj = np.tril_indices(n)
    return GRM(
        n=n, n_markers=r_used, packed=acc[ii, jj],
        freq_hash=hashlib.sha256(p.astype("<f8").tobytes()).digest(),
        allele_frequencies=p, excluded_markers=excluded,
    )


def save_grm(grm: GRM, path) -> None:
    """Write magic, sample count, marker count, frequency hash, lower triangle."""
    with open(path, "wb") as fh:
        fh.write(GRM_MAGIC)
        fh.write(struct.pack("<Q", grm.n))
        fh.write(struct.pack("<Q", grm.n_markers))
        fh.write(grm.freq_hash)
        fh.write(grm.packed.astype("<f8").tobytes())


def load_grm(path) -> GRM:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GRM_MAGIC:
        raise DataError(f"not a relatedness file: bad magic {blob[:4]!r}")
    if len(blob) < 4 + 8 + 8 + 32:
        raise DataError("relatedness file is truncated")
    n = struct.unpack_from("<Q", blob, 4)[0]
    r_used = struct.unpack_from("<Q", blob, 12)[0]
    freq_hash = blob[20:52]
    body = blob[52:]
    expect = n * (n + 1) // 2 * 8
    if len(body) != expect:
        raise DataError(
            f"relatedness file body has {len(body)} bytes, expected {expect} for n={n}"
        )
    packed = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return GRM(n=int(n), n_markers=int(r_used), packed=packed, freq_hash=freq_hash)


def load_genotypes(path) -> tuple[np.ndarray, list[str]]:
    """Read a dosage CSV (header row of marker names) into (matrix, names)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty genotype file") from None
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            vals = []
            for name, field in zip(header, record):
                field = field.strip()
                if field in NA_TOKENS:
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(field))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: bad dosage {field!r} for marker {name!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no genotype rows")
    return np.array(rows, dtype=np.float64), list(header)


def genetic_distance(grm: GRM, i: int, j: int) -> float:
    """One minus relatedness; may be negative for duplicates, above one for negatives."""
    return 1.0 - grm.value(i, j)


def _pair_arrays(grm: GRM, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distances for all pairs among `rows` plus the pair position indices."""
    m = len(rows)
    ii, jj = np.triu_indices(m, k=1)
    a = np.maximum(rows[ii], rows[jj]).astype(np.int64)
    b = np.minimum(rows[ii], rows[jj]).astype(np.int64)
    dist = 1.0 - grm.packed[a * (a + 1) // 2 + b]
    return dist, ii, jj


@dataclass
class SVPCurve:
    """Corrected variance as a function of the distance threshold."""

    taus: np.ndarray
    variances: np.ndarray
    pair_counts: np.ndarray
    n: int

    def to_dict(self) -> dict:
        return {
            "taus": self.taus.tolist(),
            "variances": self.variances.tolist(),
            "pair_counts": self.pair_counts.tolist(),
            "n": self.n,
        }


def svp_curve(eif: np.ndarray, grm: GRM, taus=None,
              rows: np.ndarray | None = None) -> SVPCurve:
    """Variance correction curve over a grid of distance thresholds.

    sigma2(tau) = (1/n) [ sum_i D_i^2 + 2 sum_{i<j : d_ij <= tau} D_i D_j ].

    Self pairs always contribute, so tau below every pairwise distance
    reproduces the independent-samples variance exactly.  ``rows`` maps
    each influence value to its sample index in the relatedness matrix
    (default: positions 0..n-1, requiring the matrix to match the vector).
    """
    eif = np.asarray(eif, dtype=np.float64)
    if eif.ndim != 1 or eif.size < 2:
        raise DataError("influence vector must be one-dimensional with n >= 2")
    if not np.all(np.isfinite(eif)):
        raise DataError("influence vector contains non-finite values")
    n = eif.size
    if rows is None:
        if grm.n != n:
            raise DataError(
                f"relatedness matrix covers {grm.n} samples but the influence "
                f"vector has {n}; pass rows to subset"
            )
        rows = np.arange(n, dtype=np.int64)
    else:
        rows = np.asarray(rows, dtype=np.int64)
        if rows.shape != (n,):
            raise DataError("rows must align one-to-one with the influence vector")
        if rows.min() < 0 or rows.max() >= grm.n:
            raise DataError("rows index outside the relatedness matrix")
        if len(np.unique(rows)) != n:
            raise DataError("rows must be distinct samples")
    taus = DEFAULT_TAUS.copy() if taus is None else np.asarray(taus, dtype=np.float64)
    if taus.ndim != 1 or taus.size == 0:
        raise DataError("threshold grid must be a nonempty one-dimensional array")
    if np.any(np.diff(taus) <= 0.0):
        raise DataError("threshold grid must be strictly ascending")
    if taus[0] < 0.0 or taus[-1] > TAU_CEILING:
        raise DataError(f"thresholds must lie within [0, {TAU_CEILING}]")

    dist, ii, jj = _pair_arrays(grm, rows)
    cross = 2.0 * eif[ii] * eif[jj]
    order = np.argsort(dist, kind="stable")
    dist_sorted = dist[order]
    prefix = np.concatenate([[0.0], np.cumsum(cross[order])])
    base = float((eif ** 2).sum())
    cut = np.searchsorted(dist_sorted, taus, side="right")
    variances = (base + prefix[cut]) / n
    return SVPCurve(taus=taus, variances=variances, pair_counts=cut.astype(np.int64), n=n)


@dataclass
class SVPSelection:
    """The chosen threshold and corrected variance, with how it was chosen."""

    index: int
    tau: float
    variance: float
    rule: str
    at_boundary: bool

    def to_dict(self) -> dict:
        return {"index": self.index, "tau": self.tau, "variance": self.variance,
                "rule": self.rule, "at_boundary": self.at_boundary}


def select_plateau(curve: SVPCurve, rule: str = "max",
                   rel_tol: float = 0.005) -> SVPSelection:
    """Pick the plateau of a correction curve.

    The "max" rule takes the grid point with the largest corrected
    variance, a conservative reading of the plateau.  The "stable" rule
    takes the first point from which every forward step changes the
    variance by less than ``rel_tol`` relatively; if the curve is still
    moving at the end of the grid the last point is returned and flagged
    as a boundary selection.
    """
    v = curve.variances
    if rule == "max":
        idx = int(np.argmax(v))
        return SVPSelection(index=idx, tau=float(curve.taus[idx]),
                            variance=float(v[idx]), rule=rule,
                            at_boundary=idx == len(v) - 1)
    if rule == "stable":
        scale = np.maximum(np.abs(v[:-1]), 1e-300)
        change = np.abs(np.diff(v)) / scale
        stable_from = len(v) - 1
        for i in range(len(v)):
            if np.all(change[i:] < rel_tol):
                stable_from = i
                break
        at_boundary = bool(
            stable_from == len(v) - 1 and len(v) > 1 and change[-1] >= rel_tol
        )
        return SVPSelection(index=stable_from, tau=float(curve.taus[stable_from]),
                            variance=float(v[stable_from]), rule=rule,
                            at_boundary=at_boundary)
    raise ValueError(f"unknown plateau rule {rule!r}; expected 'max' or 'stable'")


@dataclass
class SVPResult:
    """Relatedness-corrected variance and interval for one estimate."""

    psi: float
    variance_iid: float
    variance_corrected: float
    se: float
    ci: tuple[float, float]
    p_value: float
    selection: SVPSelection
    curve: SVPCurve

    def to_dict(self) -> dict:
        return {
            "psi": self.psi,
            "variance_iid": self.variance_iid,
            "variance_corrected": self.variance_corrected,
            "se": self.se,
            "ci": list(self.ci),
            "p_value": self.p_value,
            "selection": self.selection.to_dict(),
            "curve": self.curve.to_dict(),
        }


def svp_ci(report, grm: GRM, taus=None, rule: str = "max", alpha: float = 0.05,
           rows: np.ndarray | None = None, rel_tol: float = 0.005) -> SVPResult:
    """Corrected Wald interval for an estimate with an influence function.

    ``report`` needs psi, variance, n, eif and row_index attributes; rows
    defaults to the report's own row index, which must address the
    relatedness matrix.
    """
    if rows is None:
        rows = np.asarray(report.row_index, dtype=np.int64)
    curve = svp_curve(report.eif, grm, taus=taus, rows=rows)
    selection = select_plateau(curve, rule=rule, rel_tol=rel_tol)
    variance = max(selection.variance, 0.0)
    se = float(np.sqrt(variance / curve.n))
    z = normal_quantile(1.0 - alpha / 2.0)
    return SVPResult(
        psi=report.psi, variance_iid=float(report.variance),
        variance_corrected=selection.variance, se=se,
        ci=(report.psi - z * se, report.psi + z * se),
        p_value=pvalue(report.psi, se),
        selection=selection, curve=curve,
    )
