"""Distances between whole-space clusterings and their empirical versions.

Everything is built on the mass matrix M[i, j] = P(C_i sym-diff D_j):

* d_p       = min over sigma of (sum_i M[i, sigma(i)]^p)^(1/p), equal counts only;
              p = inf is the bottleneck assignment value;
* d_{P,lam} = 1/2 min over sigma of the padded objective, where the smaller
              clustering is completed with empty sets whose cost against D_j is
              lam * P(D_j); lam = 1 gives d_P;
* d_H       = max(max_i min_j M[i, j], max_j min_i M[i, j]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import optimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from . import mixture
from .errors import InputError
from .mixture import MixtureModel, SampleSet
from .partition import Clustering1D, ExactCdf, GridClustering, MonteCarlo, labels_for


# ---------------------------------------------------------------------------
# assignment problems


def _square(cost) -> np.ndarray:
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InputError(f"assignment needs a square matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InputError("assignment costs must be finite")
    return C


def linear_sum_assignment(cost) -> tuple[np.ndarray, float]:
    """sigma minimizing sum_i cost[i, sigma(i)], with that minimum."""
    C = _square(cost)
    if C.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    rows, cols = optimize.linear_sum_assignment(C)
    sigma = _exact_polish(C, cols[np.argsort(rows)])
    # the optimum is exact and fsum correctly rounded, so the total does not
    # depend on the label order or on transposing the matrix
    return sigma, math.fsum(C[np.arange(len(sigma)), sigma])


def _exact_polish(C: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Cancel improving cycles of sigma in exact rational arithmetic.

    The floating-point solver can stop at a permutation whose exact total
    exceeds the optimum by a rounding error when two totals nearly tie.
    Edge j -> k (weight C[i, k] - C[i, j], i the row holding column j) moves a
    row to another column; sigma is optimal iff no cycle has negative weight.
    """
    n = len(sigma)
    Q = [[Fraction(v) for v in row] for row in C.tolist()]
    sigma = sigma.copy()
    while True:
        owner = np.empty(n, dtype=np.int64)
        owner[sigma] = np.arange(n)
        w = [[Q[owner[j]][k] - Q[owner[j]][j] for k in range(n)] for j in range(n)]
        # Bellman-Ford from a virtual source joined to every column
        dist = [Fraction(0)] * n
        pred = [-1] * n
        last = -1
        for _ in range(n):
            last = -1
            for j in range(n):
                for k in range(n):
                    if j != k and dist[j] + w[j][k] < dist[k]:
                        dist[k] = dist[j] + w[j][k]
                        pred[k] = j
                        last = k
            if last < 0:
                return sigma
        for _ in range(n):
            last = pred[last]
        cycle, k = [last], pred[last]
        while k != last:
            cycle.append(k)
            k = pred[k]
        for k in cycle:
            sigma[owner[pred[k]]] = k


def _perfect_matching(mask: np.ndarray) -> np.ndarray | None:
    match = maximum_bipartite_matching(csr_matrix(mask), perm_type="column")
    return None if np.any(match < 0) else match


def bottleneck_assignment(cost) -> tuple[np.ndarray, float]:
    """sigma minimizing max_i cost[i, sigma(i)], with that minimum.

    Binary search over the distinct cost values for the smallest threshold
    whose admissible edges still contain a perfect matching.
    """
    C = _square(cost)
    if C.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    values = np.unique(C)
    lo, hi = 0, len(values) - 1
    best = _perfect_matching(C <= values[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        m = _perfect_matching(C <= values[mid])
        if m is None:
            lo = mid + 1
        else:
            hi, best = mid, m
    return best.astype(np.int64), float(values[lo])


# ---------------------------------------------------------------------------
# mass matrix


@dataclass(frozen=True, eq=False)
class MassMatrix:
    entries: np.ndarray
    row_masses: np.ndarray
    col_masses: np.ndarray
    method: object
    standard_errors: np.ndarray | None = None
    # per-sample labels, kept for Monte Carlo / empirical error estimates
    labels: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def method_name(self) -> str:
        m = self.method
        if isinstance(m, MonteCarlo):
            return f"MonteCarlo(n={m.n}, seed={m.seed})"
        if isinstance(m, ExactCdf):
            return "ExactCdf1D"
        return str(m)


def _sym_diff_1d(model: MixtureModel, C: Clustering1D, D: Clustering1D) -> np.ndarray:
    ec, ed = C.edges, D.edges
    a, b = ec[:-1, None], ec[1:, None]
    c, d = ed[None, :-1], ed[None, 1:]
    pc = mixture.interval_mass(model, ec[:-1], ec[1:])[:, None]
    pd = mixture.interval_mass(model, ed[:-1], ed[1:])[None, :]
    overlap = np.maximum(a, c) < np.minimum(b, d)
    # overlapping intervals differ on at most one piece at each end
    left = mixture.interval_mass(model, np.minimum(a, c), np.maximum(a, c))
    right = mixture.interval_mass(model, np.minimum(b, d), np.maximum(b, d))
    return np.where(overlap, left + right, pc + pd)


def matrix_from_labels(la: np.ndarray, lb: np.ndarray, r: int, s: int, method="Empirical") -> MassMatrix:
    """Empirical mass matrix: fraction of points in exactly one of C_i, D_j."""
    la, lb = np.asarray(la), np.asarray(lb)
    n = len(la)
    A = la[:, None] == np.arange(r)[None, :]
    B = lb[:, None] == np.arange(s)[None, :]
    na, nb = A.sum(axis=0), B.sum(axis=0)
    pa, pb = na / n, nb / n
    # integer counts, so the only rounding is the final division
    E = (na[:, None] + nb[None, :] - 2 * (A.T.astype(np.int64) @ B.astype(np.int64))) / n
    se = np.sqrt(E * (1 - E) / n)
    return MassMatrix(E, pa, pb, method, se, (la, lb))


def mass_matrix(C, D, model: MixtureModel, method=None, threads: int | None = None) -> MassMatrix:
    """P(C_i sym-diff D_j) for every pair of clusters.

    Two 1D clusterings use the exact CDF path unless a MonteCarlo method is
    given; anything else is estimated from a model sample labeled by both
    clusterings.
    """
    exact_possible = isinstance(C, Clustering1D) and isinstance(D, Clustering1D)
    if method is None:
        method = ExactCdf() if exact_possible else MonteCarlo()
    for X in (C, D):
        if isinstance(X, GridClustering) and X.dimension != model.dimension:
            raise InputError("clustering and model dimensions differ")
        if isinstance(X, Clustering1D) and model.dimension != 1:
            raise InputError("a 1D clustering cannot be compared on a multivariate model")
    if isinstance(method, ExactCdf):
        if not exact_possible:
            raise InputError("exact mass matrices need two 1D clusterings")
        E = _sym_diff_1d(model, C, D)
        pc = mixture.interval_mass(model, C.edges[:-1], C.edges[1:])
        pd = mixture.interval_mass(model, D.edges[:-1], D.edges[1:])
        return MassMatrix(E, pc, pd, method)
    if isinstance(method, MonteCarlo):
        pts = mixture.sample(model, method.n, method.seed).points
        la = labels_for(C, pts, model, threads)
        lb = labels_for(D, pts, model, threads)
        return matrix_from_labels(la, lb, C.cluster_count, D.cluster_count, method)
    raise InputError(f"unknown mass method {method!r}")


# ---------------------------------------------------------------------------
# distances


@dataclass(frozen=True, eq=False)
class DistanceReport:
    value: float
    optimal_assignment: tuple[int, ...] | None
    padded: int = 0
    lam: float | None = None
    method: str = "ExactCdf1D"
    standard_error: float | None = None

    def to_dict(self) -> dict:
        out = {
            "value": self.value,
            "assignment": None if self.optimal_assignment is None else list(self.optimal_assignment),
            "padded": self.padded,
            "lambda": self.lam,
            "method": self.method,
        }
        if self.standard_error is not None:
            out["standard_error"] = self.standard_error
        return out


def _matched_se(M: MassMatrix, rows, cols, scale: float) -> float | None:
    """Standard error of scale * mean_k sum_i I(X_k in C_i sym-diff D_sigma(i))."""
    if M.labels is None:
        return None
    la, lb = M.labels
    z = np.zeros(len(la))
    for i, j in zip(rows, cols):
        z += (la == i) != (lb == j)
    return float(scale * z.std(ddof=1) / np.sqrt(len(z))) if len(z) > 1 else None


def dp_from_matrix(M: MassMatrix, p: float = 1.0) -> DistanceReport:
    r, s = M.shape
    if r != s:
        raise InputError(f"d_p needs equal cluster counts, got {r} and {s}")
    if not p >= 1:
        raise InputError("p must be at least 1")
    if np.isinf(p):
        sigma, val = bottleneck_assignment(M.entries)
        se = None
        if M.standard_errors is not None:
            k = int(np.argmax(M.entries[np.arange(r), sigma]))
            se = float(M.standard_errors[k, sigma[k]])
    else:
        sigma, total = linear_sum_assignment(M.entries**p)
        val = total ** (1.0 / p)
        se = _matched_se(M, range(r), sigma, 1.0) if p == 1 else None
    return DistanceReport(float(val), tuple(int(j) for j in sigma), 0, None, M.method_name, se)


def dP_from_matrix(M: MassMatrix, lam: float = 1.0) -> DistanceReport:
    if not lam >= 0:
        raise InputError("lambda must be nonnegative")
    r, s = M.shape
    cost = M.entries
    if r < s:
        cost = np.vstack([cost, np.tile(lam * M.col_masses, (s - r, 1))])
    elif r > s:
        cost = np.hstack([cost, np.tile(lam * M.row_masses[:, None], (1, r - s))])
    sigma, total = linear_sum_assignment(cost)
    rows = [i for i in range(r) if sigma[i] < s]
    se = _matched_se(M, rows, sigma[rows], 0.5) if lam == 1 else None
    return DistanceReport(0.5 * total, tuple(int(j) for j in sigma), abs(r - s), float(lam), M.method_name, se)


def dH_from_matrix(M: MassMatrix) -> DistanceReport:
    E = M.entries
    row = E.min(axis=1)
    col = E.min(axis=0)
    val = max(row.max(), col.max())
    se = None
    if M.standard_errors is not None:
        if row.max() >= col.max():
            i = int(np.argmax(row))
            j = int(np.argmin(E[i]))
        else:
            j = int(np.argmax(col))
            i = int(np.argmin(E[:, j]))
        se = float(M.standard_errors[i, j])
    return DistanceReport(float(val), None, 0, None, M.method_name, se)


def distance_dp(C, D, model: MixtureModel, method=None, p: float = 1.0) -> DistanceReport:
    r, s = C.cluster_count, D.cluster_count
    if r != s:
        raise InputError(f"d_p needs equal cluster counts, got {r} and {s}")
    return dp_from_matrix(mass_matrix(C, D, model, method), p)


def distance_dP(C, D, model: MixtureModel, method=None, lam: float = 1.0) -> DistanceReport:
    if not lam >= 0:
        raise InputError("lambda must be nonnegative")
    return dP_from_matrix(mass_matrix(C, D, model, method), lam)


def distance_dH(C, D, model: MixtureModel, method=None) -> DistanceReport:
    return dH_from_matrix(mass_matrix(C, D, model, method))


def _sample_labels(clustering, samples: SampleSet) -> np.ndarray:
    X = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    return np.asarray(clustering.label(X))


def empirical_matrix(C, D, samples: SampleSet) -> MassMatrix:
    """Mass matrix under the empirical measure of ``samples``.

    Grid clusterings label points by cell lookup, so every point must lie in
    the grid box.
    """
    return matrix_from_labels(_sample_labels(C, samples), _sample_labels(D, samples), C.cluster_count, D.cluster_count)


def empirical_dP(C, D, samples: SampleSet, lam: float = 1.0) -> float:
    return dP_from_matrix(empirical_matrix(C, D, samples), lam).value


def empirical_dH(C, D, samples: SampleSet) -> float:
    return dH_from_matrix(empirical_matrix(C, D, samples)).value
