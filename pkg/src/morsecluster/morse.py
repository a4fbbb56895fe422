"""Critical points of Gaussian mixture densities.

Newton-Raphson on the gradient is started from every component mean, from
points spread along the ridgeline joining each pair of components and,
optionally, from a uniform grid over the bounding box. Converged points are
deduplicated and classified by the signs of their Hessian eigenvalues.

Coverage is heuristic: for two components every critical point lies on the
ridgeline, but for three or more components with unequal covariances saddles
may sit off all pairwise ridgelines, which is what the grid seeds are for.
"""

from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import mixture
from .errors import DegenerateStepError, NonConvergenceError, SearchError
from .mixture import MixtureModel


class Kind(enum.Enum):
    LOCAL_MAX = "LocalMax"
    SADDLE = "Saddle"
    LOCAL_MIN = "LocalMin"


_KIND_ORDER = {Kind.LOCAL_MAX: 0, Kind.SADDLE: 1, Kind.LOCAL_MIN: 2}


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    location: np.ndarray
    value: float
    gradient_norm: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)

    @property
    def morse_index(self) -> int:
        return int(np.sum(self.eigenvalues < 0))

    @property
    def kind(self) -> Kind:
        m = self.morse_index
        if m == len(self.eigenvalues):
            return Kind.LOCAL_MAX
        if m == 0:
            return Kind.LOCAL_MIN
        return Kind.SADDLE

    @property
    def min_abs_eigenvalue(self) -> float:
        return float(np.min(np.abs(self.eigenvalues)))


@dataclass(frozen=True)
class CriticalSet:
    points: tuple[CriticalPoint, ...]

    def of_kind(self, kind: Kind) -> list[CriticalPoint]:
        return [p for p in self.points if p.kind is kind]

    @property
    def maxima(self) -> list[CriticalPoint]:
        return self.of_kind(Kind.LOCAL_MAX)

    @property
    def saddles(self) -> list[CriticalPoint]:
        return self.of_kind(Kind.SADDLE)

    @property
    def minima(self) -> list[CriticalPoint]:
        return self.of_kind(Kind.LOCAL_MIN)

    @property
    def counts(self) -> tuple[int, int, int]:
        """(n_max, n_saddle, n_min)."""
        return len(self.maxima), len(self.saddles), len(self.minima)


@dataclass(frozen=True)
class SearchConfig:
    tol: float = 1e-10
    max_iter: int = 200
    merge_radius: float | None = None  # default: 1e-6 x bounding-box diagonal
    degeneracy_tol: float = 1e-8
    ridge_seeds: int = 50
    grid_per_axis: int | None = None  # default: 15 for d <= 2, 0 otherwise


@dataclass
class MorseReport:
    ok: bool
    violations: list[str]


def bounding_box(model: MixtureModel, n_sd: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box covering every component's n_sd-sigma ellipsoid."""
    half = n_sd * np.sqrt(np.diagonal(model.covariances, axis1=1, axis2=2))
    return (model.means - half).min(axis=0), (model.means + half).max(axis=0)


def bbox_diagonal(model: MixtureModel) -> float:
    lo, hi = bounding_box(model)
    return float(np.linalg.norm(hi - lo))


def classify(model: MixtureModel, x) -> CriticalPoint:
    x = np.asarray(x, dtype=float)
    H = mixture.hessian(model, x)
    evals, evecs = np.linalg.eigh(H)
    return CriticalPoint(
        location=x,
        value=float(mixture.density(model, x)),
        gradient_norm=float(np.linalg.norm(mixture.gradient(model, x))),
        eigenvalues=evals,
        eigenvectors=evecs,
    )


_OK, _DEGENERATE, _DIVERGED, _PENDING = 0, 1, 2, 3


def _batch_newton(model: MixtureModel, seeds: np.ndarray, tol: float, max_iter: int, region=None):
    """Damped Newton from many seeds at once; returns (locations, status codes)."""
    X = np.array(seeds, dtype=float).reshape(-1, model.dimension)
    status = np.full(len(X), _PENDING)
    G = mixture.gradient(model, X)
    gnorm = np.linalg.norm(G, axis=1)
    for _ in range(max_iter + 1):
        act = np.flatnonzero(status == _PENDING)
        if act.size == 0:
            break
        H = mixture.hessian(model, X[act])
        evals = np.linalg.eigvalsh(H)
        absev = np.abs(evals)
        singular = ~np.all(np.isfinite(H), axis=(1, 2)) | (absev.min(axis=1) <= 1e-14 * absev.max(axis=1))
        status[act[singular]] = _DEGENERATE
        act, H = act[~singular], H[~singular]
        if act.size == 0:
            break
        step = np.linalg.solve(H, G[act][:, :, None])[:, :, 0]
        xnorm = np.linalg.norm(X[act], axis=1)
        done = (gnorm[act] <= tol) & (np.linalg.norm(step, axis=1) <= 1e-9 * (1.0 + xnorm))
        status[act[done]] = _OK
        X[act[done]] -= step[done]  # the last step is rounding-level; taking it polishes the root
        act, step = act[~done], step[~done]
        if _ == max_iter or act.size == 0:
            continue
        t = np.ones(act.size)
        x_new = X[act] - step
        g_new = mixture.gradient(model, x_new)
        worse = np.linalg.norm(g_new, axis=1) > gnorm[act]
        for _h in range(30):
            if not worse.any():
                break
            t[worse] *= 0.5
            idx = np.flatnonzero(worse)
            x_new[idx] = X[act[idx]] - t[idx, None] * step[idx]
            g_new[idx] = mixture.gradient(model, x_new[idx])
            worse[idx] = np.linalg.norm(g_new[idx], axis=1) > gnorm[act[idx]]
        X[act], G[act] = x_new, g_new
        gnorm[act] = np.linalg.norm(g_new, axis=1)
        if region is not None:
            out = np.any(x_new < region[0], axis=1) | np.any(x_new > region[1], axis=1)
            status[act[out]] = _DIVERGED
    return X, status


def newton_refine(
    model: MixtureModel, seed_point, tol: float = 1e-10, max_iter: int = 200, region=None
) -> CriticalPoint:
    """Damped Newton iteration x <- x - Hf(x)^{-1} grad f(x).

    The full step is halved (at most 30 times) while it fails to reduce the
    gradient norm. Convergence requires both ``|grad f| <= tol`` and a Newton
    step that has collapsed to rounding level; the second condition keeps far
    tail points, where the gradient is tiny but no critical point exists, from
    being reported.

    Raises DegenerateStepError on a singular Hessian and NonConvergenceError when
    ``max_iter`` is exhausted or, if ``region=(lo, hi)`` is given, as soon as an
    iterate leaves that box.
    """
    X, status = _batch_newton(model, seed_point, tol, max_iter, region)
    if status[0] == _DEGENERATE:
        raise DegenerateStepError(f"singular Hessian at {X[0].tolist()}")
    if status[0] != _OK:
        raise NonConvergenceError(f"no convergence from {np.ravel(seed_point).tolist()}")
    return classify(model, X[0])


def ridgeline(model: MixtureModel, i: int, j: int, alpha: float) -> np.ndarray:
    """Point at parameter alpha on the ridgeline joining components i and j.

    x(alpha) = [(1-a) S_i + a S_j]^{-1} [(1-a) S_i mu_i + a S_j mu_j], S = Sigma^{-1}.
    """
    if i == j:
        raise ValueError("ridgeline needs two distinct components")
    if alpha == 0.0:
        return model.means[i].copy()
    if alpha == 1.0:
        return model.means[j].copy()
    Si, Sj = model.precisions[i], model.precisions[j]
    A = (1 - alpha) * Si + alpha * Sj
    b = (1 - alpha) * Si @ model.means[i] + alpha * Sj @ model.means[j]
    return np.linalg.solve(A, b)


def _seeds(model: MixtureModel, config: SearchConfig) -> list[np.ndarray]:
    seeds = [m.copy() for m in model.means]
    alphas = np.linspace(0.0, 1.0, config.ridge_seeds)
    for i, j in itertools.combinations(range(model.n_components), 2):
        seeds.extend(ridgeline(model, i, j, a) for a in alphas[1:-1])
    per_axis = config.grid_per_axis
    if per_axis is None:
        per_axis = 15 if model.dimension <= 2 else 0
    if per_axis > 0:
        lo, hi = bounding_box(model)
        axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.dimension)
        seeds.extend(grid)
    return seeds


def find_critical_points(model: MixtureModel, config: SearchConfig | None = None) -> CriticalSet:
    """Locate, deduplicate and classify critical points from many Newton seeds.

    Points are returned maxima first, then saddles, then minima; within a kind
    they are sorted lexicographically by location, so mode indices are stable.
    """
    config = config or SearchConfig()
    lo, hi = bounding_box(model)
    diag = float(np.linalg.norm(hi - lo))
    merge = config.merge_radius if config.merge_radius is not None else 1e-6 * diag
    region = (lo - (hi - lo), hi + (hi - lo))
    X, status = _batch_newton(model, np.array(_seeds(model, config)), config.tol, config.max_iter, region)
    inside = (status == _OK) & np.all(X >= lo, axis=1) & np.all(X <= hi, axis=1)
    found: list[CriticalPoint] = []
    for x in X[inside]:
        cp = classify(model, x)
        for k, other in enumerate(found):
            if np.linalg.norm(other.location - cp.location) <= merge:
                if cp.gradient_norm < other.gradient_norm:
                    found[k] = cp
                break
        else:
            found.append(cp)
    if not found:
        raise SearchError("no critical point found from any seed")
    found.sort(key=lambda p: (_KIND_ORDER[p.kind], tuple(p.location)))
    return CriticalSet(tuple(found))


def assert_morse(critical_set: CriticalSet, degeneracy_tol: float = 1e-8) -> MorseReport:
    """Check nondegeneracy: every Hessian eigenvalue must exceed degeneracy_tol in modulus."""
    violations = [
        f"point {p.location.tolist()} has min |eigenvalue| {p.min_abs_eigenvalue:.3e} <= {degeneracy_tol:g}"
        for p in critical_set.points
        if not p.min_abs_eigenvalue > degeneracy_tol
    ]
    return MorseReport(ok=not violations, violations=violations)


def write_critical_csv(critical_set: CriticalSet, path) -> None:
    """CSV columns: x1..xd, value, morse_index, kind, gradient_norm, min_abs_eigenvalue."""
    pts = critical_set.points
    d = len(pts[0].location) if pts else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(d)] + ["value", "morse_index", "kind", "gradient_norm", "min_abs_eigenvalue"])
        for p in pts:
            w.writerow(
                [repr(float(v)) for v in p.location]
                + [repr(p.value), p.morse_index, p.kind.value, repr(p.gradient_norm), repr(p.min_abs_eigenvalue)]
            )
