"""Whole-space clusterings: 1D breakpoint partitions, labeled grids, cluster masses.

Cluster indices are 0-based throughout; ``flow.BOUNDARY`` (-1) marks grid cells
whose ascent stalled on a separatrix.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from . import flow, mixture
from .errors import InputError, UnsupportedDimensionError
from .mixture import MixtureModel
from .morse import CriticalSet, bounding_box


@dataclass(frozen=True, eq=False)
class Clustering1D:
    """Clusters C_j = (m_{j-1}, m_j), j = 0..r-1, with m_{-1} = -inf and m_{r-1} = +inf."""

    breakpoints: np.ndarray

    def __post_init__(self):
        bp = np.atleast_1d(np.asarray(self.breakpoints, dtype=float))
        if bp.ndim != 1 or not np.all(np.isfinite(bp)):
            raise InputError("breakpoints must be a finite 1D vector")
        if np.any(np.diff(bp) <= 0):
            raise InputError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)

    @property
    def cluster_count(self) -> int:
        return len(self.breakpoints) + 1

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([[-np.inf], self.breakpoints, [np.inf]])

    def label(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            if x.shape[1] != 1:
                raise InputError("a 1D clustering can only label univariate points")
            x = x[:, 0]
        return np.searchsorted(self.breakpoints, x, side="left")


@dataclass(frozen=True, eq=False)
class GridClustering:
    """Mode labels at the cell centers of a regular grid over a box.

    ``labels`` has shape ``resolution``; entry [i, j, ...] belongs to the cell
    whose center is ``lower + (index + 1/2) * (upper - lower) / resolution``.
    """

    lower: np.ndarray
    upper: np.ndarray
    resolution: tuple[int, ...]
    labels: np.ndarray
    mode_locations: np.ndarray
    flow_config: flow.FlowConfig = field(default_factory=flow.FlowConfig)

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        res = tuple(int(r) for r in self.resolution)
        if not (lo.shape == hi.shape and len(res) == lo.size) or np.any(hi <= lo) or min(res) < 1:
            raise InputError("grid needs lower < upper and one positive resolution per axis")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(res)
        modes = np.asarray(self.mode_locations, dtype=float).reshape(-1, lo.size)
        if np.any((labels < flow.BOUNDARY) | (labels >= len(modes))):
            raise InputError("grid labels must be mode indices or the boundary sentinel")
        for k, v in (("lower", lo), ("upper", hi), ("resolution", res), ("labels", labels), ("mode_locations", modes)):
            object.__setattr__(self, k, v)

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def cluster_count(self) -> int:
        return len(self.mode_locations)

    def cell_centers(self) -> np.ndarray:
        axes = [lo + (np.arange(r) + 0.5) * (hi - lo) / r for lo, hi, r in zip(self.lower, self.upper, self.resolution)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dimension)

    def label(self, X) -> np.ndarray:
        """Label of the cell containing each point; points outside the box are an error."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dimension)
        out = np.any(X < self.lower, axis=1) | np.any(X > self.upper, axis=1)
        if out.any():
            bad = X[np.argmax(out)]
            raise InputError(f"point {bad.tolist()} lies outside the grid box and cannot be labeled")
        res = np.array(self.resolution)
        idx = np.floor((X - self.lower) / (self.upper - self.lower) * res).astype(np.int64)
        idx = np.clip(idx, 0, res - 1)
        return self.labels[tuple(idx.T)]


@dataclass(frozen=True)
class ExactCdf:
    name = "ExactCdf"


@dataclass(frozen=True)
class MonteCarlo:
    n: int = 100_000
    seed: int = 0
    name = "MonteCarlo"

    def __post_init__(self):
        if self.n < 1:
            raise InputError("Monte Carlo needs at least one sample")


@dataclass(frozen=True, eq=False)
class ClusterMasses:
    masses: np.ndarray
    method: ExactCdf | MonteCarlo
    standard_errors: np.ndarray | None = None


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str]
    notes: list[str]


# ---------------------------------------------------------------------------
# construction


def _minima_1d(dfun, lo: float, hi: float, n_grid: int, xtol: float) -> np.ndarray:
    """Points in [lo, hi] where dfun changes sign from - to +."""
    x = np.linspace(lo, hi, n_grid)
    s = np.sign(dfun(x))
    found = []
    for i in range(n_grid - 1):
        if s[i] < 0 and s[i + 1] > 0:
            found.append(optimize.bisect(lambda t: float(dfun(np.array([t]))[0]), x[i], x[i + 1], xtol=xtol))
        elif s[i] == 0 and i > 0 and s[i - 1] < 0 and s[i + 1] > 0:
            found.append(float(x[i]))
    return np.array(sorted(found))


def modal_partition_1d(model: MixtureModel, search_box=None, n_grid: int = 2048) -> Clustering1D:
    """Breakpoints at the local minima of a univariate mixture density."""
    if model.dimension != 1:
        raise UnsupportedDimensionError(f"modal_partition_1d needs d = 1, model has d = {model.dimension}")
    if search_box is None:
        lo, hi = (float(v[0]) for v in bounding_box(model))
    else:
        lo, hi = map(float, search_box)

    def dlog(x):  # same sign as f' and no underflow in the tails
        return mixture.log_density_and_grad(model, np.asarray(x, dtype=float).reshape(-1, 1))[1][:, 0]

    return Clustering1D(_minima_1d(dlog, lo, hi, n_grid, 1e-12))


def _grid_centers(lower, upper, resolution) -> np.ndarray:
    axes = [lo + (np.arange(r) + 0.5) * (hi - lo) / r for lo, hi, r in zip(lower, upper, resolution)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(resolution))


def label_points(model: MixtureModel, modes, X, flow_config=None, threads: int | None = None) -> np.ndarray:
    """flow.assign_modes over chunks of X, optionally in a thread pool.

    Each point is integrated independently, so the result does not depend on
    the chunking or the number of threads.
    """
    X = np.asarray(X, dtype=float).reshape(-1, model.dimension)
    threads = max(1, int(threads or 1))
    if threads == 1 or len(X) < 2 * threads:
        return flow.assign_modes(model, modes, X, flow_config)
    chunks = np.array_split(X, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: flow.assign_modes(model, modes, c, flow_config), chunks))
    return np.concatenate(parts)


def modal_partition_grid(
    model: MixtureModel,
    critical_set: CriticalSet,
    bbox=None,
    resolution=None,
    flow_config: flow.FlowConfig | None = None,
    threads: int | None = None,
) -> GridClustering:
    """Label every cell center of a grid by the mode its ascent reaches."""
    modes = critical_set.maxima
    if not modes:
        raise InputError("the critical set contains no local maximum")
    flow_config = flow_config or flow.FlowConfig()
    lo, hi = bounding_box(model) if bbox is None else (np.atleast_1d(np.asarray(b, dtype=float)) for b in bbox)
    if resolution is None:
        resolution = (128,) * model.dimension
    resolution = tuple(int(r) for r in np.broadcast_to(resolution, (model.dimension,)))
    centers = _grid_centers(lo, hi, resolution)
    labels = label_points(model, modes, centers, flow_config, threads)
    locs = np.array([m.location for m in modes])
    return GridClustering(lo, hi, resolution, labels.reshape(resolution), locs, flow_config)


# ---------------------------------------------------------------------------
# masses


def labels_for(clustering, X, model: MixtureModel | None = None, threads: int | None = None) -> np.ndarray:
    """Cluster labels of sample points.

    A grid clustering labels points by the flow itself (its cells are only a
    picture of the basins), so any point can be labeled.
    """
    if isinstance(clustering, Clustering1D):
        return clustering.label(X)
    if isinstance(clustering, GridClustering):
        if model is None:
            raise InputError("labeling points with a grid clustering needs the model")
        return label_points(model, clustering.mode_locations, X, clustering.flow_config, threads)
    raise InputError(f"unsupported clustering type {type(clustering).__name__}")


def cluster_masses(clustering, model: MixtureModel, method=None, threads: int | None = None) -> ClusterMasses:
    """P(C_j) for every cluster.

    ExactCdf (1D only) uses the mixture CDF; MonteCarlo samples from the model
    and reports label frequencies with binomial standard errors. Boundary
    labels count towards no cluster.
    """
    if method is None:
        method = ExactCdf() if isinstance(clustering, Clustering1D) else MonteCarlo()
    if isinstance(method, ExactCdf):
        if not isinstance(clustering, Clustering1D):
            raise InputError("exact masses are only available for 1D clusterings")
        e = clustering.edges
        return ClusterMasses(mixture.interval_mass(model, e[:-1], e[1:]), method)
    if isinstance(method, MonteCarlo):
        pts = mixture.sample(model, method.n, method.seed).points
        lab = labels_for(clustering, pts, model, threads)
        counts = np.bincount(lab[lab >= 0], minlength=clustering.cluster_count).astype(float)
        p = counts / method.n
        return ClusterMasses(p, method, np.sqrt(p * (1 - p) / method.n))
    raise InputError(f"unknown mass method {method!r}")


def validate_clustering(masses: ClusterMasses) -> ValidationReport:
    """Check positivity of every mass and total mass 1 within the method's tolerance."""
    m = np.asarray(masses.masses, dtype=float)
    violations = [f"cluster {i + 1} has zero mass" for i in np.flatnonzero(~(m > 0))]
    if isinstance(masses.method, MonteCarlo) and masses.standard_errors is not None:
        tol = max(4.0 * float(np.sqrt(np.sum(np.square(masses.standard_errors)))), 1.0 / masses.method.n)
    else:
        tol = 1e-6
    total = float(m.sum())
    if abs(total - 1.0) > tol:
        violations.append(f"total mass {total:.6g} differs from 1 by more than {tol:.3g}")
    notes = ["disjointness holds by construction: each point receives exactly one label"]
    return ValidationReport(not violations, violations, notes)


# ---------------------------------------------------------------------------
# serialization


def clustering_to_json(c: Clustering1D) -> dict:
    return {"breakpoints": [float(b) for b in c.breakpoints]}


def write_clustering_1d(c: Clustering1D, path) -> None:
    Path(path).write_text(json.dumps(clustering_to_json(c), indent=2) + "\n")


def write_grid_clustering(g: GridClustering, json_path, csv_path=None) -> None:
    """JSON header plus a CSV label matrix (rows follow the first axis)."""
    json_path = Path(json_path)
    csv_path = Path(csv_path) if csv_path is not None else json_path.with_suffix(".labels.csv")
    header = {
        "bbox": {"lower": g.lower.tolist(), "upper": g.upper.tolist()},
        "resolution": list(g.resolution),
        "mode_locations": g.mode_locations.tolist(),
        "labels": csv_path.name,
    }
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in g.labels.reshape(g.resolution[0], -1):
            w.writerow(row.tolist())


def clustering_from_dict(data: dict, model: MixtureModel | None = None, base_dir=None):
    """Parse a clustering file.

    Accepted forms: {"breakpoints": [...]} (1D), {"masses": [...]} (1D, breakpoints
    at the model quantiles of the cumulative masses) and the grid header written
    by :func:`write_grid_clustering`.
    """
    try:
        if "breakpoints" in data:
            return Clustering1D(np.asarray(data["breakpoints"], dtype=float))
        if "masses" in data:
            if model is None or model.dimension != 1:
                raise InputError("a mass-specified clustering needs a univariate model")
            w = np.asarray(data["masses"], dtype=float)
            if w.ndim != 1 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
                raise InputError("cluster masses must be positive and sum to 1")
            cum = np.cumsum(w)[:-1]
            return Clustering1D(np.array([mixture.quantile1d(model, q) for q in cum]))
        if "resolution" in data:
            res = tuple(int(r) for r in data["resolution"])
            csv_path = Path(base_dir or ".") / data["labels"]
            labels = np.loadtxt(csv_path, delimiter=",", dtype=np.int64, ndmin=2)
            return GridClustering(
                data["bbox"]["lower"], data["bbox"]["upper"], res, labels.reshape(res), data["mode_locations"]
            )
    except (KeyError, TypeError, ValueError, OSError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed clustering: {exc}") from exc
    raise InputError("unrecognized clustering file")


def load_clustering(path, model: MixtureModel | None = None):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    return clustering_from_dict(data, model, path.parent)
