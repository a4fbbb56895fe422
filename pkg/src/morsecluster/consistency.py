"""Kernel density estimation and the modal-clustering consistency experiment.

For a univariate mixture with known modal clustering, repeated samples of
growing size are clustered through the local minima of a Gaussian KDE, and
the estimated clusterings are compared with the truth in d_P and d_H.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import distances, mixture, partition
from .errors import DegenerateMinimumError, InputError, UnsupportedDimensionError
from .mixture import MixtureModel
from .partition import Clustering1D

_SQRT_2PI = np.sqrt(2.0 * np.pi)
_CHUNK = 1 << 22  # evaluation points x data points per block


@dataclass(frozen=True, eq=False)
class KdeModel:
    data: np.ndarray
    bandwidth: float

    def __post_init__(self):
        x = np.asarray(self.data, dtype=float).ravel()
        if x.size < 1 or not np.all(np.isfinite(x)):
            raise InputError("a KDE needs at least one finite data point")
        if not self.bandwidth > 0:
            raise InputError("bandwidth must be positive")
        object.__setattr__(self, "data", x)

    @property
    def n(self) -> int:
        return self.data.size


def kde_eval(kde: KdeModel, x, derivative_order: int = 0):
    """(1 / (n h^(1+j))) sum_i K^(j)((x - X_i) / h), K the standard normal density.

    K'(u) = -u phi(u) and K''(u) = (u^2 - 1) phi(u).
    """
    if derivative_order not in (0, 1, 2):
        raise InputError(f"derivative order must be 0, 1 or 2, got {derivative_order}")
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    h = kde.bandwidth
    out = np.empty(flat.size)
    step = max(1, _CHUNK // kde.n)
    for s in range(0, flat.size, step):
        u = (flat[s : s + step, None] - kde.data[None, :]) / h
        phi = np.exp(-0.5 * u * u)
        if derivative_order == 1:
            phi *= -u
        elif derivative_order == 2:
            phi *= u * u - 1.0
        out[s : s + step] = phi.sum(axis=1)
    out /= kde.n * h ** (1 + derivative_order) * _SQRT_2PI
    return out.reshape(x.shape) if x.ndim else float(out[0])


def kde_modal_partition(kde: KdeModel, search_box=None, n_grid: int = 4096) -> Clustering1D:
    """Breakpoints at the local minima of the KDE (f' from - to +, f'' > 0)."""
    if search_box is None:
        lo = float(kde.data.min() - 3 * kde.bandwidth)
        hi = float(kde.data.max() + 3 * kde.bandwidth)
    else:
        lo, hi = map(float, search_box)
    cand = partition._minima_1d(lambda t: kde_eval(kde, t, 1), lo, hi, n_grid, 1e-12)
    if cand.size:
        cand = cand[kde_eval(kde, cand, 2) > 0]
    return Clustering1D(cand)


# ---------------------------------------------------------------------------
# bandwidth rules

# normal-reference constant with the slower n^(-1/7) rate suited to derivative estimation
DEFAULT_C = 1.06


@dataclass(frozen=True)
class PowerLaw:
    """h = c * s * n^exponent with s the sample standard deviation."""

    c: float = DEFAULT_C
    exponent: float = -1.0 / 7.0

    def bandwidth(self, data) -> float:
        s = float(np.std(data, ddof=1)) if len(data) > 1 else 0.0
        return self.c * (s if s > 0 else 1.0) * len(data) ** self.exponent


@dataclass(frozen=True)
class Fixed:
    h: float

    def bandwidth(self, data) -> float:
        return self.h


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class Losses:
    d_P: float
    d_H: float
    localized: bool


def _increments(est: Clustering1D, truth: Clustering1D, model: MixtureModel) -> np.ndarray:
    m, mh = truth.breakpoints, est.breakpoints
    return mixture.interval_mass(model, np.minimum(m, mh), np.maximum(m, mh))


def is_localized(est: Clustering1D, truth: Clustering1D, model: MixtureModel) -> bool:
    """Sufficient condition for the closed forms below.

    Equal counts and every |F(m_hat_j) - F(m_j)| below a quarter of the
    smallest true cluster mass; then each cluster's best match is its own
    counterpart and the identity assignment is optimal.
    """
    if est.cluster_count != truth.cluster_count:
        return False
    if truth.cluster_count == 1:
        return True
    masses = partition.cluster_masses(truth, model).masses
    return bool(np.max(_increments(est, truth, model)) < 0.25 * np.min(masses))


def losses_vs_truth(est: Clustering1D, truth: Clustering1D, model: MixtureModel) -> Losses:
    """(d_P, d_H) between an estimated and the true 1D clustering.

    In the localized regime d_P = sum_j |dF_j| and d_H = max over clusters of
    |dF_{j-1}| + |dF_j| (cluster j loses or gains mass at both of its ends;
    dF_0 = dF_r = 0). Otherwise the general padded path is used.
    """
    if is_localized(est, truth, model):
        inc = _increments(est, truth, model)
        ends = np.concatenate([[0.0], inc, [0.0]])
        return Losses(float(inc.sum()), float(np.max(ends[:-1] + ends[1:])), True)
    M = distances.mass_matrix(est, truth, model)
    return Losses(distances.dP_from_matrix(M).value, distances.dH_from_matrix(M).value, False)


def asymptotic_terms(model: MixtureModel, kde: KdeModel | None, truth: Clustering1D, est: Clustering1D) -> np.ndarray:
    """Rows (|F(m_hat_j) - F(m_j)|, f(m_j)|m_hat_j - m_j|, f(m_j)/f''(m_j) |f_hat'(m_j)|).

    The last column is NaN when no KDE is given.
    """
    if est.cluster_count != truth.cluster_count:
        raise InputError("asymptotic terms need matching cluster counts")
    m, mh = truth.breakpoints, est.breakpoints
    if m.size == 0:
        return np.zeros((0, 3))
    f = mixture.density(model, m[:, None])
    f2 = mixture.hessian(model, m[:, None])[:, 0, 0]
    if np.any(f2 < 1e-12):
        raise DegenerateMinimumError(f"second derivative {f2.min():.3e} at a true minimum")
    exact = _increments(est, truth, model)
    first = f * np.abs(mh - m)
    second = f / f2 * np.abs(kde_eval(kde, m, 1)) if kde is not None else np.full(m.size, np.nan)
    return np.column_stack([exact, first, second])


# ---------------------------------------------------------------------------
# experiment


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    model: MixtureModel
    sample_sizes: tuple[int, ...]
    replicates: int
    bandwidth_rule: PowerLaw | Fixed = PowerLaw()
    base_seed: int = 0

    def __post_init__(self):
        if self.model.dimension != 1:
            raise UnsupportedDimensionError("the consistency experiment needs a univariate model")
        sizes = tuple(int(n) for n in self.sample_sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 2:
            raise InputError("sample sizes must be strictly increasing and at least 2")
        if self.replicates < 1:
            raise InputError("replicates must be at least 1")
        object.__setattr__(self, "sample_sizes", sizes)


@dataclass(frozen=True, eq=False)
class ConsistencyRecord:
    n: int
    replicate: int
    seed: int
    est_minima: np.ndarray
    cluster_count: int
    d_P: float
    d_H: float
    approx_terms: np.ndarray | None


@dataclass(frozen=True)
class SummaryRow:
    n: int
    frac_correct_count: float
    mean_dP: float
    mean_dH: float
    median_dP: float
    median_dH: float


def replicate_seed(base_seed: int, n_index: int, replicate: int) -> int:
    return int(np.random.SeedSequence((base_seed, n_index, replicate)).generate_state(1, np.uint64)[0])


def _one(config: ExperimentConfig, truth: Clustering1D, n_index: int, rep: int) -> ConsistencyRecord:
    n = config.sample_sizes[n_index]
    seed = replicate_seed(config.base_seed, n_index, rep)
    data = mixture.sample(config.model, n, seed).points[:, 0]
    kde = KdeModel(data, config.bandwidth_rule.bandwidth(data))
    est = kde_modal_partition(kde)
    loss = losses_vs_truth(est, truth, config.model)
    terms = asymptotic_terms(config.model, kde, truth, est) if est.cluster_count == truth.cluster_count else None
    return ConsistencyRecord(n, rep, seed, est.breakpoints, est.cluster_count, loss.d_P, loss.d_H, terms)


def summarize(records, truth_count: int) -> list[SummaryRow]:
    rows = []
    for n in sorted({r.n for r in records}):
        rs = [r for r in records if r.n == n]
        dP = np.array([r.d_P for r in rs])
        dH = np.array([r.d_H for r in rs])
        frac = float(np.mean([r.cluster_count == truth_count for r in rs]))
        rows.append(SummaryRow(n, frac, float(dP.mean()), float(dH.mean()), float(np.median(dP)), float(np.median(dH))))
    return rows


def run_consistency(config: ExperimentConfig, threads: int | None = None):
    """All (n, replicate) records in (n, replicate) order plus the per-n summary."""
    truth = partition.modal_partition_1d(config.model)
    jobs = [(i, k) for i in range(len(config.sample_sizes)) for k in range(config.replicates)]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda j: _one(config, truth, *j), jobs))
    else:
        records = [_one(config, truth, *j) for j in jobs]
    return records, summarize(records, truth.cluster_count), truth


# ---------------------------------------------------------------------------
# I/O


def config_from_dict(data: dict, base_dir=None) -> ExperimentConfig:
    try:
        if "model" in data:
            model = mixture.model_from_dict(data["model"])
        else:
            model = mixture.load_model(Path(base_dir or ".") / data["model_file"])
        bw = data.get("bandwidth", {"rule": "power_law"})
        rule = bw.get("rule", "power_law")
        if rule == "power_law":
            bandwidth = PowerLaw(float(bw.get("c", DEFAULT_C)), float(bw.get("exponent", -1.0 / 7.0)))
        elif rule == "fixed":
            bandwidth = Fixed(float(bw["h"]))
        else:
            raise InputError(f"unknown bandwidth rule {rule!r}")
        return ExperimentConfig(
            model, tuple(data["sample_sizes"]), int(data["replicates"]), bandwidth, int(data.get("base_seed", 0))
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed experiment config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data, path.parent)


def _fmt(v) -> str:
    return repr(float(v))


def write_records_csv(records, truth: Clustering1D, path) -> None:
    k = truth.cluster_count - 1
    head = ["n", "replicate", "seed", "cluster_count", "d_P", "d_H"]
    for j in range(1, k + 1):
        head += [f"exact_{j}", f"approx_f_{j}", f"approx_fprime_{j}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for r in records:
            row = [r.n, r.replicate, r.seed, r.cluster_count, _fmt(r.d_P), _fmt(r.d_H)]
            if r.approx_terms is None:
                row += [""] * (3 * k)
            else:
                row += [_fmt(v) for v in r.approx_terms.ravel()]
            w.writerow(row)


def write_summary_csv(summary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "frac_correct_count", "mean_dP", "mean_dH", "median_dP", "median_dH"])
        for s in summary:
            w.writerow([s.n, _fmt(s.frac_correct_count), _fmt(s.mean_dP), _fmt(s.mean_dH), _fmt(s.median_dP), _fmt(s.median_dH)])
