"""Gaussian mixture densities: values, derivatives, CDF, sampling, baseline labelings.

Every evaluation routine accepts either a single point of shape ``(d,)`` or a
batch of shape ``(n, d)`` and returns a result of matching leading shape.
Component terms are combined in log space with a max shift, so evaluation far in
the tails underflows cleanly to zero instead of producing NaN.

Indices (components, centers) are 0-based throughout the package.

Mixture identifiability is assumed by the posterior clustering but cannot be
checked algorithmically; any valid parameter list is accepted.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, optimize, special

from .errors import InputError, UnsupportedDimensionError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1:
            raise InputError("component mean must be a vector")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise InputError(f"covariance shape {cov.shape} does not match mean length {d}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise InputError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise InputError("covariance must be positive definite") from exc
        if not (self.weight > 0 and self.weight <= 1):
            raise InputError(f"component weight must lie in (0, 1], got {self.weight}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Weighted sum of Gaussian components on R^d.

    Cholesky factors, precision matrices and log normalizing constants are
    computed once at construction; the model is immutable afterwards and safe to
    share between threads.
    """

    components: tuple[GaussianComponent, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InputError("a mixture needs at least one component")
        d = comps[0].dimension
        if any(c.dimension != d for c in comps):
            raise InputError("all components must share the same dimension")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise InputError(f"weights must sum to 1 (got {total!r})")
        object.__setattr__(self, "components", comps)

        means = np.array([c.mean for c in comps])
        covs = np.array([c.covariance for c in comps])
        chols = np.linalg.cholesky(covs)
        eye = np.eye(d)
        precs = np.array([linalg.cho_solve((L, True), eye) for L in chols])
        precs = 0.5 * (precs + np.transpose(precs, (0, 2, 1)))
        logdet = 2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
        weights = np.array([c.weight for c in comps])
        self._cache.update(
            means=means,
            covs=covs,
            chols=chols,
            precs=precs,
            weights=weights,
            log_norm=np.log(weights) - 0.5 * (d * LOG_2PI + logdet),
        )

    @classmethod
    def from_arrays(cls, weights, means, covariances) -> "MixtureModel":
        try:
            means = np.asarray(means, dtype=float)
            covs = np.asarray(covariances, dtype=float)
        except ValueError as exc:
            raise InputError(f"ragged component arrays: {exc}") from exc
        if means.ndim == 1:
            means = means[:, None]
        if covs.ndim == 1:
            covs = covs[:, None, None]
        return cls(tuple(GaussianComponent(m, c, w) for w, m, c in zip(weights, means, covs)))

    @classmethod
    def univariate(cls, weights, means, sds) -> "MixtureModel":
        sds = np.asarray(sds, dtype=float)
        return cls.from_arrays(weights, np.asarray(means, dtype=float)[:, None], (sds**2)[:, None, None])

    @property
    def dimension(self) -> int:
        return self.components[0].dimension

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return self._cache["weights"]

    @property
    def means(self) -> np.ndarray:
        return self._cache["means"]

    @property
    def covariances(self) -> np.ndarray:
        return self._cache["covs"]

    @property
    def precisions(self) -> np.ndarray:
        return self._cache["precs"]

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "components": [
                {"weight": c.weight, "mean": c.mean.tolist(), "covariance": c.covariance.tolist()}
                for c in self.components
            ],
        }


@dataclass(frozen=True, eq=False)
class SampleSet:
    points: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InputError("a sample set needs at least one point")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# evaluation


def _as_points(model: MixtureModel, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    d = model.dimension
    if arr.ndim == 0 and d == 1:
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if arr.shape[0] != d:
            raise InputError(f"point has length {arr.shape[0]}, model dimension is {d}")
        return arr[None, :], True
    if arr.ndim == 2 and arr.shape[1] == d:
        return arr, False
    raise InputError(f"expected points of dimension {d}, got array of shape {arr.shape}")


def _component_terms(model: MixtureModel, X: np.ndarray):
    """Log of pi_k * phi_k(x) and Sigma_k^{-1}(x - mu_k) for every point/component."""
    c = model._cache
    diff = X[:, None, :] - c["means"][None, :, :]
    pdiff = np.einsum("kij,nkj->nki", c["precs"], diff)
    maha = np.einsum("nki,nki->nk", diff, pdiff)
    return c["log_norm"][None, :] - 0.5 * maha, pdiff


def log_density(model: MixtureModel, x):
    X, single = _as_points(model, x)
    logt, _ = _component_terms(model, X)
    out = special.logsumexp(logt, axis=1)
    return out[0] if single else out


def density(model: MixtureModel, x):
    """Mixture density f(x) = sum_k pi_k phi(x; mu_k, Sigma_k)."""
    return np.exp(log_density(model, x))


def log_density_and_grad(model: MixtureModel, X: np.ndarray):
    """Batch evaluation of log f and grad log f; never underflows.

    ``grad log f`` is the posterior-weighted average of ``-Sigma_k^{-1}(x-mu_k)``
    and has the same direction as ``grad f`` wherever f > 0.
    """
    logt, pdiff = _component_terms(model, X)
    logf = special.logsumexp(logt, axis=1)
    resp = np.exp(logt - logf[:, None])
    return logf, -np.einsum("nk,nki->ni", resp, pdiff)


def gradient(model: MixtureModel, x):
    """grad f(x) = -sum_k pi_k phi_k(x) Sigma_k^{-1}(x - mu_k)."""
    X, single = _as_points(model, x)
    logf, glog = log_density_and_grad(model, X)
    out = np.exp(logf)[:, None] * glog
    return out[0] if single else out


def hessian(model: MixtureModel, x):
    """Hf(x) = sum_k pi_k phi_k(x) [S_k (x-mu_k)(x-mu_k)^T S_k - S_k] with S_k = Sigma_k^{-1}."""
    X, single = _as_points(model, x)
    logt, pdiff = _component_terms(model, X)
    shift = logt.max(axis=1, keepdims=True)
    w = np.exp(logt - shift)
    outer = np.einsum("nk,nki,nkj->nij", w, pdiff, pdiff)
    prec = np.einsum("nk,kij->nij", w, model.precisions)
    H = np.exp(shift)[:, :, None] * (outer - prec)
    H = 0.5 * (H + np.transpose(H, (0, 2, 1)))
    return H[0] if single else H


# ---------------------------------------------------------------------------
# univariate distribution function


def _require_1d(model: MixtureModel):
    if model.dimension != 1:
        raise UnsupportedDimensionError(f"operation requires d = 1, model has d = {model.dimension}")


def _sds(model: MixtureModel) -> np.ndarray:
    return np.sqrt(model.covariances[:, 0, 0])


def cdf1d(model: MixtureModel, x):
    """F(x) = sum_k pi_k Phi((x - mu_k) / sigma_k) for a univariate mixture."""
    _require_1d(model)
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - model.means[:, 0]) / _sds(model)
    return np.clip(special.ndtr(z) @ model.weights, 0.0, 1.0)


def interval_mass(model: MixtureModel, lo, hi):
    """P((lo, hi)) for a univariate mixture, accurate in both tails.

    Uses upper-tail differences for components where the interval lies above
    the mean, which avoids cancellation in ``F(hi) - F(lo)`` near 1.
    """
    _require_1d(model)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    zl = (lo[..., None] - model.means[:, 0]) / _sds(model)
    zh = (hi[..., None] - model.means[:, 0]) / _sds(model)
    upper = zl > 0
    lower_part = special.ndtr(zh) - special.ndtr(zl)
    upper_part = special.ndtr(-zl) - special.ndtr(-zh)
    per = np.where(upper, upper_part, lower_part)
    return np.maximum(per @ model.weights, 0.0)


def quantile1d(model: MixtureModel, q: float) -> float:
    """Inverse of :func:`cdf1d`, by bracketing and Brent's method."""
    _require_1d(model)
    if not 0.0 < q < 1.0:
        raise InputError(f"quantile level must lie in (0, 1), got {q}")
    sds = _sds(model)
    lo = float(np.min(model.means[:, 0] - 40 * sds))
    hi = float(np.max(model.means[:, 0] + 40 * sds))
    return optimize.brentq(lambda t: float(cdf1d(model, t)) - q, lo, hi, xtol=1e-15, maxiter=500)


# ---------------------------------------------------------------------------
# sampling


def sample(model: MixtureModel, n: int, seed: int) -> SampleSet:
    """Draw n i.i.d. points.

    Uses numpy's PCG64 bit generator seeded with ``seed``: a component index is
    drawn with probability pi_k, then ``mu_k + L_k z`` with z standard normal
    (ziggurat) and L_k the Cholesky factor. Identical seeds give identical
    output for a given numpy version on any platform.
    """
    return sample_with_labels(model, n, seed)[0]


def sample_with_labels(model: MixtureModel, n: int, seed: int):
    """Like :func:`sample` but also returns the generating component of each point."""
    if n < 1:
        raise InputError("sample size must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = rng.choice(model.n_components, size=n, p=model.weights)
    z = rng.standard_normal((n, model.dimension))
    c = model._cache
    pts = c["means"][labels] + np.einsum("nij,nj->ni", c["chols"][labels], z)
    return SampleSet(pts, seed), labels


# ---------------------------------------------------------------------------
# baseline population clusterings


def posterior_label(model: MixtureModel, x):
    """Index of the component maximizing pi_k f_k(x); ties go to the lowest index."""
    X, single = _as_points(model, x)
    logt, _ = _component_terms(model, X)
    out = np.argmax(logt, axis=1)
    return int(out[0]) if single else out


def voronoi_label(centers: Sequence, x):
    """Index of the nearest center (Euclidean); ties go to the lowest index."""
    C = np.asarray(centers, dtype=float)
    if C.size == 0:
        raise InputError("voronoi_label needs at least one center")
    if C.ndim == 1:
        C = C[:, None]
    X = np.asarray(x, dtype=float)
    single = X.ndim <= 1
    X = X.reshape(-1, C.shape[1]) if single else X
    if X.shape[1] != C.shape[1]:
        raise InputError("point and center dimensions differ")
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    out = np.argmin(d2, axis=1)
    return int(out[0]) if single else out


# ---------------------------------------------------------------------------
# serialization


def model_from_dict(data: dict) -> MixtureModel:
    """Build a model from the JSON schema, renormalizing weights.

    Weights must sum to 1 within 1e-9; they are then rescaled to sum to 1 exactly.
    """
    try:
        d = int(data["dimension"])
        comps = data["components"]
        weights = np.array([float(c["weight"]) for c in comps])
        means = [np.asarray(c["mean"], dtype=float).reshape(d) for c in comps]
        covs = [np.asarray(c["covariance"], dtype=float).reshape(d, d) for c in comps]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed mixture model: {exc}") from exc
    if len(comps) == 0:
        raise InputError("mixture model has no components")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise InputError(f"weights sum to {weights.sum()!r}, expected 1")
    weights = weights / weights.sum()
    # exact renormalization: push the rounding residue into the largest weight
    k = int(np.argmax(weights))
    weights[k] = 1.0 - (weights.sum() - weights[k])
    return MixtureModel(tuple(GaussianComponent(m, c, w) for m, c, w in zip(means, covs, weights)))


def load_model(path) -> MixtureModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(data)


def save_model(model: MixtureModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def write_samples_csv(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in samples.points:
            writer.writerow([repr(float(v)) for v in row])


def read_samples_csv(path) -> SampleSet:
    pts = np.loadtxt(path, delimiter=",", ndmin=2)
    return SampleSet(pts)
