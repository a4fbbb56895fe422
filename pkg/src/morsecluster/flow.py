"""Gradient-flow integration: domains of attraction and separatrices.

Points are moved along the normalized field ``+-grad f / |grad f|`` with an
embedded Dormand-Prince 5(4) pair and per-point adaptive steps, so a whole grid
or sample is integrated in one vectorized loop. Normalizing keeps the speed at
one in the tails, where the raw gradient is too small to make progress. The
direction is computed from ``grad log f``, which has the direction of
``grad f`` but does not underflow; likewise the stagnation test uses
``|grad log f| = |grad f| / f`` so that it only fires near genuine critical points.

A step is accepted only if its error estimate is within tolerance and the
density did not move against the flow direction, which makes density
monotone along every returned trajectory.

Points that stop at a critical point that is not a mode (saddle or minimum)
receive the ``BOUNDARY`` label: separatrices have probability zero, so which
cluster they join does not matter.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from . import mixture
from .errors import UnsupportedGeometryError
from .mixture import MixtureModel
from .morse import CriticalPoint, Kind, bbox_diagonal, bounding_box

BOUNDARY = -1


class Terminal(enum.Enum):
    CAPTURED = "CapturedByMode"
    STAGNATED = "StagnatedAtCritical"
    STEP_LIMIT = "StepLimit"
    EXITED_BOX = "ExitedBox"


_PENDING = -1
_CODES = {0: Terminal.CAPTURED, 1: Terminal.STAGNATED, 2: Terminal.STEP_LIMIT, 3: Terminal.EXITED_BOX}


@dataclass(frozen=True)
class FlowConfig:
    step_size: float = 1e-2
    grad_stop: float = 1e-9
    mode_capture_radius: float = 1e-4
    max_steps: int = 100_000
    saddle_perturbation: float | None = None  # default: 1e-4 x bounding-box diagonal
    error_tol: float = 1e-8

    def __post_init__(self):
        for name in ("step_size", "grad_stop", "mode_capture_radius", "error_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.saddle_perturbation is not None and not self.saddle_perturbation > 0:
            raise ValueError("saddle_perturbation must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass(frozen=True, eq=False)
class Trajectory:
    points: np.ndarray
    terminal: Terminal
    mode: int | None = None


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array(_A[6] + [0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_DELTA = 1e-12
_H_MIN = 1e-12
_LOGF_SLACK = 1e-12


def _field(model, X, sign):
    logf, glog = mixture.log_density_and_grad(model, X)
    gnorm = np.linalg.norm(glog, axis=1)
    return logf, sign * glog / np.maximum(gnorm, _DELTA)[:, None], gnorm


def _mode_array(modes) -> np.ndarray:
    locs = [m.location if isinstance(m, CriticalPoint) else np.asarray(m, dtype=float) for m in modes]
    return np.array(locs, dtype=float)


def _integrate(model, X0, sign, config: FlowConfig, modes=None, box=None, record=False):
    """Integrate every row of X0 until it terminates.

    Returns final positions, terminal codes, captured mode index (or -1) and,
    if ``record``, the list of visited points for each row.
    """
    X = np.array(X0, dtype=float).reshape(-1, model.dimension)
    n = len(X)
    M = np.empty((0, model.dimension)) if modes is None or len(modes) == 0 else modes
    diag = bbox_diagonal(model)
    h_max = 0.05 * diag
    h = np.full(n, min(config.step_size, h_max))
    code = np.full(n, _PENDING)
    mode_idx = np.full(n, -1)
    steps = np.zeros(n, dtype=np.int64)
    logf, K1, gnorm = _field(model, X, sign)
    paths = [[x.copy()] for x in X] if record else None

    def check(idx):
        if M.shape[0]:
            dist = np.linalg.norm(X[idx, None, :] - M[None, :, :], axis=2)
            near = dist.min(axis=1) <= config.mode_capture_radius
            hit = idx[near]
            code[hit] = 0
            mode_idx[hit] = np.argmin(dist[near], axis=1)
            idx = idx[~near]
        stag = (gnorm[idx] < config.grad_stop) | (h[idx] < _H_MIN)
        code[idx[stag]] = 1
        idx = idx[~stag]
        if box is not None:
            out = np.any(X[idx] < box[0], axis=1) | np.any(X[idx] > box[1], axis=1)
            code[idx[out]] = 3
            idx = idx[~out]
        code[idx[steps[idx] >= config.max_steps]] = 2

    check(np.arange(n))
    while True:
        act = np.flatnonzero(code == _PENDING)
        if act.size == 0:
            break
        x0, hh = X[act], h[act][:, None]
        K = [K1[act]]
        for s in range(1, 7):
            xs = x0 + hh * sum(a * k for a, k in zip(_A[s], K) if a != 0.0)
            lf, ks, gn = _field(model, xs, sign)
            K.append(ks)
        x_new, lf_new, gn_new = xs, lf, gn  # stage 7 is evaluated at the 5th-order solution
        err = hh[:, 0] * np.linalg.norm(sum(e * k for e, k in zip(_E, K) if e != 0.0), axis=1)
        if sign > 0:
            monotone = lf_new >= logf[act] - _LOGF_SLACK
        else:
            monotone = lf_new <= logf[act] + _LOGF_SLACK
        # Close to a critical point log f stops resolving progress, so also reject
        # steps whose end field points back along the step: they hopped across it.
        monotone &= np.einsum("ij,ij->i", K[6], x_new - x0) > 0
        accept = (err <= config.error_tol) & monotone

        with np.errstate(divide="ignore"):
            factor = np.clip(0.9 * (config.error_tol / err) ** 0.2, 0.2, 5.0)
        factor = np.where(np.isfinite(factor), factor, 5.0)
        factor = np.where(~monotone & (err <= config.error_tol), 0.5, factor)

        acc = act[accept]
        X[acc] = x_new[accept]
        K1[acc] = K[6][accept]
        logf[acc] = lf_new[accept]
        gnorm[acc] = gn_new[accept]
        h[act] = np.minimum(h[act] * factor, h_max)
        steps[act] += 1
        if record:
            for i in acc:
                paths[i].append(X[i].copy())
        check(act)

    return X, code, mode_idx, paths


def ascend(model: MixtureModel, modes, x, config: FlowConfig | None = None) -> Trajectory:
    """Follow the ascending flow from x until a mode captures it or it stalls."""
    config = config or FlowConfig()
    M = _mode_array(modes)
    _, code, idx, paths = _integrate(model, x, +1, config, modes=M, record=True)
    k = int(idx[0])
    return Trajectory(np.array(paths[0]), _CODES[int(code[0])], k if k >= 0 else None)


def assign_modes(model: MixtureModel, modes, X, config: FlowConfig | None = None) -> np.ndarray:
    """Vectorized :func:`assign_mode`: mode index per row, or BOUNDARY."""
    config = config or FlowConfig()
    M = _mode_array(modes)
    X = np.asarray(X, dtype=float).reshape(-1, model.dimension)
    _, code, idx, _ = _integrate(model, X, +1, config, modes=M)
    return np.where(code == 0, idx, BOUNDARY)


def assign_mode(model: MixtureModel, modes, x, config: FlowConfig | None = None) -> int:
    """Index of the mode whose domain of attraction contains x, or BOUNDARY."""
    return int(assign_modes(model, modes, np.reshape(x, (1, -1)), config)[0])


def trace_boundary(
    model: MixtureModel, saddle: CriticalPoint, config: FlowConfig | None = None, box=None
) -> tuple[Trajectory, Trajectory]:
    """Trace the separatrix through a saddle of a bivariate density.

    Two descending trajectories start at ``saddle +- eps * v``, v being the unit
    eigenvector of the negative Hessian eigenvalue. Each branch begins with the
    saddle itself and ends near a local minimum, on leaving ``box`` (default: the
    model's bounding box) or at the step limit.
    """
    config = config or FlowConfig()
    if model.dimension != 2:
        raise UnsupportedGeometryError(f"boundary tracing needs d = 2, model has d = {model.dimension}")
    if saddle.kind is not Kind.SADDLE or saddle.morse_index != 1:
        raise UnsupportedGeometryError("boundary tracing needs a saddle with exactly one negative eigenvalue")
    eps = config.saddle_perturbation if config.saddle_perturbation is not None else 1e-4 * bbox_diagonal(model)
    v = saddle.eigenvectors[:, np.argmin(saddle.eigenvalues)]
    v = v / np.linalg.norm(v)
    starts = np.array([saddle.location + eps * v, saddle.location - eps * v])
    box = bounding_box(model) if box is None else tuple(np.asarray(b, dtype=float) for b in box)
    _, code, _, paths = _integrate(model, starts, -1, config, box=box, record=True)
    return tuple(
        Trajectory(np.vstack([saddle.location, np.array(p)]), _CODES[int(c)]) for p, c in zip(paths, code)
    )


def write_polylines_csv(branches, path) -> None:
    """One point per row (x1..xd); a blank line separates consecutive branches."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, traj in enumerate(branches):
            if i:
                fh.write("\n")
            pts = traj.points if isinstance(traj, Trajectory) else np.asarray(traj)
            for p in pts:
                w.writerow([repr(float(v)) for v in p])
