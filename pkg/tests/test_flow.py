import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from morsecluster import flow, mixture, morse
from morsecluster.errors import UnsupportedGeometryError
from morsecluster.flow import BOUNDARY, FlowConfig, Terminal

from conftest import load, random_model


@pytest.fixture(scope="module")
def twin():
    m = load("twin_gaussians_2d")
    return m, morse.find_critical_points(m)


def test_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(step_size=0)
    with pytest.raises(ValueError):
        FlowConfig(max_steps=0)
    with pytest.raises(ValueError):
        FlowConfig(saddle_perturbation=-1.0)


def test_ascend_starting_on_mode(twin):
    m, cs = twin
    x = cs.maxima[1].location + np.array([3e-5, 0.0])
    tr = flow.ascend(m, cs.maxima, x)
    assert tr.terminal is Terminal.CAPTURED and tr.mode == 1 and len(tr.points) == 1


def test_ascend_left_half_plane(twin):
    m, cs = twin
    tr = flow.ascend(m, cs.maxima, [-2.0, 1.0])
    assert tr.terminal is Terminal.CAPTURED
    assert cs.maxima[tr.mode].location[0] < 0


def test_ascend_on_separatrix_stagnates(twin):
    m, cs = twin
    tr = flow.ascend(m, cs.maxima, [0.0, 2.0])
    assert tr.terminal is Terminal.STAGNATED and tr.mode is None
    assert np.linalg.norm(tr.points[-1]) < 1e-6
    assert flow.assign_mode(m, cs.maxima, [0.0, 2.0]) == BOUNDARY


def test_single_basin():
    m = load("single_gaussian_2d")
    cs = morse.find_critical_points(m)
    X = np.array([[0.5, 0.5], [3.0, -2.0], [30.0, -40.0], [-7.0, 0.1]])
    np.testing.assert_array_equal(flow.assign_modes(m, cs.maxima, X), [0, 0, 0, 0])


def test_twin_gaussians_2d_half_planes(twin):
    m, cs = twin
    xs = np.linspace(-4, 4, 100)
    X = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2)
    X = X[np.abs(X[:, 0]) > 0.05]
    lab = flow.assign_modes(m, cs.maxima, X)
    np.testing.assert_array_equal(lab, (X[:, 0] > 0).astype(int))


def test_mode_maps_to_itself():
    for name in ("quadrimodal", "fountain", "trimodal_iii"):
        m = load(name)
        cs = morse.find_critical_points(m)
        locs = np.array([p.location for p in cs.maxima])
        np.testing.assert_array_equal(flow.assign_modes(m, cs.maxima, locs), np.arange(len(locs)))


def _true_minima_1d(m):
    # oracle: sign changes of f' on a dense grid, refined by Brent's method
    xs = np.linspace(-8, 10, 200001)
    g = mixture.gradient(m, xs[:, None])[:, 0]
    idx = np.flatnonzero((g[:-1] < 0) & (g[1:] > 0))
    return [optimize.brentq(lambda t: mixture.gradient(m, np.array([t]))[0], xs[i], xs[i + 1], xtol=1e-14) for i in idx]


def test_1d_labels_change_at_minima():
    m = load("trimodal_1d")
    cs = morse.find_critical_points(m)
    mins = _true_minima_1d(m)
    assert len(mins) == 2
    xs = np.sort(np.concatenate([np.linspace(-6, 9, 301), np.array(mins) - 1e-6, np.array(mins) + 1e-6]))
    lab = flow.assign_modes(m, cs.maxima, xs[:, None])
    expected = np.searchsorted(np.array(mins), xs)
    np.testing.assert_array_equal(lab, expected)


def test_1d_boundaries_match_minima_by_bisection():
    m = load("trimodal_1d")
    cs = morse.find_critical_points(m)
    for mn in (p.location[0] for p in cs.minima):
        a, b = mn - 0.5, mn + 0.5
        la = flow.assign_mode(m, cs.maxima, [a])
        while b - a > 1e-7:
            c = 0.5 * (a + b)
            if flow.assign_mode(m, cs.maxima, [c]) == la:
                a = c
            else:
                b = c
        assert abs(0.5 * (a + b) - mn) <= 1e-6


def test_trace_boundary_twin_gaussians_2d(twin):
    m, cs = twin
    branches = flow.trace_boundary(m, cs.saddles[0])
    assert len(branches) == 2
    for b in branches:
        assert np.max(np.abs(b.points[:, 0])) <= 1e-6
        assert b.terminal is Terminal.EXITED_BOX
    ys = np.concatenate([b.points[:, 1] for b in branches])
    assert ys.min() <= -4 and ys.max() >= 4
    # reflection x2 -> -x2 maps one branch onto the other
    a, b = branches
    assert len(a.points) == len(b.points)
    np.testing.assert_allclose(a.points * [1, -1], b.points, atol=1e-9)


def test_trace_boundary_quadrimodal():
    m = load("quadrimodal")
    cs = morse.find_critical_points(m)
    mins = np.array([p.location for p in cs.minima])
    lo, hi = morse.bounding_box(m)
    for s in cs.saddles:
        for br in flow.trace_boundary(m, s):
            np.testing.assert_array_equal(br.points[0], s.location)
            assert br.terminal in (Terminal.STAGNATED, Terminal.EXITED_BOX)
            end = br.points[-1]
            if br.terminal is Terminal.STAGNATED:
                assert np.min(np.linalg.norm(mins - end, axis=1)) < 1e-4
            else:
                assert np.any(end < lo) or np.any(end > hi)
            f = mixture.density(m, br.points)
            assert np.all(np.diff(f) <= 1e-9)


def test_trace_boundary_errors(twin):
    m, cs = twin
    with pytest.raises(UnsupportedGeometryError):
        flow.trace_boundary(m, cs.maxima[0])
    m1 = load("symmetric_bimodal_1d")
    cs1 = morse.find_critical_points(m1)
    with pytest.raises(UnsupportedGeometryError):
        flow.trace_boundary(m1, cs1.minima[0])


def test_labels_invariant_under_halved_step():
    for name in ("twin_gaussians_2d", "quadrimodal", "bimodal_iv"):
        m = load(name)
        cs = morse.find_critical_points(m)
        lo, hi = morse.bounding_box(m)
        axes = [np.linspace(a, b, 40) for a, b in zip(lo, hi)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
        a = flow.assign_modes(m, cs.maxima, X, FlowConfig())
        b = flow.assign_modes(m, cs.maxima, X, FlowConfig(step_size=5e-3))
        np.testing.assert_array_equal(a, b)


def test_boundary_cells_are_rare(twin):
    m, cs = twin
    xs = -4 + (np.arange(256) + 0.5) * 8 / 256
    X = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2)
    lab = flow.assign_modes(m, cs.maxima, X)
    assert np.mean(lab == BOUNDARY) <= 0.02


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ascent_density_nondecreasing(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 2, int(rng.integers(1, 4)))
    cs = morse.find_critical_points(m)
    x = m.means[0] + rng.normal(0, 2, 2)
    tr = flow.ascend(m, cs.maxima, x)
    f = mixture.density(m, tr.points)
    assert np.all(np.diff(f) >= -1e-9)
    assert tr.terminal in (Terminal.CAPTURED, Terminal.STAGNATED)


def test_step_limit():
    m = load("twin_gaussians_2d")
    cs = morse.find_critical_points(m)
    tr = flow.ascend(m, cs.maxima, [-3.9, 3.9], FlowConfig(max_steps=3))
    assert tr.terminal is Terminal.STEP_LIMIT
    assert flow.assign_mode(m, cs.maxima, [-3.9, 3.9], FlowConfig(max_steps=3)) == BOUNDARY


def test_polyline_csv(tmp_path, twin):
    m, cs = twin
    br = flow.trace_boundary(m, cs.saddles[0])
    p = tmp_path / "sep.csv"
    flow.write_polylines_csv(br, p)
    blocks = p.read_text().split("\n\n")
    assert len(blocks) == 2
    assert len(blocks[0].strip().splitlines()) == len(br[0].points)
