import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from morsecluster import mixture
from morsecluster.errors import InputError, UnsupportedDimensionError
from morsecluster.mixture import GaussianComponent, MixtureModel

from conftest import load, random_model


def test_component_validation():
    with pytest.raises(InputError):
        GaussianComponent([0.0], [[1.0]], 0.0)
    with pytest.raises(InputError):
        GaussianComponent([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], 1.0)
    with pytest.raises(InputError):
        GaussianComponent([0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]], 1.0)


def test_weights_must_sum_to_one():
    with pytest.raises(InputError):
        MixtureModel.univariate([0.5, 0.4], [0, 1], [1, 1])
    with pytest.raises(InputError):
        MixtureModel.from_arrays([0.5, 0.5], [[0.0], [0.0, 1.0]], [[[1.0]], np.eye(2)])


def test_density_standard_normal(std1d):
    assert mixture.density(std1d, 0.0) == pytest.approx(0.3989422804, abs=1e-10)


def test_density_twin_gaussians_2d_origin(twin_gaussians_2d):
    # bivariate normal oracle; the value is exp(-9/8) / (2 pi)
    oracle = 0.5 * stats.multivariate_normal([-1.5, 0], np.eye(2)).pdf([0, 0]) + 0.5 * stats.multivariate_normal(
        [1.5, 0], np.eye(2)
    ).pdf([0, 0])
    assert mixture.density(twin_gaussians_2d, [0.0, 0.0]) == pytest.approx(oracle, rel=1e-14)
    assert mixture.density(twin_gaussians_2d, [0.0, 0.0]) == pytest.approx(0.0516700449670616, rel=1e-12)


def test_density_far_tail_no_nan(twin_gaussians_2d):
    v = mixture.density(twin_gaussians_2d, [80.0, -60.0])
    assert np.isfinite(v) and 0 <= v < 1e-300
    lf = mixture.log_density(twin_gaussians_2d, [80.0, -60.0])
    assert np.isfinite(lf)
    g = mixture.gradient(twin_gaussians_2d, [80.0, -60.0])
    assert np.all(np.isfinite(g))


def test_density_matches_scipy_on_random_models():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d, k = rng.integers(1, 4), rng.integers(1, 5)
        m = random_model(rng, d, k)
        X = rng.normal(0, 3, (10, d))
        oracle = sum(
            w * stats.multivariate_normal(mu, S).pdf(X) for w, mu, S in zip(m.weights, m.means, m.covariances)
        )
        np.testing.assert_allclose(mixture.density(m, X), oracle, rtol=1e-12)


def test_dimension_mismatch(twin_gaussians_2d):
    with pytest.raises(InputError):
        mixture.density(twin_gaussians_2d, [0.0, 0.0, 0.0])
    with pytest.raises(InputError):
        mixture.gradient(twin_gaussians_2d, [1.0])


def test_gradient_zero_at_symmetric_points(twin_gaussians_2d):
    np.testing.assert_array_equal(mixture.gradient(load("single_gaussian_2d"), [0.0, 0.0]), [0.0, 0.0])
    assert np.linalg.norm(mixture.gradient(twin_gaussians_2d, [0.0, 0.0])) < 1e-17


def _fd_grad(m, x, eps=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (mixture.density(m, x + e) - mixture.density(m, x - e)) / (2 * eps)
    return g


def _fd_hess(m, x, eps=1e-5):
    H = np.zeros((len(x), len(x)))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = eps
        H[:, i] = (mixture.gradient(m, x + e) - mixture.gradient(m, x - e)) / (2 * eps)
    return H


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def test_gradient_hessian_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(1, 4))
        m = random_model(rng, d, int(rng.integers(1, 4)))
        x = m.means[rng.integers(m.n_components)] + rng.normal(0, 1, d)
        assert _rel(mixture.gradient(m, x), _fd_grad(m, x)) <= 1e-6
        assert _rel(mixture.hessian(m, x), _fd_hess(m, x)) <= 1e-5


def test_hessian_standard_normal_and_saddle(std1d, twin_gaussians_2d):
    assert mixture.hessian(std1d, 0.0)[0, 0] == pytest.approx(-0.3989422804014327, rel=1e-14)
    ev = np.linalg.eigvalsh(mixture.hessian(twin_gaussians_2d, [0.0, 0.0]))
    assert ev[0] < 0 < ev[1]


def test_hessian_symmetric():
    rng = np.random.default_rng(2)
    m = random_model(rng, 3, 3)
    H = mixture.hessian(m, rng.normal(size=(20, 3)))
    np.testing.assert_array_equal(H, np.transpose(H, (0, 2, 1)))


def test_cdf1d(std1d, bimodal1d):
    assert mixture.cdf1d(std1d, 0.0) == 0.5
    assert mixture.cdf1d(bimodal1d, 0.0) == pytest.approx(0.5, abs=1e-16)
    for m in (std1d, bimodal1d, load("trimodal_1d")):
        assert mixture.cdf1d(m, -1e9) <= 1e-15
        assert mixture.cdf1d(m, 1e9) >= 1 - 1e-15
        assert abs(mixture.cdf1d(m, 1e9) - mixture.cdf1d(m, -1e9) - 1) <= 1e-12
    with pytest.raises(UnsupportedDimensionError):
        mixture.cdf1d(load("twin_gaussians_2d"), 0.0)


def test_cdf1d_monotone_and_matches_quadrature():
    m = load("trimodal_1d")
    x = np.linspace(-10, 12, 5001)
    assert np.all(np.diff(mixture.cdf1d(m, x)) >= -1e-15)
    for a, b in [(-3, -1), (-1, 1.9), (2, 8), (7, 20)]:
        q, _ = integrate.quad(lambda t: float(mixture.density(m, t)), a, b, epsabs=1e-14, epsrel=1e-12)
        assert mixture.interval_mass(m, a, b) == pytest.approx(q, rel=1e-10, abs=1e-15)


def test_interval_mass_upper_tail_accuracy(std1d):
    # 1 - F(8) is about 6.2e-16; naive differencing would return 0
    assert mixture.interval_mass(std1d, 8.0, np.inf) == pytest.approx(stats.norm.sf(8.0), rel=1e-12)


def test_quantile_inverts_cdf():
    m = load("trimodal_1d")
    for q in (1e-6, 0.1, 0.5, 0.95, 0.999):
        assert mixture.cdf1d(m, mixture.quantile1d(m, q)) == pytest.approx(q, abs=1e-14)


def test_integrates_to_one_by_importance_sampling():
    # sampling from f itself makes the self-normalized weight f/f exactly 1
    m = load("quadrimodal")
    s = mixture.sample(m, 1000, 3)
    w = mixture.density(m, s.points) / mixture.density(m, s.points)
    assert w.mean() == 1.0
    # and a plain grid integral over the box
    xs = np.linspace(-5, 5, 401)
    X = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2)
    integral = mixture.density(m, X).sum() * (xs[1] - xs[0]) ** 2
    assert integral == pytest.approx(1.0, abs=1e-4)


def test_sample_reproducible_and_mean(std1d):
    a = mixture.sample(std1d, 1000, 42)
    b = mixture.sample(std1d, 1000, 42)
    np.testing.assert_array_equal(a.points, b.points)
    assert abs(a.points.mean()) <= 4 / np.sqrt(1000)
    assert not np.array_equal(a.points, mixture.sample(std1d, 1000, 43).points)


def test_sample_occupancy():
    m = MixtureModel.univariate([0.3, 0.7], [-5, 5], [1, 1])
    _, labels = mixture.sample_with_labels(m, 100_000, 11)
    c = np.bincount(labels, minlength=2)
    bound = 4 * np.sqrt(100_000 * 0.3 * 0.7)
    assert abs(c[0] - 30000) <= bound and abs(c[1] - 70000) <= bound


def test_sample_covariance():
    m = load("bimodal_iv")
    s = mixture.sample(m, 200_000, 5).points
    mu = (m.weights[:, None] * m.means).sum(0)
    cov = sum(w * (S + np.outer(a - mu, a - mu)) for w, a, S in zip(m.weights, m.means, m.covariances))
    np.testing.assert_allclose(s.mean(0), mu, atol=0.01)
    np.testing.assert_allclose(np.cov(s.T), cov, atol=0.02)


def test_posterior_label(twin_gaussians_2d):
    single = load("single_gaussian_2d")
    assert mixture.posterior_label(single, [5.0, -3.0]) == 0
    assert mixture.posterior_label(twin_gaussians_2d, [-2.0, 0.0]) == 0
    # equal weights and covariances: boundary is the perpendicular bisector x1 = 0
    rng = np.random.default_rng(3)
    X = rng.uniform(-4, 4, (500, 2))
    X = X[np.abs(X[:, 0]) > 1e-9]
    np.testing.assert_array_equal(mixture.posterior_label(twin_gaussians_2d, X), (X[:, 0] > 0).astype(int))


def test_posterior_label_scale_invariance():
    rng = np.random.default_rng(4)
    m = random_model(rng, 2, 4)
    c = 3.7
    w = m.weights * c
    m2 = MixtureModel.from_arrays(w / w.sum(), m.means, m.covariances)
    X = rng.normal(0, 3, (300, 2))
    np.testing.assert_array_equal(mixture.posterior_label(m, X), mixture.posterior_label(m2, X))


def test_voronoi_label():
    assert mixture.voronoi_label([[0.0, 0.0]], [7.0, 1.0]) == 0
    assert mixture.voronoi_label([[-1.0, 0.0], [1.0, 0.0]], [0.2, 5.0]) == 1
    assert mixture.voronoi_label([[-1.0, 0.0], [1.0, 0.0]], [0.0, 5.0]) == 0  # tie -> lowest index
    with pytest.raises(InputError):
        mixture.voronoi_label([], [0.0])
    rng = np.random.default_rng(5)
    C, X = rng.normal(size=(6, 3)), rng.normal(size=(200, 3))
    brute = [min(range(6), key=lambda k: np.sum((x - C[k]) ** 2)) for x in X]
    np.testing.assert_array_equal(mixture.voronoi_label(C, X), brute)


def test_json_roundtrip(tmp_path, twin_gaussians_2d):
    p = tmp_path / "m.json"
    mixture.save_model(twin_gaussians_2d, p)
    m = mixture.load_model(p)
    np.testing.assert_array_equal(m.means, twin_gaussians_2d.means)
    np.testing.assert_array_equal(m.covariances, twin_gaussians_2d.covariances)
    np.testing.assert_array_equal(m.weights, twin_gaussians_2d.weights)


def test_json_weights_renormalized(tmp_path):
    data = {"dimension": 1, "components": [{"weight": 1 / 3, "mean": [0], "covariance": [[1]]}] * 3}
    m = mixture.model_from_dict(data)
    assert abs(m.weights.sum() - 1.0) <= 1e-15
    bad = {"dimension": 1, "components": [{"weight": 0.5, "mean": [0], "covariance": [[1]]}]}
    with pytest.raises(InputError):
        mixture.model_from_dict(bad)
    p = tmp_path / "bad.json"
    p.write_text('{"dimension": 1, "compo')
    with pytest.raises(InputError):
        mixture.load_model(p)


def test_samples_csv_roundtrip(tmp_path, twin_gaussians_2d):
    s = mixture.sample(twin_gaussians_2d, 50, 1)
    mixture.write_samples_csv(s, tmp_path / "s.csv")
    np.testing.assert_array_equal(mixture.read_samples_csv(tmp_path / "s.csv").points, s.points)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.integers(0, 2**32 - 1))
def test_density_nonnegative(xs, seed):
    m = random_model(np.random.default_rng(seed), 1, 3)
    v = mixture.density(m, np.array(xs)[:, None])
    assert np.all(v >= 0) and np.all(np.isfinite(v))
