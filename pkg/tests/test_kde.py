import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import trapezoid

from levelset.kde import KDE, GridSpec, GridTooLarge, SampleSet, kde_eval, kde_eval_grid, kde_gradient, silverman_bandwidth


def mixed_data(rng, n=200):
    a = rng.normal([0, 0], [0.4, 0.2], size=(n // 2, 2))
    b = rng.normal([1.5, 1.0], [0.3, 0.5], size=(n - n // 2, 2))
    return np.vstack([a, b])


def brute_density(data, h, x):
    # direct transcription of the estimator, one data point at a time
    d = data.shape[1]
    total = 0.0
    for xi in data:
        u2 = float(np.sum((x - xi) ** 2)) / h**2
        total += (2 * math.pi) ** (-d / 2) * math.exp(-u2 / 2)
    return total / (len(data) * h**d)


def test_silverman_unit_sd():
    rng = np.random.default_rng(0)
    x = rng.normal(size=100)
    x = (x - x.mean()) / x.std(ddof=1)
    expected = (4 / (3 * 100)) ** (1 / 5)
    assert silverman_bandwidth(x) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.421685, abs=1e-6)


def test_silverman_multivariate_uses_mean_sd():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 3)) * [1.0, 2.0, 4.0]
    sd = x.std(axis=0, ddof=1).mean()
    assert silverman_bandwidth(x) == pytest.approx(sd * (4 / (5 * 50)) ** (1 / 7), rel=1e-12)


def test_silverman_rejects_degenerate():
    with pytest.raises(ValueError):
        silverman_bandwidth([1.0])
    with pytest.raises(ValueError):
        silverman_bandwidth(np.ones((10, 2)))


@given(c=st.floats(0.01, 100))
def test_silverman_homogeneous(c):
    x = np.random.default_rng(2).normal(size=(40, 2))
    assert silverman_bandwidth(c * x) == pytest.approx(c * silverman_bandwidth(x), rel=1e-12)


def test_single_point_at_zero():
    m = KDE([[0.0]], 1.0)
    assert kde_eval(m, [0.0]) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)


def test_matches_direct_sum(rng):
    data = mixed_data(rng, 50)
    m = KDE(data, 0.3)
    xs = rng.normal(size=(10, 2))
    got = m.evaluate(xs)
    for x, g in zip(xs, got):
        assert g == pytest.approx(brute_density(data, 0.3, x), rel=1e-12)


def test_permutation_symmetry():
    a = KDE([[-1.0], [1.0]], 0.7)
    b = KDE([[1.0], [-1.0]], 0.7)
    assert kde_eval(a, [0.0]) == kde_eval(b, [0.0])


def test_dimension_mismatch():
    m = KDE(np.zeros((3, 2)), 1.0)
    with pytest.raises(ValueError):
        m.evaluate([0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        m.gradient(np.zeros((4, 3)))
    with pytest.raises(ValueError):
        m.evaluate_grid(GridSpec((0,), (1,), 5))


def test_bad_bandwidth():
    for h in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            KDE([[0.0]], h)


def test_integrates_to_one(rng):
    data = mixed_data(rng)
    m = KDE(data, 0.25)
    grid = GridSpec((-3, -3), (4.5, 4.5), 301)
    # pointwise evaluation, independent of the separable grid path
    vals = m.evaluate(grid.nodes()).reshape(grid.shape)
    ax = grid.axes()
    total = trapezoid(trapezoid(vals, ax[1], axis=1), ax[0])
    assert total == pytest.approx(1.0, abs=1e-3)


def test_gradient_zero_at_symmetric_points():
    assert np.all(kde_gradient(KDE([[0.0]], 1.0), [0.0]) == 0)
    np.testing.assert_allclose(kde_gradient(KDE([[-1.0], [1.0]], 0.5), [0.0]), [0.0], atol=1e-17)


def central_difference(m, x, step=1e-5):
    g = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (m.evaluate(x + e) - m.evaluate(x - e)) / (2 * step)
    return g


def test_gradient_finite_difference(rng):
    data = mixed_data(rng, 100)
    m = KDE(data, 0.3)
    xs = rng.uniform(-1, 2.5, size=(20, 2))
    grads = m.gradient(xs)
    for x, g in zip(xs, grads):
        fd = central_difference(m, x)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_gradient_shapes(rng):
    m = KDE(rng.normal(size=(10, 3)), 0.5)
    assert m.gradient(np.zeros(3)).shape == (3,)
    assert m.gradient(np.zeros((4, 3))).shape == (4, 3)


def test_grid_2x2_matches_pointwise(rng):
    m = KDE(mixed_data(rng, 30), 0.4)
    grid = GridSpec((-1, -2), (2, 1), 2)
    vals = kde_eval_grid(m, grid)
    assert vals.shape == (2, 2)
    for i, x in enumerate(grid.axes()[0]):
        for j, y in enumerate(grid.axes()[1]):
            assert vals[i, j] == pytest.approx(m.evaluate([x, y]), rel=1e-12)


def test_grid_row_major_layout(rng):
    m = KDE(rng.normal(size=(20, 3)), 0.6)
    grid = GridSpec((-1, -1, -1), (1, 2, 3), (3, 4, 5))
    vals = m.evaluate_grid(grid)
    np.testing.assert_allclose(vals.ravel(), m.evaluate(grid.nodes()), rtol=1e-12)


def test_grid_refinement_keeps_shared_nodes(rng):
    m = KDE(mixed_data(rng, 40), 0.3)
    coarse = m.evaluate_grid(GridSpec((-2, -2), (3, 3), 11))
    fine = m.evaluate_grid(GridSpec((-2, -2), (3, 3), 21))
    np.testing.assert_allclose(fine[::2, ::2], coarse, rtol=1e-12)


def test_grid_max_near_data_max(rng):
    data = rng.normal(size=(400, 2)) * [0.5, 0.8]
    m = KDE(data, 0.3)
    grid = GridSpec.around(data, 1.0, 256)
    top_grid = m.evaluate_grid(grid).max()
    top_data = m.evaluate(data).max()
    assert abs(top_grid - top_data) <= 0.01 * top_data


def test_grid_memory_budget():
    m = KDE(np.zeros((100, 2)), 1.0, memory_budget=10_000)
    with pytest.raises(GridTooLarge):
        m.evaluate_grid(GridSpec((0, 0), (1, 1), 200))


def test_weighted_grid_equals_refit(rng):
    data = mixed_data(rng, 30)
    counts = rng.multinomial(30, np.full(30, 1 / 30))
    grid = GridSpec((-1, -1), (2, 2), 9)
    refit = KDE(np.repeat(data, counts, axis=0), 0.3).evaluate_grid(grid)
    np.testing.assert_allclose(KDE(data, 0.3).evaluate_grid(grid, counts), refit, rtol=1e-12)


def test_sampleset_roundtrip():
    s = SampleSet(np.arange(6.0).reshape(3, 2), columns=("a", "b"))
    m = KDE(s, 1.0)
    assert m.n == 3 and m.dim == 2


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec((1,), (0,), 10)
    with pytest.raises(ValueError):
        GridSpec((0,), (1,), 1)
    assert GridSpec((0, 0), (1, 1), 5).resolution == (5, 5)


points = arrays(np.float64, (6, 2), elements=st.floats(-3, 3))


@given(data=points, x=arrays(np.float64, (2,), elements=st.floats(-4, 4)), shift=arrays(np.float64, (2,), elements=st.floats(-50, 50)))
def test_translation_equivariance(data, x, shift):
    m = KDE(data, 0.5)
    moved = KDE(data + shift, 0.5)
    a, b = m.evaluate(x), moved.evaluate(x + shift)
    assert b == pytest.approx(a, rel=1e-11, abs=1e-300)


@given(data=points, x=arrays(np.float64, (2,), elements=st.floats(-4, 4)), seed=st.integers(0, 2**32 - 1))
def test_permutation_invariance(data, x, seed):
    perm = np.random.default_rng(seed).permutation(len(data))
    assert KDE(data[perm], 0.4).evaluate(x) == pytest.approx(KDE(data, 0.4).evaluate(x), rel=1e-13, abs=1e-300)


@given(data=points, x=arrays(np.float64, (5, 2), elements=st.floats(-1e3, 1e3)))
def test_nonnegative_finite(data, x):
    v = KDE(data, 0.3).evaluate(x)
    assert np.all(np.isfinite(v)) and np.all(v >= 0)
