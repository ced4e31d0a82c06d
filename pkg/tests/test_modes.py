import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import fsolve

from levelset.geometry import upper_level_set
from levelset.kde import KDE
from levelset.modes import basin_adjacency, find_modes, gradient_scale, mean_shift, mean_shift_ascent


def two_clusters(rng, n=100, gap=8.0):
    a = rng.normal(0, 0.3, size=(n, 2))
    b = rng.normal(0, 0.3, size=(n, 2)) + [gap, 0.0]
    return np.vstack([a, b]), np.repeat([0, 1], n)


def dumbbell(rng, n=120):
    # two blobs joined by a dense bar of points
    a = rng.normal([-2, 0], 0.3, size=(n, 2))
    b = rng.normal([2, 0], 0.3, size=(n, 2))
    bar = np.stack([np.linspace(-2, 2, 81), np.zeros(81)], axis=1)
    return np.vstack([a, b, bar])


def test_start_at_mode_is_fixed_point():
    m = KDE([[1.5, -2.0]], 0.5)
    end, info = mean_shift_ascent(m, [1.5, -2.0])
    assert np.array_equal(end, [1.5, -2.0])
    assert info["converged"] and info["iterations"] == 1


def test_single_cluster_near_sample_mean(rng):
    data = rng.normal([1.0, 2.0], 0.3, size=(80, 2))
    h = 1.0
    m = KDE(data, h)
    end, info = mean_shift_ascent(m, data[0])
    assert info["converged"]

    def fixed_point(x):
        w = np.exp(-np.sum((data - x) ** 2, axis=1) / (2 * h * h))
        return w @ data / w.sum() - x

    root = fsolve(fixed_point, data.mean(axis=0), xtol=1e-13)
    np.testing.assert_allclose(end, root, atol=1e-5)
    assert np.linalg.norm(end - data.mean(axis=0)) <= h / 10


def test_density_nondecreasing(rng):
    data, _ = two_clusters(rng, 60, gap=3.0)
    m = KDE(data, 0.5)
    res = mean_shift(m, rng.uniform(-2, 5, size=(50, 2)), track=True)
    for row in res.densities:
        d = row[~np.isnan(row)]
        assert np.all(np.diff(d) >= -1e-12)


def test_nonconvergence_flagged(rng):
    data, _ = two_clusters(rng, 30, gap=2.0)
    m = KDE(data, 0.4)
    res = mean_shift(m, [[1.0, 3.0]], max_iter=2)
    assert not res.converged[0] and res.iterations[0] == 2
    assert np.all(np.isfinite(res.endpoints))


def test_two_clusters_two_modes(rng):
    data, truth = two_clusters(rng)
    m = KDE(data, 0.4)
    modes, basins = find_modes(m)
    assert len(modes) == 2
    # nearest-centroid partition as the oracle
    centres = np.stack([data[truth == k].mean(axis=0) for k in (0, 1)])
    oracle = np.argmin(np.linalg.norm(data[:, None] - centres[None], axis=-1), axis=1)
    # labels agree up to renaming
    mapping = {int(a): int(b) for a, b in zip(oracle, basins.labels)}
    assert len(set(mapping.values())) == 2
    assert np.array_equal(np.vectorize(mapping.get)(oracle), basins.labels)
    assert basins.converged.all()


def test_modes_are_critical_and_separated(rng):
    data, _ = two_clusters(rng, 80, gap=2.5)
    m = KDE(data, 0.35)
    modes, _ = find_modes(m)
    scale = gradient_scale(m)
    assert np.all(np.linalg.norm(m.gradient(modes.modes), axis=1) <= 1e-5 * scale)
    if len(modes) > 1:
        d = np.linalg.norm(modes.modes[:, None] - modes.modes[None], axis=-1)
        assert d[np.triu_indices(len(modes), 1)].min() > modes.merge_radius
    assert np.all(np.diff(modes.density) <= 0)


def test_infinite_merge_radius(rng):
    data, _ = two_clusters(rng, 40)
    modes, basins = find_modes(KDE(data, 0.4), merge_radius=math.inf)
    assert len(modes) == 1 and np.all(basins.labels == 0)


@settings(max_examples=10)
@given(seed=st.integers(0, 1000))
def test_mode_set_order_invariant(seed):
    rng = np.random.default_rng(seed)
    data = np.vstack([rng.normal(0, 0.4, (40, 2)), rng.normal(2.0, 0.4, (40, 2))])
    perm = rng.permutation(len(data))
    a, la = find_modes(KDE(data, 0.35))
    b, lb = find_modes(KDE(data[perm], 0.35))
    assert len(a) == len(b)
    np.testing.assert_allclose(a.modes, b.modes, atol=1e-5)
    assert np.array_equal(la.labels[perm], lb.labels)


def test_destination_stability(rng):
    data, _ = two_clusters(rng, 50, gap=3.0)
    m = KDE(data, 0.4)
    starts = rng.uniform(-1, 4, size=(40, 2))
    moved = starts + 1e-9 * rng.normal(size=starts.shape)
    _, a = find_modes(m, starts=starts)
    _, b = find_modes(m, starts=moved)
    assert np.array_equal(a.labels, b.labels)


def test_labels_partition_converged(rng):
    data, _ = two_clusters(rng, 50, gap=3.0)
    modes, basins = find_modes(KDE(data, 0.4))
    assert set(np.unique(basins.labels[basins.converged])) <= set(range(len(modes)))


def test_adjacency_single_basin(rng):
    data = rng.normal(size=(100, 2))
    m = KDE(data, 0.6)
    modes, basins = find_modes(m)
    assert len(modes) == 1
    high = upper_level_set(m.evaluate(data), data, 0.01, 0.6)
    assert basin_adjacency(basins, high, 0.6) == []


def test_dumbbell_one_edge(rng):
    data = dumbbell(rng)
    h = 0.35
    m = KDE(data, h)
    modes, basins = find_modes(m)
    dens = m.evaluate(data)
    level = 0.5 * float(np.min(dens[-81:]))
    high = upper_level_set(dens, data, level, h)
    edges = basin_adjacency(basins, high, h)
    # explicit cross-basin minimum distance between high-density members
    big = np.argsort(-modes.density)[:2]
    sel = high.index
    la = sel[basins.labels[sel] == big[0]]
    lb = sel[basins.labels[sel] == big[1]]
    gap = np.linalg.norm(data[la][:, None] - data[lb][None], axis=-1).min()
    assert gap <= h
    assert (int(min(big)), int(max(big))) in edges


def test_adjacency_cut_at_high_level(rng):
    data = dumbbell(rng)
    m = KDE(data, 0.35)
    modes, basins = find_modes(m)
    dens = m.evaluate(data)
    level = 0.5 * (dens[-41] + min(modes.density[:2]))
    high = upper_level_set(dens, data, level, 0.35)
    assert high.n_components >= 2
    assert basin_adjacency(basins, high, 0.35) == []


def test_edges_within_components(rng):
    data = np.vstack([dumbbell(rng), rng.normal([0, 6], 0.3, size=(60, 2))])
    m = KDE(data, 0.35)
    modes, basins = find_modes(m)
    dens = m.evaluate(data)
    high = upper_level_set(dens, data, 0.3 * dens.max(), 0.35)
    edges = basin_adjacency(basins, high, 0.35)
    comp_of = {}
    for lab, comp in zip(basins.labels[high.index], high.labels):
        comp_of.setdefault(int(lab), set()).add(int(comp))
    for a, b in edges:
        assert comp_of[a] & comp_of[b]


def test_serialization(rng):
    data, _ = two_clusters(rng, 20)
    modes, basins = find_modes(KDE(data, 0.4))
    md, bd = modes.to_dict(), basins.to_dict()
    assert len(md["modes"]) == len(md["density"]) == 2
    assert len(bd["labels"]) == len(data)
