import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grnppg.adasyn import AdasynConfig, adasyn, largest_remainder
from grnppg.dataset import PulseDataset
from grnppg.errors import ConfigError, DataError


def toy(n_min, n_maj, seed=0, d=256):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.random((n_min, d)) * 0.9, rng.random((n_maj, d))])  # overlapping classes
    y = np.r_[np.ones(n_min, int), np.zeros(n_maj, int)]
    return PulseDataset(X, y, [f"r{i}" for i in range(n_min + n_maj)])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.integers(0, 5000))
def test_largest_remainder_sums_exactly(w, total):
    w = np.array(w)
    if w.sum() == 0:
        w = np.ones_like(w)
    counts = largest_remainder(w / w.sum(), total)
    assert counts.sum() == total and (counts >= 0).all()
    quotas = w / w.sum() * total
    assert np.all(np.abs(counts - quotas) < 1 + 1e-9)


@pytest.mark.parametrize("n_min,n_maj,beta", [(20, 90, 1.0), (30, 45, 0.5), (7, 40, 1.0)])
def test_synthetic_count_and_originals_untouched(n_min, n_maj, beta):
    ds = toy(n_min, n_maj)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out, info = adasyn(ds, AdasynConfig(beta=beta, seed=1), return_info=True)
    G = math.floor((n_maj - n_min) * beta + 0.5)
    assert len(out) == len(ds) + G == len(ds) + info.n_synthetic
    np.testing.assert_array_equal(out.X[: len(ds)], ds.X)
    assert not out.synthetic[: len(ds)].any() and out.synthetic[len(ds) :].all()
    assert (out.y[len(ds) :] == 1).all()
    assert info.allocation.sum() == G


def brute_neighbors(X, i, k, pool):
    d = sorted((float(np.sum((X[i] - X[j]) ** 2)), j) for j in pool if j != i)
    return [j for _, j in d[:k]]


def test_synthetic_rows_lie_on_seed_neighbor_segments():
    ds = toy(25, 80, seed=3)
    out, info = adasyn(ds, AdasynConfig(k_neighbors=5, seed=4), return_info=True)
    minority = np.flatnonzero(ds.y == 1)
    S = out.X[len(ds) :]
    for s, i, z, lam in zip(S, info.seed_index, info.partner_index, info.lam):
        assert z in brute_neighbors(ds.X, i, 5, minority)
        np.testing.assert_allclose(s, ds.X[i] + lam * (ds.X[z] - ds.X[i]), atol=1e-12)
        lo, hi = np.minimum(ds.X[i], ds.X[z]), np.maximum(ds.X[i], ds.X[z])
        assert ((s >= lo - 1e-12) & (s <= hi + 1e-12)).all()


def test_allocation_follows_majority_neighbor_ratio():
    ds = toy(25, 80, seed=5)
    _, info = adasyn(ds, AdasynConfig(k_neighbors=5, seed=0), return_info=True)
    minority = np.flatnonzero(ds.y == 1)
    r = np.array([sum(ds.y[j] == 0 for j in brute_neighbors(ds.X, i, 5, range(len(ds)))) / 5 for i in minority])
    assert r.sum() > 0
    quotas = r / r.sum() * 55
    assert np.all(np.abs(info.allocation - quotas) < 1)


def test_separable_classes_fall_back_to_uniform():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.random((10, 256)) * 0.01, rng.random((30, 256)) * 0.01 + 10])
    ds = PulseDataset(X, np.r_[np.ones(10, int), np.zeros(30, int)])
    _, info = adasyn(ds, AdasynConfig(seed=0), return_info=True)
    assert info.allocation.tolist() == [2] * 10


def test_deterministic_under_seed():
    ds = toy(15, 50)
    a = adasyn(ds, AdasynConfig(seed=9))
    b = adasyn(ds, AdasynConfig(seed=9))
    np.testing.assert_array_equal(a.X, b.X)


def test_balanced_input_adds_nothing():
    ds = toy(20, 20)
    assert len(adasyn(ds)) == 40


def test_errors_and_warnings():
    with pytest.raises(DataError):
        adasyn(PulseDataset(np.zeros((5, 256)), np.zeros(5)))
    with pytest.raises(ConfigError):
        adasyn(toy(10, 20), AdasynConfig(beta=1.5))
    with pytest.raises(DataError):
        adasyn(toy(1, 20))
    with pytest.warns(UserWarning, match="reducing k"):
        adasyn(toy(4, 20), AdasynConfig(k_neighbors=5))


def test_table_one_proportions():
    ds = toy(755, 3415, seed=1)
    out = adasyn(ds, AdasynConfig(beta=1.0, seed=0))
    assert int(out.synthetic.sum()) == 2660
