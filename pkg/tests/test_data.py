import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dppairwise.data import (
    Bounds,
    BoundsError,
    Dataset,
    DatasetParseError,
    ModelParams,
    Sample,
    SyntheticDistribution,
    gen_synthetic,
    load_dataset,
    pair_indices,
    pair_stream,
    save_dataset,
    with_outlier,
)


def test_load_three_rows(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x0,x1,y\n0.1,0.2,1\n-0.3,0.0,-1\n0.5,0.5,0.25\n")
    D = load_dataset(path, Bounds(2))
    assert D.n == 3 and D.d == 2
    np.testing.assert_array_equal(D.X, [[0.1, 0.2], [-0.3, 0.0], [0.5, 0.5]])
    np.testing.assert_array_equal(D.y, [1, -1, 0.25])


def test_load_nan_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x0,x1,y\n0.1,0.2,1\nNaN,0.0,-1\n")
    with pytest.raises(DatasetParseError) as err:
        load_dataset(path, Bounds(2))
    assert err.value.row == 1


def test_load_malformed_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x0,x1,y\n0.1,0.2,1\n0.1,abc,1\n0.3,0.2\n")
    with pytest.raises(DatasetParseError) as err:
        load_dataset(path, Bounds(2))
    assert err.value.row == 1


def test_load_bound_violation_names_sample(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x0,x1,y\n0.1,0.2,1\n0.9,0.9,1\n")
    with pytest.raises(BoundsError) as err:
        load_dataset(path, Bounds(2))
    assert err.value.index == 1


def test_round_trip_bitwise(tmp_path):
    D = gen_synthetic("ranking", 40, 3, seed=5)
    path = tmp_path / "r.csv"
    save_dataset(D, path)
    E = load_dataset(path, Bounds(3))
    assert E == D
    assert E.X.tobytes() == D.X.tobytes() and E.y.tobytes() == D.y.tobytes()


def test_gen_synthetic_deterministic():
    a = gen_synthetic("ranking", 10, 3, seed=7)
    b = gen_synthetic("ranking", 10, 3, seed=7)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert gen_synthetic("ranking", 10, 3, seed=8) != a


def test_gen_synthetic_metric_labels():
    D = gen_synthetic("metric", 100, 2, seed=1)
    assert set(np.unique(D.y)) <= {-1.0, 1.0}


def test_gen_synthetic_ball():
    D = gen_synthetic("ranking", 1000, 5, seed=3)
    assert max(np.linalg.norm(x) for x in D.X) <= 1.0
    assert np.all(np.abs(D.y) <= 1.0)


def test_gen_synthetic_small_n():
    with pytest.raises(ValueError):
        gen_synthetic("ranking", 1, 3, seed=0)


def test_pair_stream_small():
    assert list(pair_stream(2)) == [(0, 1), (1, 0)]
    pairs = list(pair_stream(3))
    assert len(pairs) == 6 and all(i != j for i, j in pairs)


def test_pair_stream_brute_force():
    expected = {(i, j) for i in range(50) for j in range(50) if i != j}
    got = list(pair_stream(50))
    assert len(got) == 2450 and set(got) == expected
    I, J = pair_indices(50)
    assert list(zip(I.tolist(), J.tolist())) == got


def test_dataset_immutable():
    D = gen_synthetic("ranking", 5, 2, seed=0)
    with pytest.raises(ValueError):
        D.X[0, 0] = 3.0


def test_without_and_replace():
    D = gen_synthetic("ranking", 6, 2, seed=0)
    E = D.without(2)
    assert E.n == 5
    np.testing.assert_array_equal(E.X, np.delete(D.X, 2, axis=0))
    z = Sample(np.array([0.1, 0.1]), 0.5)
    F = D.replace(4, z)
    assert F[4] == z and F[0] == D[0]


def test_sample_rejects_nonfinite():
    with pytest.raises(ValueError):
        Sample(np.array([np.inf, 0.0]), 1.0)


def test_model_params_radius():
    with pytest.raises(ValueError):
        ModelParams(np.array([3.0, 4.0]), radius=1.0)
    m = ModelParams(np.array([0.6, 0.8]), radius=1.0)
    np.testing.assert_array_equal(np.asarray(m), [0.6, 0.8])


def test_distribution_shared_hidden_vector():
    a = SyntheticDistribution("ranking", 4, dist_seed=3)
    b = SyntheticDistribution("ranking", 4, dist_seed=3)
    np.testing.assert_array_equal(a.w, b.w)
    assert np.isclose(np.linalg.norm(a.w), 1.0)


def test_outlier_within_bounds():
    dist = SyntheticDistribution("ranking", 3)
    D = dist.sample(20, np.random.default_rng(0), seed=0)
    E = with_outlier(D, dist)
    np.testing.assert_allclose(E.X[0], -dist.w)
    assert E.y[0] == 1.0
    assert np.all(np.linalg.norm(E.X[1:], axis=1) <= 0.5 + 1e-15)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 12))
def test_pair_count_property(n):
    pairs = list(pair_stream(n))
    assert len(pairs) == n * (n - 1)
    assert len(set(pairs)) == len(pairs)
    assert set(pairs) == set(itertools.permutations(range(n), 2))
