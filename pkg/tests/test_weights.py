import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prosumernet.scenarios import Dataset, Outcome, Sample, standardize
from prosumernet.weights import WeightError, WeightVector, cknn_weights, knn_neighbors, knn_weights


def make_dataset(X, standardized=False):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and X.shape[1] > 1:
        X = X.T
    samples = [Sample(x=row, y=Outcome(c_q=[1.0], c_nm=np.zeros((0, 1)))) for row in X]
    ds = Dataset(samples=samples)
    if standardized:
        ds = standardize(ds, range(len(ds)))
    return ds


def brute_force_neighbors(x, X, k, exclude=None):
    """Independent oracle: full sort of (distance, index) pairs."""
    order = sorted(
        (i for i in range(len(X)) if i != exclude),
        key=lambda i: (float(np.linalg.norm(np.asarray(x) - X[i])), i),
    )
    return sorted(order[:k])


def test_one_dim_example():
    ds = make_dataset([0.0, 1.0, 2.0])
    assert list(knn_neighbors([0.9], ds, 2)) == [0, 1]
    w = knn_weights([0.9], ds, 2)
    assert np.allclose(w.w, [0.5, 0.5, 0.0])


def test_k_equals_s_uniform():
    ds = make_dataset([0.0, 1.0, 2.0, 5.0])
    assert list(knn_neighbors([0.3], ds, 4)) == [0, 1, 2, 3]
    assert np.allclose(knn_weights([0.3], ds, 4).w, 0.25)


def test_k1_exact_hit():
    ds = make_dataset([0.0, 1.0, 2.0])
    w = knn_weights([2.0], ds, 1)
    assert np.allclose(w.w, [0.0, 0.0, 1.0])


def test_k_out_of_range():
    ds = make_dataset([0.0, 1.0])
    with pytest.raises(WeightError):
        knn_neighbors([0.0], ds, 3)
    with pytest.raises(WeightError):
        knn_neighbors([0.0], ds, 2, exclude=0)


def test_exclude_index():
    ds = make_dataset([0.0, 1.0, 2.0])
    assert list(knn_neighbors([0.0], ds, 1, exclude=0)) == [1]


def test_tie_break_ascending_index():
    ds = make_dataset([1.0, -1.0, 1.0, -1.0])
    # all four are at distance 1 from the query: lowest indices win
    assert list(knn_neighbors([0.0], ds, 2)) == [0, 1]


def test_brute_force_oracle_random(n_instances=100, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_instances):
        S = int(rng.integers(2, 40))
        d = int(rng.integers(1, 8))
        X = rng.normal(size=(S, d))
        ds = make_dataset(X)
        x = rng.normal(size=d)
        k = int(rng.integers(1, S + 1))
        assert list(knn_neighbors(x, ds, k)) == brute_force_neighbors(x, X, k)


def test_cknn_gamma_one_is_knn():
    ds = make_dataset([0.0, 1.0, 2.0])
    a = cknn_weights([0.9], [[5.0]], ds, 2, 1.0)
    b = knn_weights([0.9], ds, 2)
    assert np.array_equal(a.w, b.w)


def test_cknn_derived_example():
    # own 1-NN of 0.9 is sample 1 (x=1); neighbor covariate 1.9 hits sample 2
    ds = make_dataset([0.0, 1.0, 2.0])
    w = cknn_weights([0.9], [[1.9]], ds, 1, 0.5)
    assert np.allclose(w.w, [0.0, 0.5, 0.5])


def test_cknn_gamma_zero_identical_neighbors():
    ds = make_dataset([0.0, 1.0, 2.0])
    two = cknn_weights([0.9], [[1.9], [1.9]], ds, 2, 0.0)
    one = knn_weights([1.9], ds, 2)
    assert np.allclose(two.w, one.w)


def test_cknn_no_neighbors_behaves_as_gamma_one():
    ds = make_dataset([0.0, 1.0, 2.0])
    w = cknn_weights([0.9], [], ds, 2, 0.25)
    assert np.allclose(w.w, knn_weights([0.9], ds, 2).w)


def test_cknn_affine_in_gamma():
    rng = np.random.default_rng(4)
    ds = make_dataset(rng.normal(size=(12, 3)))
    x = rng.normal(size=3)
    nbrs = [rng.normal(size=3) for _ in range(3)]
    w0 = cknn_weights(x, nbrs, ds, 4, 0.0).w
    w1 = cknn_weights(x, nbrs, ds, 4, 1.0).w
    for g in (0.2, 0.5, 0.77):
        wg = cknn_weights(x, nbrs, ds, 4, g).w
        assert np.allclose(wg, g * w1 + (1 - g) * w0, atol=1e-12)


def test_permutation_equivariance():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(9, 2))
    x = rng.normal(size=2)
    perm = rng.permutation(9)
    a = knn_weights(x, make_dataset(X), 3).w
    b = knn_weights(x, make_dataset(X[perm]), 3).w
    assert np.allclose(a[perm], b)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=40, deadline=None)
def test_simplex_invariant_random(seed):
    rng = np.random.default_rng(seed)
    S = int(rng.integers(1, 30))
    d = int(rng.integers(1, 6))
    ds = make_dataset(rng.normal(size=(S, d)), standardized=bool(rng.integers(0, 2)))
    k = int(rng.integers(1, S + 1))
    gamma = float(rng.uniform(0, 1))
    nbrs = [rng.normal(size=d) for _ in range(int(rng.integers(0, 4)))]
    w = cknn_weights(rng.normal(size=d), nbrs, ds, k, gamma)
    assert np.all(w.w >= 0)
    assert abs(w.w.sum() - 1.0) <= 1e-9
    WeightVector(w=w.w)  # re-validates the simplex invariants


def test_standardized_distances_used():
    # feature 1 has huge scale; standardization must prevent it dominating
    X = np.array([[0.0, 1000.0], [1.0, 0.0]])
    ds = make_dataset(X, standardized=True)
    # query near sample 0 in standardized space
    assert list(knn_neighbors([0.1, 900.0], ds, 1)) == [0]
