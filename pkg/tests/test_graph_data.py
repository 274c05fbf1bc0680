import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_gcn.graph_data import (
    CohortDataset,
    CohortError,
    GraphError,
    edge_density,
    fit_scaler,
    load_cohort,
    normalize_adjacency,
    standardize,
    stratified_kfold,
    threshold_and_rescale,
    write_cohort,
)


def _toy_files(tmp_path, adjacency="a,b,c\n0,1,0\n1,0,0.5\n0,0.5,0\n", labels=None):
    (tmp_path / "features.csv").write_text(
        "subject_id,a,b,c\n1,0.1,0.2,0.3\n2,1.0,2.0,3.0\n3,-1,0,1\n4,5,5,5\n", encoding="utf-8"
    )
    (tmp_path / "covariates.csv").write_text(
        "subject_id,age,sex,apoe4\n1,70,1,0\n2,72,-1,1\n3,65,1,1\n4,80,-1,0\n", encoding="utf-8"
    )
    (tmp_path / "labels.csv").write_text(labels or "subject_id,label\n1,CN\n2,MCI\n3,AD\n4,CN\n", encoding="utf-8")
    (tmp_path / "adjacency.csv").write_text(adjacency, encoding="utf-8")
    return [tmp_path / f for f in ("features.csv", "covariates.csv", "labels.csv", "adjacency.csv")]


def _dataset(X, C=None, y=None):
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    C = np.zeros((n, 3)) if C is None else np.asarray(C, dtype=float)
    y = np.zeros(n, dtype=np.int64) if y is None else np.asarray(y)
    return CohortDataset(np.zeros((p, p)), X, C, y, tuple(f"n{j}" for j in range(p)))


# --- loading ---------------------------------------------------------------


def test_load_toy_bundle_dimensions(tmp_path):
    ds = load_cohort(*_toy_files(tmp_path))
    assert (ds.n_subjects, ds.n_nodes, ds.n_covariates) == (4, 3, 3)
    assert ds.node_names == ("a", "b", "c")
    assert ds.labels.tolist() == [0, 1, 2, 0]
    assert ds.features[1].tolist() == [1.0, 2.0, 3.0]


def test_numeric_labels_accepted(tmp_path):
    ds = load_cohort(*_toy_files(tmp_path, labels="subject_id,label\n1,0\n2,1\n3,2\n4,0\n"))
    assert ds.labels.tolist() == [0, 1, 2, 0]


def test_asymmetric_adjacency_names_cell(tmp_path):
    with pytest.raises(CohortError, match=r"\(0,1\)"):
        load_cohort(*_toy_files(tmp_path, adjacency="a,b,c\n0,1,0\n0.9,0,0.5\n0,0.5,0\n"))


def test_unknown_class(tmp_path):
    with pytest.raises(CohortError, match="unknown class"):
        load_cohort(*_toy_files(tmp_path, labels="subject_id,label\n1,0\n2,1\n3,3\n4,0\n"))


def test_dimension_mismatch(tmp_path):
    with pytest.raises(CohortError, match="dimension mismatch"):
        load_cohort(*_toy_files(tmp_path, adjacency="a,b\n0,1\n1,0\n"))


def test_non_numeric_cell(tmp_path):
    paths = _toy_files(tmp_path)
    paths[0].write_text("subject_id,a,b,c\n1,0.1,x,0.3\n2,1,2,3\n3,-1,0,1\n4,5,5,5\n", encoding="utf-8")
    with pytest.raises(CohortError, match="row 1"):
        load_cohort(*paths)


def test_edge_list_is_symmetrized(tmp_path):
    paths = _toy_files(tmp_path, adjacency="src,dst,weight\na,b,1\nc,b,0.5\n")
    ds = load_cohort(*paths)
    assert np.array_equal(ds.adjacency, ds.adjacency.T)
    assert ds.adjacency[1, 2] == 0.5


def test_write_load_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(3)
    A = np.triu(rng.random((4, 4)), 1)
    A = A + A.T
    ds = CohortDataset(A, rng.normal(size=(7, 4)), rng.normal(size=(7, 3)), rng.integers(0, 3, 7),
                       ("w", "x", "y", "z"), subject_ids=tuple(str(i) for i in range(7)))
    first = write_cohort(ds, tmp_path / "one")
    again = write_cohort(load_cohort(*first.values()), tmp_path / "two")
    for key in first:
        assert first[key].read_bytes() == again[key].read_bytes()


# --- standardization -------------------------------------------------------


def test_two_point_column_population_sd():
    ds, sc = standardize(_dataset([[2.0], [4.0]]), [0, 1])
    assert ds.features[:, 0].tolist() == [-1.0, 1.0]
    assert sc.sd_convention == "population"


def test_constant_column_becomes_zero():
    ds, sc = standardize(_dataset([[5.0], [5.0], [5.0]]), [0, 1, 2])
    assert np.all(ds.features == 0.0)
    assert sc.feature_sd[0] == 1.0


def test_held_out_subject_uses_training_moments():
    X = [[1.0], [3.0], [100.0]]
    ds, sc = standardize(_dataset(X), [0, 1])
    # training mean 2, population sd 1
    assert ds.features[2, 0] == pytest.approx(98.0, abs=1e-12)
    assert sc.feature_mean[0] == 2.0 and sc.feature_sd[0] == 1.0


def test_standardize_moments_and_idempotence():
    rng = np.random.default_rng(0)
    ds = _dataset(rng.normal(3, 2, (40, 5)), rng.normal(1, 4, (40, 3)))
    fit = np.arange(30)
    z, _ = standardize(ds, fit)
    assert np.all(np.abs(z.features[fit].mean(axis=0)) < 1e-8)
    assert np.all(np.abs(z.features[fit].std(axis=0) - 1) < 1e-6)
    zz, _ = standardize(z, fit)
    assert np.max(np.abs(zz.features - z.features)) < 1e-12
    assert np.max(np.abs(zz.covariates - z.covariates)) < 1e-12


def test_scaler_dict_round_trip():
    rng = np.random.default_rng(1)
    sc = fit_scaler(_dataset(rng.normal(size=(10, 3))), np.arange(10))
    from causal_gcn.graph_data import ScalerState

    back = ScalerState.from_dict(sc.to_dict())
    assert np.array_equal(back.feature_mean, sc.feature_mean)
    assert np.array_equal(back.covariate_sd, sc.covariate_sd)


# --- thresholding ----------------------------------------------------------


def test_binary_input_unchanged():
    rng = np.random.default_rng(2)
    A = np.triu((rng.random((8, 8)) < 0.4).astype(float), 1)
    A = A + A.T
    res = threshold_and_rescale(A, tau=0.5)
    assert np.array_equal(res.adjacency, A)


def test_target_density_within_one_edge():
    rng = np.random.default_rng(4)
    p = 30
    A = rng.random((p, p))
    res = threshold_and_rescale(A, target_density=0.15)
    pairs = p * (p - 1) / 2
    kept = np.count_nonzero(np.triu(res.adjacency, 1))
    assert abs(kept - 0.15 * pairs) <= 1
    assert res.adjacency.max() == 1.0 and np.all(np.diag(res.adjacency) == 0)
    assert res.density == pytest.approx(edge_density(res.adjacency))


def test_default_density_is_fifteen_percent():
    rng = np.random.default_rng(5)
    res = threshold_and_rescale(rng.random((20, 20)))
    assert abs(np.count_nonzero(np.triu(res.adjacency, 1)) - 0.15 * 190) <= 1


def test_all_zero_is_disconnected():
    with pytest.raises(GraphError, match="fully disconnected"):
        threshold_and_rescale(np.zeros((4, 4)))


def test_tau_and_density_conflict():
    with pytest.raises(GraphError):
        threshold_and_rescale(np.ones((3, 3)), tau=0.5, target_density=0.2)


# --- normalization ---------------------------------------------------------


def test_normalize_examples():
    assert np.array_equal(normalize_adjacency(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.5, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(p=st.integers(1, 16), seed=st.integers(0, 2**31 - 1), density=st.floats(0.0, 1.0))
def test_normalized_spectrum_bounded(p, seed, density):
    rng = np.random.default_rng(seed)
    W = np.triu(rng.random((p, p)) * (rng.random((p, p)) < density), 1)
    At = normalize_adjacency(W + W.T)
    assert np.array_equal(At, At.T)
    ev = np.linalg.eigvalsh(At)
    assert ev.max() <= 1 + 1e-9 and ev.min() >= -1 - 1e-9


# --- folds -----------------------------------------------------------------


def test_stratified_counts_per_fold():
    y = np.repeat([0, 1, 2], [151, 231, 102])
    splits = stratified_kfold(y, 5, seed=11)
    for s in splits:
        counts = np.bincount(y[s.test_idx], minlength=3)
        assert counts[0] in (30, 31) and counts[1] in (46, 47) and counts[2] in (20, 21)


@settings(max_examples=30, deadline=None)
@given(counts=st.lists(st.integers(5, 40), min_size=3, max_size=3), k=st.integers(2, 5), seed=st.integers(0, 10**6))
def test_folds_partition_subjects(counts, k, seed):
    y = np.repeat([0, 1, 2], counts)
    splits = stratified_kfold(y, k, seed)
    tests = np.concatenate([s.test_idx for s in splits])
    assert np.array_equal(np.sort(tests), np.arange(y.size))
    for s in splits:
        parts = np.concatenate([s.train_idx, s.val_idx, s.test_idx])
        assert np.array_equal(np.sort(parts), np.arange(y.size))
        for c in range(3):
            target = counts[c] / k
            assert abs(np.sum(y[s.test_idx] == c) - target) < 1 + 1e-9
            rest = counts[c] - np.sum(y[s.test_idx] == c)
            assert abs(np.sum(y[s.val_idx] == c) - 0.2 * rest) <= 1


def test_leave_one_out():
    y = np.array([0, 0, 1, 1, 2, 2])
    splits = stratified_kfold(y, 6, seed=0)
    assert all(s.test_idx.size == 1 for s in splits)


def test_folds_deterministic():
    y = np.repeat([0, 1, 2], 20)
    a, b = stratified_kfold(y, 5, 9), stratified_kfold(y, 5, 9)
    for s, t in zip(a, b):
        assert np.array_equal(s.train_idx, t.train_idx) and np.array_equal(s.val_idx, t.val_idx)
        assert np.array_equal(s.test_idx, t.test_idx)


def test_small_class_named_in_error():
    y = np.array([0] * 10 + [1] * 10 + [2] * 3)
    with pytest.raises(ValueError, match="class 2"):
        stratified_kfold(y, 5, 0)
