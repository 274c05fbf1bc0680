import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_gcn.gcn_model import TrainConfig, TrainedModel, train
from causal_gcn.graph_data import CohortDataset, ScalerState, normalize_adjacency, stratified_kfold
from causal_gcn.intervention import (
    InterventionError,
    InterventionLevels,
    compute_levels,
    contrast_per_subject,
    delta,
    do_forward,
    model_inputs,
    sever_node,
)
from causal_gcn.synth_scm import generate_cohort, oracle_delta, preset
from oracles import random_adjacency, random_params, scalar_forward, scalar_normalize


def _identity_scaler(p, q=3):
    return ScalerState(np.zeros(p), np.ones(p), np.zeros(q), np.ones(q))


def _model(rng, A, params=None):
    p = A.shape[0]
    params = params or random_params(rng, 3, 4, 3)
    return TrainedModel(params, A, normalize_adjacency(A), _identity_scaler(p), TrainConfig(), np.empty(0), 0)


def _cohort(rng, A, n=30):
    p = A.shape[0]
    return CohortDataset(A, rng.normal(size=(n, p)), rng.normal(size=(n, 3)), rng.integers(0, 3, n),
                         tuple(f"n{j}" for j in range(p)))


# --- severing --------------------------------------------------------------


def test_sever_two_node_graph_gives_identity():
    assert np.array_equal(sever_node(np.array([[0.0, 1.0], [1.0, 0.0]]), 0), np.eye(2))


def test_sever_isolated_node_is_noop():
    rng = np.random.default_rng(0)
    A = random_adjacency(rng, 6)
    A[3, :] = A[:, 3] = 0.0
    At = normalize_adjacency(A)
    for renorm in (True, False):
        assert np.max(np.abs(sever_node(A, 3, renorm) - At)) < 1e-12


def test_sever_middle_of_path():
    A = np.zeros((5, 5))
    for j in range(4):
        A[j, j + 1] = A[j + 1, j] = 1.0
    S = sever_node(A, 2)
    block = np.full((2, 2), 0.5)
    expected = np.zeros((5, 5))
    expected[:2, :2] = block
    expected[3:, 3:] = block
    expected[2, 2] = 1.0
    assert np.max(np.abs(S - expected)) < 1e-15


def test_sever_without_renormalization_keeps_entries():
    rng = np.random.default_rng(1)
    A = random_adjacency(rng, 5, density=0.8)
    At = normalize_adjacency(A)
    S = sever_node(A, 1, renormalize=False)
    assert S[1, 1] == 1.0 and np.all(np.delete(S[1], 1) == 0) and np.all(np.delete(S[:, 1], 1) == 0)
    keep = [0, 2, 3, 4]
    assert np.array_equal(S[np.ix_(keep, keep)], At[np.ix_(keep, keep)])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.integers(2, 10))
def test_sever_locality(seed, p):
    rng = np.random.default_rng(seed)
    A = random_adjacency(rng, p)
    j = int(rng.integers(p))
    S = sever_node(A, j)
    At = normalize_adjacency(A)
    far = [k for k in range(p) if k != j and A[j, k] == 0]
    assert np.max(np.abs(S[np.ix_(far, far)] - At[np.ix_(far, far)]), initial=0) < 1e-15
    assert np.all(np.delete(S[j], j) == 0) and S[j, j] == 1.0
    assert np.array_equal(S, S.T)


# --- levels ----------------------------------------------------------------


def test_percentile_fixture():
    lv = compute_levels(np.arange(100.0), node_id=4)
    assert lv.x_lo == pytest.approx(9.9, abs=1e-12)
    assert lv.x_hi == pytest.approx(89.1, abs=1e-12)
    assert (lv.clip_lo, lv.clip_hi) == pytest.approx((0.99, 98.01))
    assert lv.node_id == 4


def test_symmetric_data_gives_symmetric_levels():
    x = np.random.default_rng(2).normal(size=51)
    lv = compute_levels(np.concatenate([x, -x]))
    assert abs(lv.x_lo + lv.x_hi) < 1e-10


def test_constant_column_rejected():
    with pytest.raises(InterventionError, match="no interventional contrast possible for node 7"):
        compute_levels(np.full(20, 3.0), node_id=7)


def test_small_reference_rejected():
    with pytest.raises(InterventionError):
        compute_levels(np.arange(5.0))


# --- do_forward and delta --------------------------------------------------


def test_outcome_depending_only_on_covariates_ignores_intervention():
    rng = np.random.default_rng(3)
    A = random_adjacency(rng, 5)
    params = random_params(rng, 3, 4, 3)
    params.Wo[:4] = 0.0
    model = _model(rng, A, params)
    ds = _cohort(rng, A)
    idx = np.arange(ds.n_subjects)
    base = model.predict_proba(ds.features, ds.covariates)
    for j in range(5):
        for x in (-2.0, 0.0, 3.0):
            assert np.max(np.abs(do_forward(model, ds, idx, j, x).per_subject_probs - base)) < 1e-12
        lv = InterventionLevels(j, -1.0, 1.0)
        assert np.max(np.abs(delta(model, ds, idx, j, lv))) < 1e-12


def test_noop_intervention_on_isolated_node():
    rng = np.random.default_rng(4)
    A = random_adjacency(rng, 5)
    A[2, :] = A[:, 2] = 0.0
    model = _model(rng, A)
    ds = _cohort(rng, A)
    obs = model.predict_proba(ds.features, ds.covariates)
    for i in range(5):
        dist = do_forward(model, ds, [i], 2, ds.features[i, 2])
        assert np.max(np.abs(dist.per_subject_probs[0] - obs[i])) < 1e-12


def test_do_forward_matches_reference_with_hand_severed_matrix():
    rng = np.random.default_rng(5)
    A = random_adjacency(rng, 4, density=0.9)
    model = _model(rng, A)
    ds = _cohort(rng, A, n=8)
    j, x = 1, 0.37
    cut = [[0.0 if (a == j or b == j) else A[a, b] for b in range(4)] for a in range(4)]
    S = scalar_normalize(cut)
    dist = do_forward(model, ds, np.arange(8), j, x)
    for i in range(8):
        xi = ds.features[i].tolist()
        xi[j] = x
        assert np.max(np.abs(dist.per_subject_probs[i] - scalar_forward(model.params, S, xi, ds.covariates[i]))) < 1e-12
    assert np.max(np.abs(dist.per_subject_probs.sum(axis=1) - 1)) < 1e-10
    assert np.array_equal(dist.mean_probs, dist.per_subject_probs.mean(axis=0))


@pytest.mark.parametrize("renorm", [True, False])
def test_delta_zero_sum_and_antisymmetry(renorm):
    rng = np.random.default_rng(6)
    A = random_adjacency(rng, 6)
    model = _model(rng, A)
    ds = _cohort(rng, A, n=40)
    idx = np.arange(40)
    for j in range(6):
        lv = compute_levels(ds.features[:, j], node_id=j)
        d = delta(model, ds, idx, j, lv, renormalize=renorm)
        assert abs(d.sum()) < 1e-10
        assert np.array_equal(delta(model, ds, idx, j, lv.swapped(), renormalize=renorm), -d)
        per = contrast_per_subject(model, ds.features, ds.covariates, lv, renorm)
        assert np.max(np.abs(per.mean(axis=0) - d)) < 1e-14


def test_level_node_mismatch_rejected():
    rng = np.random.default_rng(7)
    A = random_adjacency(rng, 3)
    with pytest.raises(ValueError):
        delta(_model(rng, A), _cohort(rng, A), np.arange(10), 0, InterventionLevels(1, 0.0, 1.0))


def test_adjusted_model_requires_basis():
    rng = np.random.default_rng(8)
    A = random_adjacency(rng, 3)
    model = _model(rng, A)
    model.n_extra_covariates = 2
    with pytest.raises(ValueError):
        model_inputs(model, _cohort(rng, A), np.arange(3))


def test_single_cause_sign_matches_oracle():
    spec = preset("single-cause", seed=1, p=6)
    ds, _ = generate_cohort(spec, 2000, n_mc=10_000)
    split = stratified_kfold(ds.labels, 5, 0)[0]
    model = train(ds, split, TrainConfig(seed=0))
    j = spec.causal_nodes[0]
    test = split.test_idx
    X, _ = model_inputs(model, ds, test)
    lv = compute_levels(X[:, j], node_id=j)
    d = delta(model, ds, test, j, lv)
    raw_lo = lv.x_lo * model.scaler.feature_sd[j] + model.scaler.feature_mean[j]
    raw_hi = lv.x_hi * model.scaler.feature_sd[j] + model.scaler.feature_mean[j]
    truth, _ = oracle_delta(spec, j, raw_lo, raw_hi)
    assert truth > 0
    assert np.sign(d[2]) == np.sign(truth)
