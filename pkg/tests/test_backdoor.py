import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_gcn.backdoor import (
    AdjustmentBasis,
    build_adjustment,
    fit_all_bases,
    fit_basis,
    project,
    reconstruct,
    save_bases,
)
from causal_gcn.graph_data import CohortDataset, fit_scaler


def test_rank_one_data_single_component():
    rng = np.random.default_rng(0)
    t = rng.normal(size=50)
    direction = rng.normal(size=6)
    X = np.column_stack([rng.normal(size=50), t[:, None] * direction + 3.0])
    b = fit_basis(X, np.arange(50), node_id=0, n_components=1)
    assert b.explained_variance_ratio[0] >= 1 - 1e-10


def test_full_basis_reconstructs():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 7))
    b = fit_basis(X, np.arange(20), 3, n_components=6)
    rest = np.delete(X, 3, axis=1)
    assert np.max(np.abs(reconstruct(b, project(b, X)) - rest)) < 1e-10


def test_eigenvalues_match_svd_oracle():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 10)) @ rng.normal(size=(10, 10))
    fit = np.arange(50)
    for j in (0, 4, 9):
        b = fit_basis(X, fit, j, n_components=9)
        rest = np.delete(X, j, axis=1)
        s = np.linalg.svd(rest - rest.mean(axis=0), compute_uv=False)
        assert np.allclose(b.eigenvalues, s**2 / 49, rtol=0, atol=1e-8)


def test_training_mean_projects_to_zero():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(25, 5))
    b = fit_basis(X, np.arange(25), 2, 3)
    x = X.mean(axis=0)
    assert np.max(np.abs(project(b, x))) < 1e-12
    assert np.max(np.abs(project(b, X).mean(axis=0))) < 1e-10


def test_sign_convention():
    rng = np.random.default_rng(4)
    b = fit_basis(rng.normal(size=(40, 8)), np.arange(40), 1, 5)
    pivot = np.argmax(np.abs(b.basis), axis=0)
    assert np.all(b.basis[pivot, np.arange(5)] > 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 40), p=st.integers(2, 12))
def test_orthonormal_and_nonincreasing(seed, n, p):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.1, 3, p)
    k = min(n, p - 1)
    b = fit_basis(X, np.arange(n), int(rng.integers(p)), k)
    assert np.max(np.abs(b.basis.T @ b.basis - np.eye(k))) < 1e-10
    assert np.all(np.diff(b.explained_variance_ratio) <= 1e-12)


def test_component_range_checked():
    X = np.random.default_rng(5).normal(size=(4, 6))
    with pytest.raises(ValueError):
        fit_basis(X, np.arange(4), 0, 0)
    with pytest.raises(ValueError):
        fit_basis(X, np.arange(4), 0, 5)
    with pytest.raises(ValueError):
        fit_basis(X, np.arange(10)[:3], 0, 6)


def test_leakage_canary():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 6))
    X[-1] = 25.0  # an outlying held-out subject
    train_idx = np.arange(30)
    clean = fit_basis(X, train_idx, 0, 3)
    leaked = fit_basis(X, np.append(train_idx, 39), 0, 3)
    assert not np.allclose(clean.mean_vector, leaked.mean_vector)
    assert not np.allclose(np.abs(clean.basis), np.abs(leaked.basis))
    ds = CohortDataset(np.zeros((6, 6)), X, rng.normal(size=(40, 3)), np.zeros(40, dtype=np.int64),
                       tuple("abcdef"))
    assert not np.allclose(fit_scaler(ds, train_idx).feature_mean, fit_scaler(ds, np.append(train_idx, 39)).feature_mean)
    # the held-out subject never touched the clean fit
    assert 39 not in clean.fit_idx


def test_build_adjustment_shapes():
    C = np.arange(3.0)
    t = np.arange(8.0) + 10
    z = build_adjustment(C, t)
    assert z.shape == (11,) and np.array_equal(z[:3], C) and np.array_equal(z[3:], t)
    assert np.array_equal(build_adjustment(C, None), C)
    assert np.array_equal(build_adjustment(C, np.empty(0)), C)
    assert np.array_equal(build_adjustment(C, t), z)


def test_bases_serialize(tmp_path):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(20, 4))
    bases = fit_all_bases(X, np.arange(20), 2)
    save_bases({0: bases, 1: bases}, tmp_path)
    doc = json.loads((tmp_path / "2.json").read_text())
    assert doc["node_id"] == 2 and set(doc["folds"]) == {"0", "1"}
    back = AdjustmentBasis.from_dict(doc["folds"]["1"])
    assert np.array_equal(back.basis, bases[2].basis)
    assert np.array_equal(back.eigenvalues, bases[2].eigenvalues)
