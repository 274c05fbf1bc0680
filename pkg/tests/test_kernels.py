import os
import subprocess
import sys

import numpy as np
import pytest

from causal_gcn import _kernels as K
from causal_gcn.graph_data import normalize_adjacency
from oracles import random_adjacency, random_params

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not importable")


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_forward_paths_agree(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(2, 9))
    P = random_params(rng, 3, 6, 4)
    A = normalize_adjacency(random_adjacency(rng, p))
    X, C = rng.normal(size=(20, p)), rng.normal(size=(20, 3))
    args = (A, X, C, P.W0, P.b0, P.W1, P.b1, P.Wc, P.bc, P.Wo, P.bo)
    assert np.max(np.abs(K.gcn_forward_numba(*args) - K.gcn_forward_numpy(*args))) < 1e-12


@needs_numba
def test_bootstrap_paths_agree():
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(30, 12))
    idx = rng.integers(0, 30, size=(50, 30))
    assert np.max(np.abs(K.bootstrap_means_numba(vals, idx) - K.bootstrap_means_numpy(vals, idx))) < 1e-13


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_auc_paths_agree(seed):
    rng = np.random.default_rng(seed)
    s = np.round(rng.random(60), 1)
    pos = rng.random(60) < 0.4
    assert abs(K.auc_binary_numba(s, pos) - K.auc_binary_numpy(s, pos)) < 1e-14


def test_env_flag_selects_numpy():
    env = dict(os.environ, CAUSAL_GCN_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from causal_gcn import backend; print(backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
