"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``CAUSAL_GCN_NO_NUMBA`` is unset (or ``0``).  Both paths are always
importable as ``*_numpy`` / ``*_numba`` so tests and the benchmark can compare
them directly.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("CAUSAL_GCN_NO_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA and not _DISABLED

PROB_FLOOR = float(np.finfo(np.float64).tiny)


# --------------------------------------------------------------------------
# eval-mode GCN forward over a batch of subjects
# --------------------------------------------------------------------------


def gcn_forward_numpy(A, X, C, W0, b0, W1, b1, Wc, bc, Wo, bo):
    AX = X @ A.T
    H1 = np.maximum(AX[:, :, None] * W0[0] + b0, 0.0)
    AH = np.matmul(A, H1)
    H2 = np.maximum(AH @ W1 + b1, 0.0)
    z = H2.mean(axis=1)
    zc = np.maximum(C @ Wc + bc, 0.0)
    logits = np.concatenate([z, zc], axis=1) @ Wo + bo
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return np.maximum(e / e.sum(axis=1, keepdims=True), PROB_FLOOR)


@njit(cache=True)
def gcn_forward_numba(A, X, C, W0, b0, W1, b1, Wc, bc, Wo, bo):
    n, p = X.shape
    d = W1.shape[0]
    q = Wc.shape[0]
    dc = Wc.shape[1]
    k = Wo.shape[1]
    out = np.empty((n, k))
    h1 = np.empty((p, d))
    ah = np.empty(d)
    row = np.empty(d)
    feat = np.empty(d + dc)
    logits = np.empty(k)
    for i in range(n):
        # layer 1: (A x)_j * W0 + b0
        for j in range(p):
            s = 0.0
            for m in range(p):
                s += A[j, m] * X[i, m]
            for u in range(d):
                v = s * W0[0, u] + b0[u]
                h1[j, u] = v if v > 0.0 else 0.0
        for u in range(d + dc):
            feat[u] = 0.0
        # layer 2 row by row, accumulated straight into the pooled sum
        for j in range(p):
            for u in range(d):
                ah[u] = 0.0
            for m in range(p):
                a = A[j, m]
                if a != 0.0:
                    for u in range(d):
                        ah[u] += a * h1[m, u]
            for u in range(d):
                row[u] = b1[u]
            for w in range(d):
                a = ah[w]
                if a != 0.0:
                    for u in range(d):
                        row[u] += a * W1[w, u]
            for u in range(d):
                if row[u] > 0.0:
                    feat[u] += row[u]
        for u in range(d):
            feat[u] /= p
        for u in range(dc):
            s = bc[u]
            for w in range(q):
                s += C[i, w] * Wc[w, u]
            feat[d + u] = s if s > 0.0 else 0.0
        mx = -np.inf
        for c in range(k):
            s = bo[c]
            for u in range(d + dc):
                s += feat[u] * Wo[u, c]
            logits[c] = s
            if s > mx:
                mx = s
        tot = 0.0
        for c in range(k):
            logits[c] = np.exp(logits[c] - mx)
            tot += logits[c]
        for c in range(k):
            v = logits[c] / tot
            out[i, c] = v if v > PROB_FLOOR else PROB_FLOOR
    return out


# --------------------------------------------------------------------------
# bootstrap replicate means of per-subject contrasts
# --------------------------------------------------------------------------


def bootstrap_means_numpy(values, idx):
    """values: (n, m); idx: (B, n) resample indices -> (B, m) means."""
    return values[idx].mean(axis=1)


@njit(cache=True)
def bootstrap_means_numba(values, idx):
    B, n = idx.shape
    m = values.shape[1]
    out = np.zeros((B, m))
    for b in range(B):
        for t in range(n):
            r = idx[b, t]
            for c in range(m):
                out[b, c] += values[r, c]
        for c in range(m):
            out[b, c] /= n
    return out


# --------------------------------------------------------------------------
# binary AUC via the rank-sum statistic (ties count 1/2)
# --------------------------------------------------------------------------


def _average_ranks_numpy(x):
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = xs.size
    # boundaries of tie groups
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends - 1) / 2.0 + 1.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc_binary_numpy(scores, positive):
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    ranks = _average_ranks_numpy(scores)
    r_pos = ranks[positive].sum()
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@njit(cache=True)
def auc_binary_numba(scores, positive):
    n = scores.size
    order = np.argsort(scores, kind="mergesort")
    n_pos = 0
    for i in range(n):
        if positive[i]:
            n_pos += 1
    n_neg = n - n_pos
    r_pos = 0.0
    i = 0
    while i < n:
        j = i
        while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            if positive[order[t]]:
                r_pos += avg
        i = j + 1
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

if USE_NUMBA:
    _gcn_forward = gcn_forward_numba
    _bootstrap_means = bootstrap_means_numba
    _auc_binary = auc_binary_numba
else:
    _gcn_forward = gcn_forward_numpy
    _bootstrap_means = bootstrap_means_numpy
    _auc_binary = auc_binary_numpy


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gcn_forward(A, X, C, W0, b0, W1, b1, Wc, bc, Wo, bo):
    """Eval-mode class probabilities, shape (n_subjects, n_classes)."""
    return _gcn_forward(*(_f64(a) for a in (A, X, C, W0, b0, W1, b1, Wc, bc, Wo, bo)))


def bootstrap_means(values, idx):
    return _bootstrap_means(_f64(values), np.ascontiguousarray(idx, dtype=np.int64))


def auc_binary(scores, positive):
    return float(_auc_binary(_f64(scores), np.ascontiguousarray(positive, dtype=np.bool_)))


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
