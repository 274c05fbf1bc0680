"""Per-node adjustment sets: covariates plus leading PCs of every other node's feature."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_N_PCS = 8


@dataclass(frozen=True)
class AdjustmentBasis:
    node_id: int
    mean_vector: np.ndarray  # p - 1
    basis: np.ndarray  # (p - 1) x K, orthonormal columns
    eigenvalues: np.ndarray  # K, descending
    total_variance: float
    fit_idx: tuple[int, ...]

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total_variance

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "mean": self.mean_vector.tolist(),
            "basis": self.basis.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "total_variance": self.total_variance,
            "fit_idx": list(self.fit_idx),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdjustmentBasis":
        basis = np.asarray(d["basis"], dtype=float)
        return cls(
            node_id=int(d["node_id"]),
            mean_vector=np.asarray(d["mean"], dtype=float),
            basis=basis.reshape(len(d["mean"]), -1),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
            total_variance=float(d["total_variance"]),
            fit_idx=tuple(int(i) for i in d["fit_idx"]),
        )


def fit_basis(features: np.ndarray, fit_idx, node_id: int, n_components: int = DEFAULT_N_PCS) -> AdjustmentBasis:
    """PCA of the fit subjects' features with column ``node_id`` removed.

    Columns are the top eigenvectors of the sample covariance, ordered by
    descending eigenvalue, each signed so its largest-magnitude entry is positive.
    """
    X = np.asarray(features, dtype=float)
    fit_idx = np.asarray(fit_idx, dtype=np.int64)
    n, p = fit_idx.size, X.shape[1]
    if not 0 <= node_id < p:
        raise IndexError(f"node_id {node_id} out of range for {p} nodes")
    if not 1 <= n_components <= min(n, p - 1):
        raise ValueError(f"K={n_components} out of range [1, {min(n, p - 1)}]")
    rest = np.delete(X[fit_idx], node_id, axis=1)
    mean = rest.mean(axis=0)
    centered = rest - mean
    cov = centered.T @ centered / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals = np.clip(evals[order], 0.0, None)
    U = evecs[:, order]
    pivot = np.argmax(np.abs(U), axis=0)
    U = U * np.sign(U[pivot, np.arange(U.shape[1])])
    return AdjustmentBasis(
        node_id=int(node_id),
        mean_vector=mean,
        basis=U,
        eigenvalues=evals,
        total_variance=float(np.trace(cov)),
        fit_idx=tuple(int(i) for i in fit_idx),
    )


def fit_all_bases(features: np.ndarray, fit_idx, n_components: int = DEFAULT_N_PCS) -> list[AdjustmentBasis]:
    return [fit_basis(features, fit_idx, j, n_components) for j in range(features.shape[1])]


def project(basis: AdjustmentBasis, subject_features: np.ndarray) -> np.ndarray:
    """PC scores of the other nodes; accepts one subject (p,) or a batch (n, p)."""
    x = np.asarray(subject_features, dtype=float)
    rest = np.delete(x, basis.node_id, axis=-1)
    return (rest - basis.mean_vector) @ basis.basis


def reconstruct(basis: AdjustmentBasis, scores: np.ndarray) -> np.ndarray:
    """Inverse of :func:`project` on the retained subspace (features without ``node_id``)."""
    return np.asarray(scores) @ basis.basis.T + basis.mean_vector


def build_adjustment(covariates: np.ndarray, scores: np.ndarray | None) -> np.ndarray:
    """Adjustment vector ``[C ; t]``; batched inputs concatenate along the last axis."""
    C = np.asarray(covariates, dtype=float)
    if scores is None:
        return C.copy()
    t = np.asarray(scores, dtype=float)
    return np.concatenate([C, t], axis=-1)


def save_bases(bases_by_fold: dict[int, list[AdjustmentBasis]], out_dir) -> None:
    """Write ``adjustment/{node_id}.json`` holding that node's basis for every fold."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not bases_by_fold:
        return
    p = len(next(iter(bases_by_fold.values())))
    for j in range(p):
        doc = {"node_id": j, "folds": {str(f): bases[j].to_dict() for f, bases in sorted(bases_by_fold.items())}}
        (out / f"{j}.json").write_text(json.dumps(doc) + "\n", encoding="utf-8")
