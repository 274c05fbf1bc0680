"""The do-operator on a trained model: sever a node, clamp its feature, re-propagate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backdoor import AdjustmentBasis, build_adjustment, project
from .gcn_model import TrainedModel
from .graph_data import CohortDataset, normalize_adjacency

MIN_REFERENCE = 10


class InterventionError(ValueError):
    pass


@dataclass(frozen=True)
class InterventionLevels:
    node_id: int
    x_lo: float
    x_hi: float
    pct_lo: float = 10.0
    pct_hi: float = 90.0
    clip_lo: float = -np.inf
    clip_hi: float = np.inf

    def swapped(self) -> "InterventionLevels":
        return InterventionLevels(self.node_id, self.x_hi, self.x_lo, self.pct_hi, self.pct_lo, self.clip_lo, self.clip_hi)


@dataclass(frozen=True)
class InterventionalDistribution:
    node_id: int
    level: float
    mean_probs: np.ndarray
    per_subject_probs: np.ndarray


def sever_node(adjacency: np.ndarray, node_id: int, renormalize: bool = True) -> np.ndarray:
    """Propagation matrix with every edge of ``node_id`` removed.

    With ``renormalize`` the raw adjacency is edited and the symmetric degree
    normalization recomputed.  Otherwise the original propagation entries are
    kept, row and column ``node_id`` zeroed and its self-loop set to 1.
    """
    A = np.asarray(adjacency, dtype=float)
    p = A.shape[0]
    if not 0 <= node_id < p:
        raise IndexError(f"node_id {node_id} out of range for {p} nodes")
    if renormalize:
        cut = A.copy()
        cut[node_id, :] = 0.0
        cut[:, node_id] = 0.0
        return normalize_adjacency(cut)
    At = normalize_adjacency(A)
    At[node_id, :] = 0.0
    At[:, node_id] = 0.0
    At[node_id, node_id] = 1.0
    return At


def compute_levels(
    values: np.ndarray,
    pct_lo: float = 10.0,
    pct_hi: float = 90.0,
    clip_quantiles: tuple[float, float] = (0.01, 0.99),
    node_id: int = -1,
) -> InterventionLevels:
    """Low/high intervention values from a reference sample of one node's feature.

    Values are first clipped to the ``clip_quantiles`` range; percentiles use
    linear interpolation at position (n - 1) q of the sorted sample.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < MIN_REFERENCE:
        raise InterventionError(f"reference set has {x.size} subjects; need at least {MIN_REFERENCE}")
    if not 0 <= pct_lo < pct_hi <= 100:
        raise InterventionError(f"need 0 <= pct_lo < pct_hi <= 100, got {pct_lo}, {pct_hi}")
    c_lo, c_hi = np.quantile(x, clip_quantiles)
    xc = np.clip(x, c_lo, c_hi)
    x_lo, x_hi = np.percentile(xc, [pct_lo, pct_hi])
    if not x_lo < x_hi:
        raise InterventionError(f"no interventional contrast possible for node {node_id}")
    return InterventionLevels(int(node_id), float(x_lo), float(x_hi), float(pct_lo), float(pct_hi), float(c_lo), float(c_hi))


def model_inputs(
    model: TrainedModel,
    dataset: CohortDataset,
    eval_idx,
    adjustment: AdjustmentBasis | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Standardized features and covariate input for ``eval_idx`` (with PC scores when adjusted)."""
    idx = np.asarray(eval_idx, dtype=np.int64)
    X = model.scaler.transform_features(dataset.features[idx])
    C = model.scaler.transform_covariates(dataset.covariates[idx])
    if model.n_extra_covariates:
        if adjustment is None:
            raise ValueError("this model was trained with adjustment vectors; pass the node's AdjustmentBasis")
        C = build_adjustment(C, project(adjustment, X))
    return X, C


def intervened_probs(
    model: TrainedModel,
    X: np.ndarray,
    C: np.ndarray,
    node_id: int,
    x: float,
    propagation: np.ndarray,
) -> np.ndarray:
    Xi = X.copy()
    Xi[:, node_id] = x
    return model.predict_proba(Xi, C, propagation=propagation)


def do_forward(
    model: TrainedModel,
    dataset: CohortDataset,
    eval_idx,
    node_id: int,
    x: float,
    adjustment: AdjustmentBasis | None = None,
    renormalize: bool = True,
) -> InterventionalDistribution:
    """Per-subject and averaged class probabilities under ``do(X_j = x)``."""
    X, C = model_inputs(model, dataset, eval_idx, adjustment)
    P = intervened_probs(model, X, C, node_id, x, sever_node(model.adjacency, node_id, renormalize))
    return InterventionalDistribution(int(node_id), float(x), P.mean(axis=0), P)


def contrast_per_subject(
    model: TrainedModel,
    X: np.ndarray,
    C: np.ndarray,
    levels: InterventionLevels,
    renormalize: bool = True,
) -> np.ndarray:
    """Per-subject ``p(x_hi) - p(x_lo)``, shape (n, 3)."""
    j = levels.node_id
    At = sever_node(model.adjacency, j, renormalize)
    hi = intervened_probs(model, X, C, j, levels.x_hi, At)
    lo = intervened_probs(model, X, C, j, levels.x_lo, At)
    return hi - lo


def delta(
    model: TrainedModel,
    dataset: CohortDataset,
    eval_idx,
    node_id: int,
    levels: InterventionLevels,
    adjustment: AdjustmentBasis | None = None,
    renormalize: bool = True,
) -> np.ndarray:
    """Interventional contrast per class: mean p(x_hi) minus mean p(x_lo)."""
    if levels.node_id not in (-1, node_id):
        raise ValueError(f"levels were computed for node {levels.node_id}, not {node_id}")
    hi = do_forward(model, dataset, eval_idx, node_id, levels.x_hi, adjustment, renormalize)
    lo = do_forward(model, dataset, eval_idx, node_id, levels.x_lo, adjustment, renormalize)
    return hi.mean_probs - lo.mean_probs
