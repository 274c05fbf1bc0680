"""Cohort datasets sharing one adjacency: CSV I/O, scaling, graph prep, folds."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

CLASS_NAMES = ("CN", "MCI", "AD")
SYMMETRY_TOL = 1e-9
DEFAULT_TARGET_DENSITY = 0.15
VAL_FRACTION = 0.2


class CohortError(ValueError):
    """Malformed or inconsistent cohort input."""


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class CohortDataset:
    adjacency: np.ndarray
    features: np.ndarray
    covariates: np.ndarray
    labels: np.ndarray
    node_names: tuple[str, ...]
    class_names: tuple[str, ...] = CLASS_NAMES
    subject_ids: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ("age", "sex", "apoe4")

    @property
    def n_subjects(self) -> int:
        return self.features.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.features.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx) -> "CohortDataset":
        idx = np.asarray(idx, dtype=np.int64)
        ids = tuple(self.subject_ids[i] for i in idx) if self.subject_ids else ()
        return replace(
            self,
            features=self.features[idx],
            covariates=self.covariates[idx],
            labels=self.labels[idx],
            subject_ids=ids,
        )


@dataclass(frozen=True)
class ScalerState:
    feature_mean: np.ndarray
    feature_sd: np.ndarray
    covariate_mean: np.ndarray
    covariate_sd: np.ndarray
    sd_convention: str = "population"

    def transform(self, dataset: CohortDataset) -> CohortDataset:
        return replace(
            dataset,
            features=self.transform_features(dataset.features),
            covariates=self.transform_covariates(dataset.covariates),
        )

    def transform_features(self, X: np.ndarray) -> np.ndarray:
        return (X - self.feature_mean) / self.feature_sd

    def transform_covariates(self, C: np.ndarray) -> np.ndarray:
        return (C - self.covariate_mean) / self.covariate_sd

    def to_dict(self) -> dict:
        return {
            "feature_mean": self.feature_mean.tolist(),
            "feature_sd": self.feature_sd.tolist(),
            "covariate_mean": self.covariate_mean.tolist(),
            "covariate_sd": self.covariate_sd.tolist(),
            "sd_convention": self.sd_convention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerState":
        return cls(
            feature_mean=np.asarray(d["feature_mean"], dtype=float),
            feature_sd=np.asarray(d["feature_sd"], dtype=float),
            covariate_mean=np.asarray(d["covariate_mean"], dtype=float),
            covariate_sd=np.asarray(d["covariate_sd"], dtype=float),
            sd_convention=d.get("sd_convention", "population"),
        )


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def _subject_sort_key(ids: Sequence[str]):
    if all(_is_int(s) for s in ids):
        return lambda s: (int(s), s)
    return lambda s: s


def _is_int(s: str) -> bool:
    try:
        int(s)
    except ValueError:
        return False
    return True


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise CohortError(f"{path}: empty file (header row required)")
    return [h.strip() for h in rows[0]], rows[1:]


def _parse_float(cell: str, path: Path, row: int, col: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise CohortError(f"{path}: non-numeric cell {cell!r} at row {row}, column {col}") from None
    if not math.isfinite(v):
        raise CohortError(f"{path}: non-finite cell {cell!r} at row {row}, column {col}")
    return v


def _read_subject_table(path: Path) -> tuple[list[str], dict[str, list[str]]]:
    header, rows = _read_csv(path)
    if not header or header[0] != "subject_id":
        raise CohortError(f"{path}: first header column must be 'subject_id'")
    table: dict[str, list[str]] = {}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise CohortError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        sid = row[0].strip()
        if sid in table:
            raise CohortError(f"{path}: duplicate subject_id {sid!r} at row {r}")
        table[sid] = row[1:]
    return header[1:], table


def _parse_label(cell: str, class_names: Sequence[str], path: Path, row: int) -> int:
    s = cell.strip()
    if s in class_names:
        return class_names.index(s)
    if _is_int(s) and 0 <= int(s) < len(class_names):
        return int(s)
    raise CohortError(f"{path}: unknown class {s!r} at row {row}")


def read_adjacency(path: Path, node_names: Sequence[str] | None = None) -> np.ndarray:
    """Dense p x p CSV (header = node names) or an edge list with src,dst,weight."""
    path = Path(path)
    header, rows = _read_csv(path)
    if [h.lower() for h in header[:3]] == ["src", "dst", "weight"]:
        if node_names is None:
            raise CohortError(f"{path}: edge list needs node names from the features file")
        index = {name: i for i, name in enumerate(node_names)}
        p = len(node_names)
        A = np.zeros((p, p))
        for r, row in enumerate(rows, start=1):
            if len(row) < 3:
                raise CohortError(f"{path}: row {r} is not a src,dst,weight triple")
            ends = []
            for col, tok in enumerate(row[:2]):
                tok = tok.strip()
                if tok in index:
                    ends.append(index[tok])
                elif _is_int(tok) and 0 <= int(tok) < p:
                    ends.append(int(tok))
                else:
                    raise CohortError(f"{path}: unknown node {tok!r} at row {r}, column {col}")
            w = _parse_float(row[2], path, r, 2)
            a, b = ends
            A[a, b] = A[b, a] = max(A[a, b], w)
        return A
    p = len(header)
    if len(rows) != p:
        raise CohortError(f"{path}: adjacency must be square, got {len(rows)} rows x {p} columns")
    A = np.empty((p, p))
    for r, row in enumerate(rows):
        if len(row) != p:
            raise CohortError(f"{path}: adjacency row {r} has {len(row)} cells, expected {p}")
        for c, cell in enumerate(row):
            A[r, c] = _parse_float(cell, path, r, c)
    return A


def validate_adjacency(A: np.ndarray, tol: float = SYMMETRY_TOL, raw: bool = False) -> None:
    """Raise CohortError on shape, symmetry or sign problems.

    ``raw=True`` skips the zero-diagonal and [0, 1] checks for matrices that
    still go through :func:`threshold_and_rescale`.
    """
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise CohortError(f"adjacency must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise CohortError("adjacency contains non-finite entries")
    bad = np.argwhere(np.abs(A - A.T) > tol)
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise CohortError(f"asymmetric adjacency at cell ({i},{j}): {A[i, j]!r} != {A[j, i]!r}")
    neg = np.argwhere(A < 0)
    if neg.size:
        i, j = (int(v) for v in neg[0])
        raise CohortError(f"negative adjacency weight at cell ({i},{j})")
    if raw:
        return
    if np.any(np.diag(A) != 0):
        i = int(np.flatnonzero(np.diag(A) != 0)[0])
        raise CohortError(f"nonzero adjacency diagonal at cell ({i},{i})")
    if A.max(initial=0.0) > 1.0:
        i, j = (int(v) for v in np.argwhere(A > 1.0)[0])
        raise CohortError(f"adjacency weight above 1 at cell ({i},{j}); rescale first")


def load_cohort(
    features_path,
    covariates_path,
    labels_path,
    adjacency_path,
    class_names: Sequence[str] = CLASS_NAMES,
    raw_adjacency: bool = False,
) -> CohortDataset:
    """Read the four cohort CSVs, join on subject_id and validate.

    Subjects are ordered by sorted subject_id (numerically when every id is an
    integer).  Values are returned unstandardized.
    """
    features_path, covariates_path = Path(features_path), Path(covariates_path)
    labels_path, adjacency_path = Path(labels_path), Path(adjacency_path)

    node_names, ftab = _read_subject_table(features_path)
    cov_names, ctab = _read_subject_table(covariates_path)
    _, ltab = _read_subject_table(labels_path)

    if not (len(ftab) == len(ctab) == len(ltab)):
        raise CohortError(
            f"row counts disagree: features={len(ftab)}, covariates={len(ctab)}, labels={len(ltab)}"
        )
    for other, tab in ((covariates_path, ctab), (labels_path, ltab)):
        missing = sorted(set(ftab) - set(tab))
        if missing:
            raise CohortError(f"{other}: subject_id {missing[0]!r} missing")

    ids = sorted(ftab, key=_subject_sort_key(list(ftab)))
    X = np.array(
        [[_parse_float(c, features_path, r, k + 1) for k, c in enumerate(ftab[s])] for r, s in enumerate(ids, 1)]
    ).reshape(len(ids), len(node_names))
    C = np.array(
        [[_parse_float(c, covariates_path, r, k + 1) for k, c in enumerate(ctab[s])] for r, s in enumerate(ids, 1)]
    ).reshape(len(ids), len(cov_names))
    y = np.array([_parse_label(ltab[s][0], class_names, labels_path, r) for r, s in enumerate(ids, 1)], dtype=np.int64)

    A = read_adjacency(adjacency_path, node_names)
    if A.shape[0] != len(node_names):
        raise CohortError(
            f"dimension mismatch: adjacency is {A.shape[0]}x{A.shape[1]} but features have {len(node_names)} nodes"
        )
    validate_adjacency(A, raw=raw_adjacency)
    return CohortDataset(
        adjacency=A,
        features=X,
        covariates=C,
        labels=y,
        node_names=tuple(node_names),
        class_names=tuple(class_names),
        subject_ids=tuple(ids),
        covariate_names=tuple(cov_names),
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_cohort(dataset: CohortDataset, out_dir) -> dict[str, Path]:
    """Write the canonical four-file CSV bundle; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = dataset.subject_ids or tuple(str(i) for i in range(dataset.n_subjects))
    paths = {
        "features": out / "features.csv",
        "covariates": out / "covariates.csv",
        "labels": out / "labels.csv",
        "adjacency": out / "adjacency.csv",
    }
    with open(paths["features"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *dataset.node_names])
        for sid, row in zip(ids, dataset.features):
            w.writerow([sid, *(_fmt(v) for v in row)])
    with open(paths["covariates"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *dataset.covariate_names])
        for sid, row in zip(ids, dataset.covariates):
            w.writerow([sid, *(_fmt(v) for v in row)])
    with open(paths["labels"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "label"])
        for sid, lab in zip(ids, dataset.labels):
            w.writerow([sid, dataset.class_names[int(lab)]])
    with open(paths["adjacency"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.node_names)
        for row in dataset.adjacency:
            w.writerow([_fmt(v) for v in row])
    return paths


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


def _moments(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = M.mean(axis=0)
    sd = M.std(axis=0)  # population convention (ddof=0)
    const = np.all(M == M[0], axis=0)
    # constant column -> sd 1 and exact centering, so it maps to all zeros
    return np.where(const, M[0], mu), np.where(const, 1.0, sd)


def fit_scaler(dataset: CohortDataset, fit_idx) -> ScalerState:
    fit_idx = np.asarray(fit_idx, dtype=np.int64)
    if fit_idx.size == 0:
        raise ValueError("fit_idx must be nonempty")
    fm, fs = _moments(dataset.features[fit_idx])
    cm, cs = _moments(dataset.covariates[fit_idx]) if dataset.n_covariates else (np.zeros(0), np.ones(0))
    return ScalerState(fm, fs, cm, cs)


def standardize(dataset: CohortDataset, fit_idx) -> tuple[CohortDataset, ScalerState]:
    """Z-score features and covariates with moments taken over ``fit_idx`` only."""
    scaler = fit_scaler(dataset, fit_idx)
    return scaler.transform(dataset), scaler


# ---------------------------------------------------------------------------
# adjacency preparation
# ---------------------------------------------------------------------------


class ThresholdResult(NamedTuple):
    adjacency: np.ndarray
    tau: float
    density: float


def edge_density(A: np.ndarray) -> float:
    p = A.shape[0]
    if p < 2:
        return 0.0
    off = A[~np.eye(p, dtype=bool)]
    return float(np.count_nonzero(off) / off.size)


def threshold_and_rescale(
    adjacency: np.ndarray,
    tau: float | None = None,
    target_density: float | None = None,
) -> ThresholdResult:
    """Symmetrize (elementwise max), drop weights below ``tau``, rescale to [0, 1].

    When ``target_density`` is given, ``tau`` is the weight quantile that keeps
    that fraction of off-diagonal pairs.  With neither argument a 15% density is
    targeted.  Surviving weights are divided by the largest survivor so the
    weakest kept edge stays nonzero.
    """
    A = np.asarray(adjacency, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {A.shape}")
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        raise GraphError("adjacency must be finite and nonnegative")
    if tau is not None and target_density is not None:
        raise GraphError("give either tau or target_density, not both")
    p = A.shape[0]
    S = np.maximum(A, A.T)
    np.fill_diagonal(S, 0.0)
    iu = np.triu_indices(p, k=1)
    w = S[iu]
    if tau is None:
        density = DEFAULT_TARGET_DENSITY if target_density is None else float(target_density)
        if not 0.0 < density <= 1.0:
            raise GraphError(f"target_density must lie in (0, 1], got {density}")
        n_keep = int(round(density * w.size))
        positive = np.sort(w[w > 0])[::-1]
        if n_keep == 0 or positive.size == 0:
            tau = np.inf
        else:
            tau = float(positive[min(n_keep, positive.size) - 1])
    keep = (S >= tau) & (S > 0)
    out = np.where(keep, S, 0.0)
    if not np.any(out):
        raise GraphError("graph fully disconnected after thresholding")
    out = out / out.max()
    res = ThresholdResult(out, float(tau), edge_density(out))
    log.info("thresholded adjacency at tau=%.6g, density=%.4f", res.tau, res.density)
    return res


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Propagation matrix D^-1/2 (A + I) D^-1/2, D the degree matrix of A + I."""
    A = np.asarray(adjacency, dtype=float)
    At = A + np.eye(A.shape[0])
    dinv = 1.0 / np.sqrt(At.sum(axis=1))
    # outer product first so the result is exactly symmetric
    return At * (dinv[:, None] * dinv[None, :])


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------


def stratified_kfold(labels, k: int, seed: int) -> list[FoldSplit]:
    """Stratified k folds with a stratified 20% validation carve of each training part.

    Subjects of each class are shuffled and dealt round-robin across folds, the
    deal continuing from class to class so fold sizes differ by at most one.
    ``k == len(labels)`` gives leave-one-out and skips the per-class size check.
    """
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    if k < 2 or k > n:
        raise ValueError(f"k must be in [2, {n}], got {k}")
    classes = np.unique(y)
    if k < n:
        for c in classes:
            cnt = int(np.sum(y == c))
            if cnt < k:
                raise ValueError(f"class {int(c)} has {cnt} members, fewer than k={k}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in classes])
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % k

    splits = []
    for f in range(k):
        test = np.sort(np.flatnonzero(fold_of == f))
        rest = np.flatnonzero(fold_of != f)
        train, val = [], []
        for c in classes:
            members = rng.permutation(rest[y[rest] == c])
            n_val = int(round(VAL_FRACTION * members.size))
            if n_val >= members.size:
                n_val = members.size - 1
            cut = members.size - n_val
            train.append(members[:cut])
            val.append(members[cut:])
        splits.append(
            FoldSplit(
                fold_id=f,
                train_idx=np.sort(np.concatenate(train)),
                val_idx=np.sort(np.concatenate(val)),
                test_idx=test,
            )
        )
    return splits
