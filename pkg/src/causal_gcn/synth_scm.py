"""Synthetic cohorts from a known structural causal model, plus ground-truth effects.

Structural equations, per subject::

    age ~ N(0, 1);  sex = +/-1 w.p. 1/2;  apoe4 = +1 w.p. 0.3 else -1
    g ~ N(0, I_p)
    X = C @ loadings + latent_scale * (A_norm @ g) + noise_sd * eps
    s = X @ outcome_weights + C @ confounder_outcome_weights
    logits = (0, 0.5 * s + mci_intercept, s + ad_intercept)
    Y ~ Categorical(softmax(logits))

No node feature causes another, so the effect of ``do(X_j = x)`` on ``Y`` is
exactly zero for every node with a zero outcome weight.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph_data import CLASS_NAMES, CohortDataset, normalize_adjacency, write_cohort

COVARIATE_NAMES = ("age", "sex", "apoe4")
APOE4_RATE = 0.3


@dataclass
class ScmSpec:
    p: int
    adjacency: np.ndarray
    confounder_loadings: np.ndarray  # q x p
    outcome_weights: np.ndarray  # p
    confounder_outcome_weights: np.ndarray  # q
    noise_sd: float = 1.0
    seed: int = 0
    latent_scale: float = 1.0
    mci_intercept: float = 0.0
    ad_intercept: float = 0.0
    causal_nodes: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=float)
        self.confounder_loadings = np.asarray(self.confounder_loadings, dtype=float).reshape(len(COVARIATE_NAMES), self.p)
        self.outcome_weights = np.asarray(self.outcome_weights, dtype=float).reshape(self.p)
        self.confounder_outcome_weights = np.asarray(self.confounder_outcome_weights, dtype=float).reshape(len(COVARIATE_NAMES))
        derived = tuple(int(j) for j in np.flatnonzero(self.outcome_weights))
        if self.causal_nodes and tuple(sorted(self.causal_nodes)) != derived:
            raise ValueError(f"causal_nodes {self.causal_nodes} disagree with nonzero outcome weights {derived}")
        self.causal_nodes = derived
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive")
        if self.adjacency.shape != (self.p, self.p):
            raise ValueError(f"adjacency must be {self.p}x{self.p}")

    @property
    def propagation(self) -> np.ndarray:
        return normalize_adjacency(self.adjacency)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["causal_nodes"] = list(self.causal_nodes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScmSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ScmSpec keys: {sorted(unknown)}")
        d = dict(d)
        d["causal_nodes"] = tuple(d.get("causal_nodes", ()))
        return cls(**d)


@dataclass
class GroundTruth:
    true_delta: np.ndarray  # AD-probability contrast per node
    standard_error: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    metadata: dict


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _draw_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    age = rng.standard_normal(n)
    sex = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    apoe = np.where(rng.random(n) < APOE4_RATE, 1.0, -1.0)
    return np.column_stack([age, sex, apoe])


def _draw_features(spec: ScmSpec, rng: np.random.Generator, C: np.ndarray) -> np.ndarray:
    n = C.shape[0]
    g = rng.standard_normal((n, spec.p))
    eps = rng.standard_normal((n, spec.p))
    return C @ spec.confounder_loadings + spec.latent_scale * (g @ spec.propagation.T) + spec.noise_sd * eps


def class_probabilities(spec: ScmSpec, X: np.ndarray, C: np.ndarray) -> np.ndarray:
    s = X @ spec.outcome_weights + C @ spec.confounder_outcome_weights
    logits = np.column_stack([np.zeros_like(s), 0.5 * s + spec.mci_intercept, s + spec.ad_intercept])
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _sample_labels(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] > cum).sum(axis=1), probs.shape[1] - 1).astype(np.int64)


def sample(spec: ScmSpec, n: int, rng: np.random.Generator):
    C = _draw_covariates(rng, n)
    X = _draw_features(spec, rng, C)
    y = _sample_labels(rng, class_probabilities(spec, X, C))
    return X, C, y


# ---------------------------------------------------------------------------
# interventional oracle
# ---------------------------------------------------------------------------


def oracle_delta(
    spec: ScmSpec,
    node_id: int,
    x_lo: float,
    x_hi: float,
    n_mc: int = 20_000,
    seed: int | None = None,
    cls: int = 2,
) -> tuple[float, float]:
    """Monte Carlo ``P(Y=cls | do(X_j=x_hi)) - P(Y=cls | do(X_j=x_lo))`` and its standard error.

    Both arms share the same draws, so the difference has low variance.
    """
    if n_mc < 10_000:
        raise ValueError("n_mc must be at least 10^4")
    rng = np.random.default_rng(spec.seed + 7919 * (node_id + 1) if seed is None else seed)
    C = _draw_covariates(rng, n_mc)
    X = _draw_features(spec, rng, C)
    X[:, node_id] = x_hi
    p_hi = class_probabilities(spec, X, C)[:, cls]
    X[:, node_id] = x_lo
    p_lo = class_probabilities(spec, X, C)[:, cls]
    diff = p_hi - p_lo
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n_mc))


def feature_percentiles(spec: ScmSpec, pct_lo: float = 10, pct_hi: float = 90, n: int = 200_000, seed: int = 12345):
    """Population percentiles of every node feature, raw scale."""
    rng = np.random.default_rng(seed)
    X = _draw_features(spec, rng, _draw_covariates(rng, n))
    return np.percentile(X, pct_lo, axis=0), np.percentile(X, pct_hi, axis=0)


def ground_truth(spec: ScmSpec, n_mc: int = 20_000, pct_lo: float = 10, pct_hi: float = 90) -> GroundTruth:
    lo, hi = feature_percentiles(spec, pct_lo, pct_hi)
    deltas, ses = np.zeros(spec.p), np.zeros(spec.p)
    for j in range(spec.p):
        deltas[j], ses[j] = oracle_delta(spec, j, lo[j], hi[j], n_mc=n_mc)
    meta = {"n_mc": n_mc, "pct_lo": pct_lo, "pct_hi": pct_hi, "class": "AD", "scale": "raw"}
    return GroundTruth(deltas, ses, lo, hi, meta)


def generate_cohort(spec: ScmSpec, n_subjects: int, n_mc: int = 20_000) -> tuple[CohortDataset, GroundTruth]:
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    rng = np.random.default_rng(spec.seed)
    X, C, y = sample(spec, n_subjects, rng)
    width = len(str(n_subjects))
    ds = CohortDataset(
        adjacency=spec.adjacency.copy(),
        features=X,
        covariates=C,
        labels=y,
        node_names=tuple(f"node{j}" for j in range(spec.p)),
        class_names=CLASS_NAMES,
        subject_ids=tuple(f"s{i:0{width}d}" for i in range(n_subjects)),
        covariate_names=COVARIATE_NAMES,
    )
    return ds, ground_truth(spec, n_mc=n_mc)


def write_simulation(dataset: CohortDataset, truth: GroundTruth, spec: ScmSpec, out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = list(write_cohort(dataset, out).values())
    gt = out / "ground_truth.csv"
    with open(gt, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "true_delta"])
        for j, v in enumerate(truth.true_delta):
            w.writerow([j, repr(float(v))])
    sj = out / "scm.json"
    sj.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths + [gt, sj]


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def random_adjacency(p: int, density: float, rng: np.random.Generator) -> np.ndarray:
    """Binary symmetric graph: a ring for connectivity plus random chords up to ``density``."""
    A = np.zeros((p, p))
    for j in range(p):
        A[j, (j + 1) % p] = A[(j + 1) % p, j] = 1.0
    iu = [(a, b) for a in range(p) for b in range(a + 1, p) if A[a, b] == 0]
    n_target = int(round(density * p * (p - 1) / 2)) - int(A.sum() // 2)
    if n_target > 0:
        for k in rng.permutation(len(iu))[:n_target]:
            a, b = iu[k]
            A[a, b] = A[b, a] = 1.0
    return A


def preset(name: str, seed: int = 0, p: int = 10) -> ScmSpec:
    """Named specs: ``null``, ``single-cause``, ``confounded``.

    ``single-cause`` has one causal node and age/APOE4 loading strongly onto four
    other nodes while also driving the outcome, so those four correlate with AD
    more than the causal node does.
    """
    rng = np.random.default_rng(seed)
    A = random_adjacency(p, 0.3, rng)
    loadings = np.zeros((3, p))
    w = np.zeros(p)
    gamma = np.zeros(3)
    if name == "null":
        pass
    elif name in ("single-cause", "confounded"):
        nodes = rng.permutation(p)
        causal, confounded = int(nodes[0]), nodes[1:5]
        loadings[0, confounded] = 1.5
        loadings[2, confounded] = 0.5
        gamma[:] = (1.2, 0.0, 0.6)
        if name == "single-cause":
            w[causal] = 0.8
    else:
        raise ValueError(f"unknown preset {name!r}; choose null, single-cause or confounded")
    return ScmSpec(
        p=p,
        adjacency=A,
        confounder_loadings=loadings,
        outcome_weights=w,
        confounder_outcome_weights=gamma,
        noise_sd=1.0,
        seed=seed,
        latent_scale=1.0,
        ad_intercept=-0.5,
        mci_intercept=0.3,
    )


PRESETS = ("null", "single-cause", "confounded")
