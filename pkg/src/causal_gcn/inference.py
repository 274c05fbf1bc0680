"""Cross-validated effect estimation, bootstrap intervals, rankings, AUC and ablation."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import _kernels
from .backdoor import AdjustmentBasis, DEFAULT_N_PCS, fit_all_bases, project, save_bases
from .gcn_model import NumericalError, TrainConfig, TrainedModel, save_checkpoint, train
from .graph_data import CohortDataset, FoldSplit, stratified_kfold
from .intervention import InterventionLevels, compute_levels, contrast_per_subject, model_inputs, sever_node

log = logging.getLogger(__name__)

REPORT_VERSION = "causal-gcn-report/1"
AD = 2


class PipelineError(RuntimeError):
    def __init__(self, message: str, fold_errors: dict[int, str] | None = None, numeric: bool = False):
        super().__init__(message)
        self.fold_errors = fold_errors or {}
        self.numeric = numeric


@dataclass
class PipelineConfig:
    k_folds: int = 5
    seed: int = 0
    hidden: int = 64
    dropout: float = 0.5
    learning_rate: float = 1e-3
    ridge: float = 1e-4
    epochs: int = 200
    batch_size: int | None = None
    batchnorm: bool = False
    cov_hidden: int = 16
    n_pcs: int = DEFAULT_N_PCS
    pct_lo: float = 10.0
    pct_hi: float = 90.0
    clip_lo: float = 0.01
    clip_hi: float = 0.99
    n_bootstrap: int = 200
    alpha: float = 0.05
    conditioning: str = "implicit"
    renormalize: bool = True
    baselines: bool = True
    strict: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.conditioning not in ("implicit", "explicit"):
            raise ValueError(f"conditioning must be 'implicit' or 'explicit', got {self.conditioning!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.n_bootstrap < 2:
            raise ValueError("n_bootstrap must be >= 2")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        self.train_config(0)  # validates the training fields

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            hidden=self.hidden, dropout=self.dropout, learning_rate=self.learning_rate, ridge=self.ridge,
            epochs=self.epochs, batch_size=self.batch_size, batchnorm=self.batchnorm, seed=seed,
            cov_hidden=self.cov_hidden,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def auc(labels, scores, n_classes: int = 3) -> float:
    """Macro one-vs-rest ROC AUC; ties count 1/2.

    A class with no positives or no negatives in ``labels`` is skipped with a
    warning and the macro average is taken over the rest.
    """
    y = np.asarray(labels, dtype=np.int64)
    S = np.asarray(scores, dtype=float).reshape(y.size, n_classes)
    vals = []
    for c in range(n_classes):
        pos = y == c
        if pos.all() or not pos.any():
            warnings.warn(f"class {c} has no positives or no negatives; skipped in macro AUC", stacklevel=2)
            continue
        vals.append(_kernels.auc_binary(S[:, c], pos))
    return float(np.mean(vals)) if vals else float("nan")


def _spearman(a, b) -> float | None:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size < 2 or np.all(a == a[0]) or np.all(b == b[0]):
        return None
    return float(spearmanr(a, b).statistic)


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    replicates: np.ndarray  # B x p x 3
    mean: np.ndarray
    var: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    alpha: float


def resample_indices(rng: np.random.Generator, n: int, n_boot: int) -> np.ndarray:
    return rng.integers(0, n, size=(n_boot, n))


def bootstrap_effects(
    contrasts: list[np.ndarray],
    n_boot: int,
    alpha: float = 0.05,
    seed: int = 0,
    indices: list[np.ndarray] | None = None,
) -> BootstrapResult:
    """Percentile bootstrap over evaluation subjects with models held fixed.

    ``contrasts[k]`` is fold k's per-subject contrast array (n_k, p, 3).  Each
    replicate resamples every fold's subjects with replacement, averages within
    fold, then across folds.  ``indices`` overrides the resampling draws.
    """
    if n_boot < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    rng = np.random.default_rng(seed)
    total = None
    for k, D in enumerate(contrasts):
        n, p, c = D.shape
        idx = indices[k] if indices is not None else resample_indices(rng, n, n_boot)
        reps = _kernels.bootstrap_means(D.reshape(n, p * c), idx).reshape(n_boot, p, c)
        total = reps if total is None else total + reps
    reps = total / len(contrasts)
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2], axis=0)
    # shift by one replicate so identical replicates give exactly zero variance
    dev = reps - reps[0]
    return BootstrapResult(reps, reps[0] + dev.mean(axis=0), dev.var(axis=0, ddof=1), lo, hi, alpha)


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------


@dataclass
class EffectEstimate:
    node_id: int
    node_name: str
    cls: str
    delta_mean: float
    boot_mean: float
    boot_var: float
    ci_lo: float
    ci_hi: float
    abs_delta_ad: float
    rank: int = 0


def rank_order(abs_ad: np.ndarray) -> np.ndarray:
    """Node ids by descending |effect|, ties by ascending node id."""
    v = np.asarray(abs_ad, dtype=float)
    return np.lexsort((np.arange(v.size), -v))


def rank_effects(estimates: list[EffectEstimate]) -> list[EffectEstimate]:
    """Sort by |AD effect| descending (node id breaks ties) and assign 1-based ranks."""
    by_node: dict[int, float] = {}
    for e in estimates:
        by_node[e.node_id] = e.abs_delta_ad
    nodes = sorted(by_node)
    order = rank_order(np.array([by_node[j] for j in nodes]))
    rank = {nodes[i]: r + 1 for r, i in enumerate(order)}
    for e in estimates:
        e.rank = rank[e.node_id]
    return sorted(estimates, key=lambda e: e.rank)


def format_leverage(delta_ad: float) -> str:
    """The 100 x |effect| column, four decimals."""
    return f"{100.0 * abs(delta_ad):.4f}"


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------


def ablated_auc(model: TrainedModel, X: np.ndarray, C: np.ndarray, y: np.ndarray, node_id: int, renormalize: bool = True) -> float:
    Xa = X.copy()
    Xa[:, node_id] = 0.0
    return auc(y, model.predict_proba(Xa, C, propagation=sever_node(model.adjacency, node_id, renormalize)))


def ablation_auc(
    model: TrainedModel,
    dataset: CohortDataset,
    eval_idx,
    node_id: int,
    adjustment: AdjustmentBasis | None = None,
    renormalize: bool = True,
) -> float:
    """AUC drop when node ``node_id`` is zeroed and cut off at evaluation time (no retraining)."""
    X, C = model_inputs(model, dataset, eval_idx, adjustment)
    y = dataset.labels[np.asarray(eval_idx, dtype=np.int64)]
    return auc(y, model.predict_proba(X, C)) - ablated_auc(model, X, C, y, node_id, renormalize)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    fold_id: int
    seed: int
    n_train: int
    n_val: int
    n_eval: int
    auc_model: float
    auc_mlp: float | None
    auc_gcn: float | None
    best_epoch: int
    levels: list[InterventionLevels]
    deltas: np.ndarray  # p x 3
    contrasts: np.ndarray  # n_eval x p x 3
    ablation: np.ndarray  # p
    n_pcs: int
    bases: list[AdjustmentBasis] = field(repr=False, default_factory=list)
    model: TrainedModel | None = field(repr=False, default=None)


@dataclass
class RunReport:
    config: dict
    node_names: list[str]
    class_names: list[str]
    folds: list[FoldResult]
    effects: list[EffectEstimate]
    per_fold_deltas: np.ndarray  # K x p x 3
    delta_hat: np.ndarray  # p x 3
    bootstrap: BootstrapResult
    ablation: np.ndarray  # p, averaged over folds
    concordance: dict
    fold_errors: dict[int, str]
    backend: str

    def auc_summary(self) -> dict:
        out = {}
        for key in ("auc_model", "auc_mlp", "auc_gcn"):
            vals = [getattr(f, key) for f in self.folds if getattr(f, key) is not None]
            out[key] = {
                "per_fold": vals,
                "mean": float(np.mean(vals)) if vals else None,
                "sd": float(np.std(vals, ddof=1)) if len(vals) > 1 else None,
            }
        return out

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "provenance": {"config": self.config, "backend": self.backend,
                           "fold_seeds": {str(f.fold_id): f.seed for f in self.folds}},
            "nodes": self.node_names,
            "classes": self.class_names,
            "auc": self.auc_summary(),
            "folds": [
                {
                    "fold": f.fold_id, "n_train": f.n_train, "n_val": f.n_val, "n_eval": f.n_eval,
                    "best_epoch": f.best_epoch, "n_pcs": f.n_pcs,
                    "auc_model": f.auc_model, "auc_mlp": f.auc_mlp, "auc_gcn": f.auc_gcn,
                    "levels": [[lv.x_lo, lv.x_hi] for lv in f.levels],
                    "delta": f.deltas.tolist(),
                    "ablation_auc_drop": f.ablation.tolist(),
                }
                for f in self.folds
            ],
            "effects": [asdict(e) for e in self.effects],
            "ablation": [
                {"node_id": j, "node_name": self.node_names[j], "delta_auc_self": float(v)}
                for j, v in enumerate(self.ablation)
            ],
            "concordance": self.concordance,
            "fold_errors": {str(k): v for k, v in self.fold_errors.items()},
            "notes": {
                "ci_target": "bootstrap intervals describe the trained models' population contrast on the "
                             "evaluation subjects, not the true data-generating effect",
                "effect_scale": "raw probability differences; presentation may scale by 100",
                "bootstrap": "evaluation subjects resampled per fold with models and intervention levels fixed",
            },
        }


def _fold_seed(seed: int, fold: int, purpose: int) -> int:
    return int(np.random.SeedSequence([seed, fold, purpose]).generate_state(1)[0])


def _run_fold(dataset: CohortDataset, split: FoldSplit, cfg: PipelineConfig, keep_model: bool = False) -> FoldResult:
    f = split.fold_id
    seed = _fold_seed(cfg.seed, f, 0)
    tcfg = cfg.train_config(seed)
    model = train(dataset, split, tcfg)
    test = np.asarray(split.test_idx, dtype=np.int64)
    y = dataset.labels[test]
    X, C = model_inputs(model, dataset, test)
    auc_model = auc(y, model.predict_proba(X, C))
    auc_mlp = auc_gcn = None
    if cfg.baselines:
        mlp = train(dataset, split, cfg.train_config(_fold_seed(cfg.seed, f, 1)), kind="mlp")
        auc_mlp = auc(y, mlp.predict_proba(X, C))
        van = train(dataset, split, cfg.train_config(_fold_seed(cfg.seed, f, 2)), kind="gcn-vanilla")
        auc_gcn = auc(y, van.predict_proba(X, C))

    p = dataset.n_nodes
    Xs_all = model.scaler.transform_features(dataset.features)
    n_pcs = min(cfg.n_pcs, p - 1, split.train_idx.size)
    bases = fit_all_bases(Xs_all, split.train_idx, n_pcs) if n_pcs >= 1 else []

    levels, contrasts, ablation = [], np.empty((test.size, p, 3)), np.empty(p)
    for j in range(p):
        lv = compute_levels(X[:, j], cfg.pct_lo, cfg.pct_hi, (cfg.clip_lo, cfg.clip_hi), node_id=j)
        levels.append(lv)
        if cfg.conditioning == "explicit" and bases:
            extra = project(bases[j], Xs_all)
            mj = train(dataset, split, cfg.train_config(_fold_seed(cfg.seed, f, 100 + j)), extra_covariates=extra)
            Xj, Cj = model_inputs(mj, dataset, test, bases[j])
            contrasts[:, j, :] = contrast_per_subject(mj, Xj, Cj, lv, cfg.renormalize)
            base = auc(y, mj.predict_proba(Xj, Cj))
            ablation[j] = base - ablated_auc(mj, Xj, Cj, y, j, cfg.renormalize)
        else:
            contrasts[:, j, :] = contrast_per_subject(model, X, C, lv, cfg.renormalize)
            ablation[j] = auc_model - ablated_auc(model, X, C, y, j, cfg.renormalize)
    log.info("fold %d: auc=%.4f best_epoch=%d", f, auc_model, model.best_epoch)
    return FoldResult(
        fold_id=f, seed=seed, n_train=int(split.train_idx.size), n_val=int(split.val_idx.size), n_eval=int(test.size),
        auc_model=auc_model, auc_mlp=auc_mlp, auc_gcn=auc_gcn, best_epoch=model.best_epoch,
        levels=levels, deltas=contrasts.mean(axis=0), contrasts=contrasts, ablation=ablation, n_pcs=n_pcs,
        bases=bases, model=model if keep_model else None,
    )


def run_pipeline(dataset: CohortDataset, config: PipelineConfig, keep_models: bool = False) -> RunReport:
    """Train per fold, intervene on every node, then aggregate, bootstrap and rank."""
    splits = stratified_kfold(dataset.labels, config.k_folds, config.seed)

    def attempt(split):
        try:
            return _run_fold(dataset, split, config, keep_models)
        except (ValueError, ArithmeticError, IndexError) as exc:
            log.error("fold %d aborted: %s", split.fold_id, exc)
            return exc

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(attempt, splits))
    else:
        outcomes = [attempt(s) for s in splits]

    errors = {s.fold_id: f"{type(o).__name__}: {o}" for s, o in zip(splits, outcomes) if isinstance(o, Exception)}
    folds = [o for o in outcomes if isinstance(o, FoldResult)]
    numeric = any(isinstance(o, ArithmeticError) for o in outcomes)
    if errors and (config.strict or not folds):
        raise PipelineError(f"{len(errors)} of {len(splits)} folds aborted: {errors}", errors, numeric)
    if errors:
        warnings.warn(f"averaging over {len(folds)} completed folds; aborted: {sorted(errors)}", stacklevel=2)

    per_fold = np.stack([f.deltas for f in folds])
    delta_hat = per_fold.mean(axis=0)
    boot = bootstrap_effects([f.contrasts for f in folds], config.n_bootstrap, config.alpha,
                             seed=_fold_seed(config.seed, 0, 3))
    ablation = np.mean([f.ablation for f in folds], axis=0)

    abs_ad = np.abs(delta_hat[:, AD])
    estimates = []
    for j in range(dataset.n_nodes):
        for c, cname in enumerate(dataset.class_names):
            estimates.append(EffectEstimate(
                node_id=j, node_name=dataset.node_names[j], cls=cname,
                delta_mean=float(delta_hat[j, c]), boot_mean=float(boot.mean[j, c]), boot_var=float(boot.var[j, c]),
                ci_lo=float(boot.ci_lo[j, c]), ci_hi=float(boot.ci_hi[j, c]), abs_delta_ad=float(abs_ad[j]),
            ))
    estimates = rank_effects(estimates)
    return RunReport(
        config=asdict(config),
        node_names=list(dataset.node_names),
        class_names=list(dataset.class_names),
        folds=folds,
        effects=estimates,
        per_fold_deltas=per_fold,
        delta_hat=delta_hat,
        bootstrap=boot,
        ablation=ablation,
        concordance=concordance(per_fold, boot, delta_hat, ablation),
        fold_errors=errors,
        backend=_kernels.backend(),
    )


def concordance(per_fold: np.ndarray, boot: BootstrapResult, delta_hat: np.ndarray, ablation: np.ndarray) -> dict:
    ad = per_fold[:, :, AD]
    signs = np.sign(ad)
    sign_agree = [bool(np.all(signs[:, j] == signs[0, j]) and signs[0, j] != 0) for j in range(ad.shape[1])]
    pair = [_spearman(np.abs(ad[a]), np.abs(ad[b])) for a, b in combinations(range(ad.shape[0]), 2)]
    pair = [v for v in pair if v is not None]
    boot_sign = np.mean(np.sign(boot.replicates[:, :, AD]) == np.sign(delta_hat[:, AD]), axis=0)
    return {
        "spearman_abs_delta_vs_ablation": _spearman(np.abs(delta_hat[:, AD]), ablation),
        "rank_stability_mean_pairwise_spearman": float(np.mean(pair)) if pair else None,
        "fold_sign_agreement": sign_agree,
        "bootstrap_sign_agreement": boot_sign.tolist(),
    }


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def write_report(report: RunReport, out_dir, checkpoints: bool = True) -> list[Path]:
    """Write report.json, effects.csv, effects_raw.csv, ablation.csv, folds.csv and adjustment/."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rj = out / "report.json"
    rj.write_text(json.dumps(report.to_dict(), indent=1, allow_nan=False, default=_json_default) + "\n", encoding="utf-8")
    written.append(rj)

    eff = out / "effects.csv"
    with open(eff, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "node_name", "class", "delta_mean", "ci_lo", "ci_hi", "abs_delta_ad", "rank"])
        for e in report.effects:
            w.writerow([e.node_id, e.node_name, e.cls, _num(e.delta_mean), _num(e.ci_lo), _num(e.ci_hi),
                        _num(e.abs_delta_ad), e.rank])
    written.append(eff)

    raw = out / "effects_raw.csv"
    with open(raw, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "node_id", "class", "x_lo", "x_hi", "delta"])
        for f in report.folds:
            for j, lv in enumerate(f.levels):
                for c, cname in enumerate(report.class_names):
                    w.writerow([f.fold_id, j, cname, _num(lv.x_lo), _num(lv.x_hi), _num(f.deltas[j, c])])
    written.append(raw)

    abl = out / "ablation.csv"
    with open(abl, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "node_name", "delta_auc_self"])
        for j, v in enumerate(report.ablation):
            w.writerow([j, report.node_names[j], _num(v)])
    written.append(abl)

    fo = out / "folds.csv"
    with open(fo, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "auc_model", "auc_mlp", "auc_gcn"])
        for f in report.folds:
            w.writerow([f.fold_id, _num(f.auc_model), _num(f.auc_mlp), _num(f.auc_gcn)])
    written.append(fo)

    save_bases({f.fold_id: f.bases for f in report.folds if f.bases}, out / "adjustment")
    if checkpoints:
        models = [f for f in report.folds if f.model is not None]
        if models:
            (out / "models").mkdir(exist_ok=True)
            for f in models:
                save_checkpoint(f.model, out / "models" / f"fold{f.fold_id}.json")
    return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


__all__ = [
    "PipelineConfig", "PipelineError", "RunReport", "EffectEstimate", "BootstrapResult", "FoldResult",
    "auc", "bootstrap_effects", "rank_effects", "rank_order", "format_leverage", "ablation_auc",
    "run_pipeline", "write_report", "NumericalError",
]
