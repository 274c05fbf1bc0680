"""Two-layer GCN with a covariate branch, trained with Adam on ridge-penalized cross-entropy.

Shapes (one subject): X is p x 1, C is q'.  Batched code paths take X as
(n, p) and C as (n, q').  Gradients are written out by hand; the finite
difference checks in the test-suite are the reference.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _kernels
from .graph_data import CohortDataset, FoldSplit, ScalerState, fit_scaler, normalize_adjacency

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "causal-gcn-ckpt/1"
N_CLASSES = 3
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

GCN_NAMES = ("W0", "b0", "W1", "b1", "Wc", "bc", "Wo", "bo")
MLP_NAMES = ("M1", "m1", "M2", "m2", "Mo", "mo")
WEIGHT_NAMES = frozenset({"W0", "W1", "Wc", "Wo", "M1", "M2", "Mo"})


class NumericalError(ArithmeticError):
    """Non-finite activation or loss; carries where it happened."""

    def __init__(self, message: str, epoch: int | None = None, layer: str | None = None):
        self.epoch = epoch
        self.layer = layer
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if layer is not None:
            where.append(f"layer {layer}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass
class GcnParams:
    W0: np.ndarray
    b0: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    Wc: np.ndarray
    bc: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray
    # running batch-norm statistics for the first layer, None when disabled
    bn_mean: np.ndarray | None = None
    bn_var: np.ndarray | None = None

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_cov_inputs(self) -> int:
        return self.Wc.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in GCN_NAMES}

    def copy(self) -> "GcnParams":
        return copy.deepcopy(self)

    def check(self) -> None:
        d, dc = self.W1.shape[0], self.Wc.shape[1]
        expected = {
            "W0": (1, d), "b0": (d,), "W1": (d, d), "b1": (d,),
            "bc": (dc,), "Wo": (d + dc, N_CLASSES), "bo": (N_CLASSES,),
        }
        for k, shape in expected.items():
            if getattr(self, k).shape != shape:
                raise ValueError(f"{k} has shape {getattr(self, k).shape}, expected {shape}")
        for k, a in self.arrays().items():
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{k} contains non-finite values")


@dataclass
class TrainConfig:
    hidden: int = 64
    dropout: float = 0.5
    learning_rate: float = 1e-3
    ridge: float = 1e-4
    epochs: int = 200
    batch_size: int | None = None
    batchnorm: bool = False
    seed: int = 0
    cov_hidden: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0 or self.ridge <= 0:
            raise ValueError("learning_rate and ridge must be positive")
        if self.epochs < 0 or self.hidden < 1 or self.cov_hidden < 1:
            raise ValueError("epochs must be >= 0 and widths >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class TrainedModel:
    params: GcnParams | dict
    adjacency: np.ndarray
    propagation: np.ndarray
    scaler: ScalerState
    config: TrainConfig
    val_loss_history: np.ndarray
    best_epoch: int
    kind: str = "gcn"  # gcn | gcn-vanilla | mlp
    train_loss_history: np.ndarray = field(default_factory=lambda: np.empty(0))
    n_extra_covariates: int = 0

    def predict_proba(self, X: np.ndarray, C: np.ndarray, propagation: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode probabilities for standardized X (n, p) and covariate input C (n, q')."""
        X = np.atleast_2d(X)
        C = np.atleast_2d(C)
        if self.kind == "mlp":
            return mlp_predict(self.params, X, C)
        if self.kind == "gcn-vanilla":
            C = np.zeros_like(C)
        A = self.propagation if propagation is None else propagation
        return predict_proba(self.params, A, X, C)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_params(p_cov: int, hidden: int, cov_hidden: int, rng: np.random.Generator, batchnorm: bool = False) -> GcnParams:
    params = GcnParams(
        W0=_glorot(rng, 1, hidden),
        b0=np.zeros(hidden),
        W1=_glorot(rng, hidden, hidden),
        b1=np.zeros(hidden),
        Wc=_glorot(rng, p_cov, cov_hidden) if p_cov else np.zeros((0, cov_hidden)),
        bc=np.zeros(cov_hidden),
        Wo=_glorot(rng, hidden + cov_hidden, N_CLASSES),
        bo=np.zeros(N_CLASSES),
    )
    if batchnorm:
        params.bn_mean = np.zeros(hidden)
        params.bn_var = np.ones(hidden)
    return params


def zero_params(p_cov: int, hidden: int, cov_hidden: int) -> GcnParams:
    return GcnParams(
        W0=np.zeros((1, hidden)), b0=np.zeros(hidden), W1=np.zeros((hidden, hidden)), b1=np.zeros(hidden),
        Wc=np.zeros((p_cov, cov_hidden)), bc=np.zeros(cov_hidden),
        Wo=np.zeros((hidden + cov_hidden, N_CLASSES)), bo=np.zeros(N_CLASSES),
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _softmax_raw(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax(logits: np.ndarray) -> np.ndarray:
    # floor at the smallest normal double so no class probability underflows to 0
    return np.maximum(_softmax_raw(logits), _kernels.PROB_FLOOR)


def _finite(a: np.ndarray, layer: str, epoch: int | None) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite activation", epoch=epoch, layer=layer)


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(
    params: GcnParams,
    A: np.ndarray,
    X: np.ndarray,
    C: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
    epoch: int | None = None,
):
    """Class probabilities and a cache for :func:`backward`.

    ``mode="train"`` draws inverted-dropout masks from ``rng`` and uses batch
    statistics when batch norm is enabled; eval mode is deterministic.
    A single subject (X of shape (p,)) returns a 3-vector.
    """
    single = np.ndim(X) == 1
    X = np.atleast_2d(np.asarray(X, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and dropout > 0 and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    n, p = X.shape

    AX = X @ A.T
    pre1 = AX[:, :, None] * params.W0[0] + params.b0
    bn = None
    if params.bn_mean is not None:
        if train:
            mu = pre1.mean(axis=(0, 1))
            var = pre1.var(axis=(0, 1))
        else:
            mu, var = params.bn_mean, params.bn_var
        s = np.sqrt(var + BN_EPS)
        xhat = (pre1 - mu) / s
        bn = (mu, var, s, xhat)
        act1_in = xhat
    else:
        act1_in = pre1
    H1 = np.maximum(act1_in, 0.0)
    _finite(H1, "gcn1", epoch)
    M1 = _dropout_mask(rng, H1.shape, dropout) if (train and dropout > 0) else None
    H1d = H1 * M1 if M1 is not None else H1

    AH = np.matmul(A, H1d)
    pre2 = AH @ params.W1 + params.b1
    H2 = np.maximum(pre2, 0.0)
    _finite(H2, "gcn2", epoch)
    M2 = _dropout_mask(rng, H2.shape, dropout) if (train and dropout > 0) else None
    H2d = H2 * M2 if M2 is not None else H2

    z = H2d.mean(axis=1)
    prec = C @ params.Wc + params.bc
    zc = np.maximum(prec, 0.0)
    _finite(zc, "covariate", epoch)
    h = np.concatenate([z, zc], axis=1)
    logits = h @ params.Wo + params.bo
    raw = _softmax_raw(logits)
    probs = np.maximum(raw, _kernels.PROB_FLOOR)
    _finite(probs, "output", epoch)

    cache = dict(A=A, X=X, C=C, AX=AX, act1_in=act1_in, bn=bn, M1=M1, H1d=H1d,
                 AH=AH, pre2=pre2, M2=M2, h=h, prec=prec, probs=probs, raw=raw, p=p)
    return (probs[0] if single else probs), cache


def backward(params: GcnParams, cache: dict, y: np.ndarray, ridge: float) -> dict[str, np.ndarray]:
    probs = cache["raw"]  # the floor is an output guarantee, not part of the derivative
    n = probs.shape[0]
    d = params.hidden
    p = cache["p"]
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    g: dict[str, np.ndarray] = {}
    g["Wo"] = cache["h"].T @ dlogits
    g["bo"] = dlogits.sum(axis=0)
    dh = dlogits @ params.Wo.T
    dz, dzc = dh[:, :d], dh[:, d:]

    dprec = dzc * (cache["prec"] > 0)
    g["Wc"] = cache["C"].T @ dprec
    g["bc"] = dprec.sum(axis=0)

    dH2 = np.broadcast_to(dz[:, None, :] / p, cache["AH"].shape)
    if cache["M2"] is not None:
        dH2 = dH2 * cache["M2"]
    dpre2 = dH2 * (cache["pre2"] > 0)
    g["W1"] = cache["AH"].reshape(-1, d).T @ dpre2.reshape(-1, d)
    g["b1"] = dpre2.sum(axis=(0, 1))

    dAH = dpre2 @ params.W1.T
    dH1 = np.matmul(cache["A"].T, dAH)
    if cache["M1"] is not None:
        dH1 = dH1 * cache["M1"]
    dact = dH1 * (cache["act1_in"] > 0)
    if cache["bn"] is not None:
        _, _, s, xhat = cache["bn"]
        dact = (dact - dact.mean(axis=(0, 1)) - xhat * (dact * xhat).mean(axis=(0, 1))) / s
    g["W0"] = (cache["AX"].reshape(1, -1) @ dact.reshape(-1, d))
    g["b0"] = dact.sum(axis=(0, 1))

    for k in ("W0", "W1", "Wc", "Wo"):
        g[k] = g[k] + 2.0 * ridge * getattr(params, k)
    return g


def ridge_penalty(arrays: dict[str, np.ndarray], ridge: float) -> float:
    return ridge * sum(float(np.sum(a * a)) for k, a in arrays.items() if k in WEIGHT_NAMES)


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(np.log(probs[np.arange(len(y)), y])))


def loss_and_gradients(
    params: GcnParams,
    A: np.ndarray,
    X: np.ndarray,
    C: np.ndarray,
    y: np.ndarray,
    ridge: float,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    mode: str = "train",
    epoch: int | None = None,
):
    """Mean cross-entropy plus ridge on weight matrices, and its analytic gradient."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("empty batch")
    probs, cache = forward(params, A, X, C, mode=mode, rng=rng, dropout=dropout, epoch=epoch)
    loss = cross_entropy(np.atleast_2d(probs), y) + ridge_penalty(params.arrays(), ridge)
    grads = backward(params, cache, y, ridge)
    return loss, grads, cache


def predict_proba(params: GcnParams, A: np.ndarray, X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Eval-mode probabilities through the compiled kernel; batch norm folded into layer one."""
    W0, b0 = params.W0, params.b0
    if params.bn_mean is not None:
        s = np.sqrt(params.bn_var + BN_EPS)
        W0 = W0 / s
        b0 = (b0 - params.bn_mean) / s
    probs = _kernels.gcn_forward(A, np.atleast_2d(X), np.atleast_2d(C), W0, b0, params.W1, params.b1,
                                 params.Wc, params.bc, params.Wo, params.bo)
    if not np.all(np.isfinite(probs)):
        raise NumericalError("non-finite activation", layer="output")
    return probs


# ---------------------------------------------------------------------------
# MLP baseline on flattened [X ; C]
# ---------------------------------------------------------------------------


def init_mlp(n_in: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "M1": _glorot(rng, n_in, hidden), "m1": np.zeros(hidden),
        "M2": _glorot(rng, hidden, hidden), "m2": np.zeros(hidden),
        "Mo": _glorot(rng, hidden, N_CLASSES), "mo": np.zeros(N_CLASSES),
    }


def mlp_loss_and_gradients(params, X, C, y, ridge, dropout=0.0, rng=None, mode="train", epoch=None):
    inp = np.concatenate([np.atleast_2d(X), np.atleast_2d(C)], axis=1)
    n = inp.shape[0]
    train = mode == "train" and dropout > 0
    pre1 = inp @ params["M1"] + params["m1"]
    h1 = np.maximum(pre1, 0.0)
    k1 = _dropout_mask(rng, h1.shape, dropout) if train else None
    h1d = h1 * k1 if train else h1
    pre2 = h1d @ params["M2"] + params["m2"]
    h2 = np.maximum(pre2, 0.0)
    k2 = _dropout_mask(rng, h2.shape, dropout) if train else None
    h2d = h2 * k2 if train else h2
    raw = _softmax_raw(h2d @ params["Mo"] + params["mo"])
    probs = np.maximum(raw, _kernels.PROB_FLOOR)
    _finite(probs, "output", epoch)
    y = np.asarray(y, dtype=np.int64)
    loss = cross_entropy(probs, y) + ridge_penalty(params, ridge)

    dl = raw.copy()
    dl[np.arange(n), y] -= 1.0
    dl /= n
    g = {"Mo": h2d.T @ dl, "mo": dl.sum(axis=0)}
    dh2 = dl @ params["Mo"].T
    if train:
        dh2 = dh2 * k2
    dpre2 = dh2 * (pre2 > 0)
    g["M2"] = h1d.T @ dpre2
    g["m2"] = dpre2.sum(axis=0)
    dh1 = dpre2 @ params["M2"].T
    if train:
        dh1 = dh1 * k1
    dpre1 = dh1 * (pre1 > 0)
    g["M1"] = inp.T @ dpre1
    g["m1"] = dpre1.sum(axis=0)
    for k in ("M1", "M2", "Mo"):
        g[k] = g[k] + 2.0 * ridge * params[k]
    return loss, g, probs


def mlp_predict(params, X, C) -> np.ndarray:
    inp = np.concatenate([np.atleast_2d(X), np.atleast_2d(C)], axis=1)
    h1 = np.maximum(inp @ params["M1"] + params["m1"], 0.0)
    h2 = np.maximum(h1 @ params["M2"] + params["m2"], 0.0)
    return _softmax(h2 @ params["Mo"] + params["mo"])


# ---------------------------------------------------------------------------
# optimizer and training loop
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update of every array in ``params``."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def _batches(rng: np.random.Generator, idx: np.ndarray, batch_size: int | None):
    if batch_size is None or batch_size >= idx.size:
        return [idx]
    perm = rng.permutation(idx)
    return [perm[i:i + batch_size] for i in range(0, perm.size, batch_size)]


def train(
    dataset: CohortDataset,
    split: FoldSplit,
    config: TrainConfig,
    extra_covariates: np.ndarray | None = None,
    kind: str = "gcn",
) -> TrainedModel:
    """Fit on ``split.train_idx`` and keep the parameters of the best validation epoch.

    ``extra_covariates`` (n_subjects x K) are appended to the standardized
    covariates; that is how node-specific adjustment vectors are fed in.
    ``kind`` is ``gcn``, ``gcn-vanilla`` (covariate input zeroed) or ``mlp``.
    """
    if kind not in ("gcn", "gcn-vanilla", "mlp"):
        raise ValueError(f"unknown model kind {kind!r}")
    train_idx = np.asarray(split.train_idx, dtype=np.int64)
    val_idx = np.asarray(split.val_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("empty training set")
    n_all = dataset.n_subjects
    for name, idx in (("train", train_idx), ("val", val_idx)):
        if idx.size and (idx.min() < 0 or idx.max() >= n_all):
            raise IndexError(f"{name}_idx out of range for {n_all} subjects")

    scaler = fit_scaler(dataset, train_idx)
    X = scaler.transform_features(dataset.features)
    C = scaler.transform_covariates(dataset.covariates)
    n_extra = 0
    if extra_covariates is not None:
        extra = np.asarray(extra_covariates, dtype=float).reshape(n_all, -1)
        n_extra = extra.shape[1]
        C = np.concatenate([C, extra], axis=1)
    if kind == "gcn-vanilla":
        C = np.zeros_like(C)
    y = dataset.labels
    A = normalize_adjacency(dataset.adjacency)

    rng = np.random.default_rng(config.seed)
    if kind == "mlp":
        params = init_mlp(X.shape[1] + C.shape[1], config.hidden, rng)
        arrays = params

        def step_loss(idx, epoch):
            loss, g, _ = mlp_loss_and_gradients(arrays, X[idx], C[idx], y[idx], config.ridge,
                                                config.dropout, rng, "train", epoch)
            return loss, g

        def val_loss(epoch):
            probs = mlp_predict(arrays, X[val_idx], C[val_idx])
            _finite(probs, "output", epoch)
            return cross_entropy(probs, y[val_idx])

        def snapshot():
            return {k: v.copy() for k, v in arrays.items()}
    else:
        params = init_params(C.shape[1], config.hidden, config.cov_hidden, rng, config.batchnorm)
        arrays = params.arrays()

        def step_loss(idx, epoch):
            loss, g, cache = loss_and_gradients(params, A, X[idx], C[idx], y[idx], config.ridge,
                                                config.dropout, rng, "train", epoch)
            if cache["bn"] is not None:
                mu, var = cache["bn"][0], cache["bn"][1]
                params.bn_mean = (1 - BN_MOMENTUM) * params.bn_mean + BN_MOMENTUM * mu
                params.bn_var = (1 - BN_MOMENTUM) * params.bn_var + BN_MOMENTUM * var
            return loss, g

        def val_loss(epoch):
            probs, _ = forward(params, A, X[val_idx], C[val_idx], mode="eval", epoch=epoch)
            return cross_entropy(probs, y[val_idx])

        def snapshot():
            return params.copy()

    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    history, train_hist = [], []
    best = snapshot()
    best_epoch, best_val = 0, np.inf
    for epoch in range(1, config.epochs + 1):
        for idx in _batches(rng, train_idx, config.batch_size):
            loss, g = step_loss(idx, epoch)
            if not np.isfinite(loss):
                raise NumericalError("NaN loss", epoch=epoch)
            opt.step(arrays, g)
        train_hist.append(loss)
        v = val_loss(epoch) if val_idx.size else loss
        if not np.isfinite(v):
            raise NumericalError("NaN validation loss", epoch=epoch)
        history.append(v)
        if v < best_val:
            best_val, best_epoch, best = v, epoch, snapshot()
    return TrainedModel(
        params=best,
        adjacency=np.asarray(dataset.adjacency, dtype=float).copy(),
        propagation=A,
        scaler=scaler,
        config=config,
        val_loss_history=np.asarray(history),
        best_epoch=best_epoch,
        kind=kind,
        train_loss_history=np.asarray(train_hist),
        n_extra_covariates=n_extra,
    )


def train_baselines(dataset: CohortDataset, split: FoldSplit, config: TrainConfig) -> dict[str, TrainedModel]:
    """MLP on flattened [X ; C] and a vanilla GCN (same network, no covariate input)."""
    return {
        "mlp": train(dataset, split, config, kind="mlp"),
        "gcn": train(dataset, split, config, kind="gcn-vanilla"),
    }


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _pack(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def _unpack(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def checkpoint_dict(model: TrainedModel) -> dict:
    if model.kind == "mlp":
        arrays = model.params
        extra = {}
    else:
        arrays = model.params.arrays()
        extra = {}
        if model.params.bn_mean is not None:
            extra = {"bn_mean": _pack(model.params.bn_mean), "bn_var": _pack(model.params.bn_var)}
    return {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": asdict(model.config),
        "scaler": model.scaler.to_dict(),
        "adjacency": _pack(model.adjacency),
        "propagation": _pack(model.propagation),
        "params": {k: _pack(v) for k, v in arrays.items()},
        "batchnorm_stats": extra,
        "best_epoch": model.best_epoch,
        "val_loss_history": model.val_loss_history.tolist(),
        "n_extra_covariates": model.n_extra_covariates,
    }


def save_checkpoint(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model), indent=1), encoding="utf-8")


def load_checkpoint(path) -> TrainedModel:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    arrays = {k: _unpack(v) for k, v in d["params"].items()}
    if d["kind"] == "mlp":
        params = arrays
    else:
        params = GcnParams(**arrays)
        bn = d.get("batchnorm_stats") or {}
        if bn:
            params.bn_mean = _unpack(bn["bn_mean"])
            params.bn_var = _unpack(bn["bn_var"])
    cfg_fields = {f.name for f in fields(TrainConfig)}
    return TrainedModel(
        params=params,
        adjacency=_unpack(d["adjacency"]),
        propagation=_unpack(d["propagation"]),
        scaler=ScalerState.from_dict(d["scaler"]),
        config=TrainConfig(**{k: v for k, v in d["config"].items() if k in cfg_fields}),
        val_loss_history=np.asarray(d["val_loss_history"], dtype=float),
        best_epoch=int(d["best_epoch"]),
        kind=d["kind"],
        n_extra_covariates=int(d.get("n_extra_covariates", 0)),
    )
