"""Model training: L1 loss, exact BPTT gradients, Nesterov SGD.

Gradients are derived analytically through the output head, dropout mask,
masked mean / softmax attention pooling, and the unrolled GRU recurrence;
they are validated against central finite differences in the test suite.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import DataError, NumericError
from .model import (ModelParams, ForwardTrace, forward, init_params,
                    HIDDEN_DEFAULT, DROPOUT_DEFAULT)
from .sessions import TARGET_NAMES

HISTORY_COLUMNS = ("epoch", "train_loss", "dev_mae_cortisol",
                   "dev_mae_appraisal", "dev_mae_affect", "dev_mae_mean")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 16
    max_epochs: int = 100
    max_seq_len: int = 1200
    dropout: float = DROPOUT_DEFAULT
    patience: int = 10
    hidden: int = HIDDEN_DEFAULT
    seed: int = 0

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise DataError("patience must not exceed max_epochs")
        for name in ("learning_rate", "batch_size", "max_epochs",
                     "max_seq_len", "patience", "hidden"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")


def l1_loss(pred, y):
    """Mean absolute error over batch and output dimensions.

    The MTL head averages its three tasks with equal weight.
    """
    pred = np.atleast_2d(pred)
    y = np.atleast_2d(y)
    if pred.shape != y.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {y.shape}")
    return float(np.mean(np.abs(pred - y)))


def backward(trace: ForwardTrace, y, params: ModelParams) -> ModelParams:
    """Exact gradients of the L1 loss w.r.t. every parameter block.

    The subgradient of |e| at e = 0 is taken as 0.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    b, t, _ = trace.x.shape
    k = params.k
    g = params.zeros_like()

    dpred = np.sign(trace.pred - y) / (b * k)

    dropped = (trace.pooled if trace.drop_mask is None
               else trace.pooled * trace.drop_mask)
    g.head_w += dpred.T @ dropped
    g.head_b += dpred.sum(axis=0)
    dpool = dpred @ params.head_w
    if trace.drop_mask is not None:
        dpool = dpool * trace.drop_mask

    lengths = trace.lengths.astype(np.float64)
    if trace.pooling == "attention":
        alpha = trace.alpha
        dalpha = (dpool[:, None, :] * trace.hs).sum(axis=2)  # (B, T)
        dhs = alpha[:, :, None] * dpool[:, None, :]
        # softmax backward; alpha is exactly 0 at padded steps
        dz = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        g.attn_w += (dz[:, :, None] * trace.hs).sum(axis=(0, 1))
        dhs = dhs + dz[:, :, None] * params.attn_w[None, None, :]
    else:
        dhs = (dpool[:, None, :] * trace.mask[:, :, None]
               / lengths[:, None, None])

    dh = np.zeros((b, params.h))
    for step in range(t - 1, -1, -1):
        dh = dh + dhs[:, step]
        m = trace.mask[:, step : step + 1]
        hprev = trace.hs[:, step - 1] if step > 0 else np.zeros((b, params.h))
        z = trace.zs[:, step]
        r = trace.rs[:, step]
        hc = trace.hcs[:, step]
        xt = trace.x[:, step]

        dhnew = dh * m
        dcarry = dh * (1.0 - m)

        dz = dhnew * (hc - hprev)
        dhc = dhnew * z
        dhprev = dhnew * (1.0 - z)

        dhc_pre = dhc * (1.0 - hc * hc)
        g.wh += dhc_pre.T @ xt
        g.uh += dhc_pre.T @ (r * hprev)
        g.bh += dhc_pre.sum(axis=0)
        drh = dhc_pre @ params.uh
        dr = drh * hprev
        dhprev = dhprev + drh * r

        dz_pre = dz * z * (1.0 - z)
        g.wz += dz_pre.T @ xt
        g.uz += dz_pre.T @ hprev
        g.bz += dz_pre.sum(axis=0)
        dhprev = dhprev + dz_pre @ params.uz

        dr_pre = dr * r * (1.0 - r)
        g.wr += dr_pre.T @ xt
        g.ur += dr_pre.T @ hprev
        g.br += dr_pre.sum(axis=0)
        dhprev = dhprev + dr_pre @ params.ur

        dh = dhprev + dcarry

    for name, arr in g.blocks():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in block {name!r}")
    return g


def sgd_nesterov_step(params, grads, velocity, lr, mu):
    """v <- mu*v + g; theta <- theta - lr*(g + mu*v).  In place."""
    for (name, p), (_, g), (_, v) in zip(
        params.blocks(), grads.blocks(), velocity.blocks()
    ):
        v *= mu
        v += g
        p -= lr * (g + mu * v)


def pad_batch(datas, max_seq_len):
    """Stack variable-length (T, d) arrays into (B, L, d) plus lengths.

    Sequences longer than max_seq_len are truncated at the tail.
    """
    lengths = np.array([min(a.shape[0], max_seq_len) for a in datas])
    lmax = int(lengths.max())
    d = datas[0].shape[1]
    x = np.zeros((len(datas), lmax, d))
    for i, a in enumerate(datas):
        x[i, : lengths[i]] = a[: lengths[i]]
    return x, lengths


def _target_matrix(targets, task, target_name):
    y = np.vstack([np.asarray(t, dtype=np.float64).reshape(-1) for t in targets])
    if task == "mtl":
        return y
    return y[:, [TARGET_NAMES.index(target_name)]]


def _dev_maes(pred, y_full, task, target_name):
    """Per-target dev MAE row (nan for targets an STL model does not see)."""
    maes = np.full(3, np.nan)
    if task == "mtl":
        maes[:] = np.mean(np.abs(pred - y_full), axis=0)
        crit = float(maes.mean())
    else:
        idx = TARGET_NAMES.index(target_name)
        maes[idx] = float(np.mean(np.abs(pred[:, 0] - y_full[:, idx])))
        crit = maes[idx]
    return maes, crit


@dataclass
class TrainResult:
    params: ModelParams
    pooling: str
    task: str
    target: str | None
    best_epoch: int
    best_dev_mae: float
    history: list  # one dict per epoch, HISTORY_COLUMNS keys


def train(train_set, dev_set, pooling, task, config: TrainConfig,
          target_name=None):
    """Full training loop with early stopping on dev MAE.

    train_set/dev_set: lists of (FeatureSequence, 3-vector scaled target).
    STL models regress the single target named by target_name; MTL models
    regress all three (order: cortisol, appraisal, affect).
    Returns the best-dev checkpoint and per-epoch history.
    """
    if not train_set or not dev_set:
        raise DataError("train and dev splits must be non-empty")
    if task == "stl" and target_name not in TARGET_NAMES:
        raise DataError(f"stl needs a target name, got {target_name!r}")
    k = 3 if task == "mtl" else 1
    d = train_set[0][0].data.shape[1]

    rng = np.random.default_rng(config.seed)
    params = init_params(d, config.hidden, k, pooling, rng)
    velocity = params.zeros_like()

    train_datas = [s.data[: s.valid_len] for s, _ in train_set]
    y_train = _target_matrix([t for _, t in train_set], task, target_name)
    dev_datas = [s.data[: s.valid_len] for s, _ in dev_set]
    y_dev_full = np.vstack(
        [np.asarray(t, dtype=np.float64).reshape(-1) for _, t in dev_set]
    )
    x_dev, len_dev = pad_batch(dev_datas, config.max_seq_len)

    n = len(train_datas)
    best = math.inf
    best_params = params.copy()
    best_epoch = 0
    wait = 0
    history = []

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        batch_losses = []
        for bstart in range(0, n, config.batch_size):
            idx = perm[bstart : bstart + config.batch_size]
            x, lengths = pad_batch([train_datas[i] for i in idx],
                                   config.max_seq_len)
            trace = forward(x, lengths, params, pooling,
                            dropout_p=config.dropout, train=True, rng=rng)
            loss = l1_loss(trace.pred, y_train[idx])
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, "
                    f"batch {bstart // config.batch_size}"
                )
            grads = backward(trace, y_train[idx], params)
            sgd_nesterov_step(params, grads, velocity,
                              config.learning_rate, config.momentum)
            batch_losses.append(loss)

        dev_pred = forward(x_dev, len_dev, params, pooling).pred
        maes, crit = _dev_maes(dev_pred, y_dev_full, task, target_name)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "dev_mae_cortisol": maes[0],
            "dev_mae_appraisal": maes[1],
            "dev_mae_affect": maes[2],
            "dev_mae_mean": crit,
        })

        if crit < best:
            best = crit
            best_params = params.copy()
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break

    return TrainResult(params=best_params, pooling=pooling, task=task,
                       target=target_name, best_epoch=best_epoch,
                       best_dev_mae=best, history=history)


def write_history(history, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow(
                ["" if isinstance(v := row[c], float) and math.isnan(v)
                 else v for c in HISTORY_COLUMNS]
            )
