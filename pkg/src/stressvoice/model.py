"""GRU sequence regressor: forward pass, pooling, head, checkpoints.

Gate convention: h_t = (1 - z_t) * h_{t-1} + z_t * h_cand, with the reset
gate applied inside the candidate.  Attention pooling projects the GRU
outputs with a learned h-vector, masks padded steps with -inf logits, and
softmax-weights the hidden states.  Padded steps are never processed by
the recurrence: the hidden state is carried through unchanged.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

from . import DataError

HIDDEN_DEFAULT = 64
DROPOUT_DEFAULT = 0.2

POOLING_MODES = ("mean", "attention")
TASK_MODES = ("stl", "mtl")

# flattening order of the parameter blob in checkpoints
_BLOCK_ORDER = ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh",
                "attn_w", "head_w", "head_b")


@dataclass
class ModelParams:
    wz: np.ndarray  # (h, d)
    wr: np.ndarray
    wh: np.ndarray
    uz: np.ndarray  # (h, h)
    ur: np.ndarray
    uh: np.ndarray
    bz: np.ndarray  # (h,)
    br: np.ndarray
    bh: np.ndarray
    head_w: np.ndarray  # (k, h)
    head_b: np.ndarray  # (k,)
    attn_w: np.ndarray | None = None  # (h,), attention variant only

    @property
    def d(self):
        return self.wz.shape[1]

    @property
    def h(self):
        return self.wz.shape[0]

    @property
    def k(self):
        return self.head_w.shape[0]

    def blocks(self):
        """(name, array) pairs in checkpoint order; skips absent attn_w."""
        for name in _BLOCK_ORDER:
            arr = getattr(self, name)
            if arr is not None:
                yield name, arr

    def to_vector(self):
        return np.concatenate([a.ravel() for _, a in self.blocks()])

    def set_vector(self, vec):
        off = 0
        for _, a in self.blocks():
            a.flat[:] = vec[off : off + a.size]
            off += a.size
        if off != vec.size:
            raise DataError("parameter vector length mismatch")

    def zeros_like(self):
        return ModelParams(
            **{
                name: (None if getattr(self, name) is None
                       else np.zeros_like(getattr(self, name)))
                for name in _BLOCK_ORDER
            }
        )

    def copy(self):
        return ModelParams(
            **{
                name: (None if getattr(self, name) is None
                       else getattr(self, name).copy())
                for name in _BLOCK_ORDER
            }
        )


def init_params(d, h, k, pooling, rng):
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases."""
    s = 1.0 / np.sqrt(h)

    def u(*shape):
        return rng.uniform(-s, s, size=shape)

    return ModelParams(
        wz=u(h, d), wr=u(h, d), wh=u(h, d),
        uz=u(h, h), ur=u(h, h), uh=u(h, h),
        bz=np.zeros(h), br=np.zeros(h), bh=np.zeros(h),
        attn_w=u(h) if pooling == "attention" else None,
        head_w=u(k, h), head_b=np.zeros(k),
    )


@dataclass
class ForwardTrace:
    x: np.ndarray        # (B, T, d)
    lengths: np.ndarray  # (B,)
    mask: np.ndarray     # (B, T) float 0/1
    hs: np.ndarray       # (B, T, h) post-update hidden states
    zs: np.ndarray
    rs: np.ndarray
    hcs: np.ndarray
    pooled: np.ndarray   # (B, h) before dropout
    pred: np.ndarray     # (B, k)
    pooling: str
    alpha: np.ndarray | None = None  # (B, T), attention only
    drop_mask: np.ndarray | None = None  # (B, h), training only


def gru_forward(x, lengths, params):
    """Run the recurrence; returns (hs, zs, rs, hcs, mask).

    Steps at or beyond a sequence's valid length leave the hidden state
    unchanged, so padding never influences the result.
    """
    x = np.asarray(x, dtype=np.float64)
    b, t, d = x.shape
    if d != params.d:
        raise DataError(f"input dim {d} != model dim {params.d}")
    h = params.h
    lengths = np.asarray(lengths)
    mask = (np.arange(t)[None, :] < lengths[:, None]).astype(np.float64)

    hs = np.empty((b, t, h))
    zs = np.empty((b, t, h))
    rs = np.empty((b, t, h))
    hcs = np.empty((b, t, h))
    hprev = np.zeros((b, h))
    for step in range(t):
        xt = x[:, step]
        z = sigmoid(xt @ params.wz.T + hprev @ params.uz.T + params.bz)
        r = sigmoid(xt @ params.wr.T + hprev @ params.ur.T + params.br)
        hc = np.tanh(xt @ params.wh.T + (r * hprev) @ params.uh.T + params.bh)
        hnew = (1.0 - z) * hprev + z * hc
        m = mask[:, step : step + 1]
        hprev = m * hnew + (1.0 - m) * hprev
        hs[:, step] = hprev
        zs[:, step] = z
        rs[:, step] = r
        hcs[:, step] = hc
    return hs, zs, rs, hcs, mask


def mean_pool(hs, lengths):
    """Masked arithmetic mean of h_1..h_valid_len."""
    t = hs.shape[1]
    lengths = np.asarray(lengths)
    mask = (np.arange(t)[None, :] < lengths[:, None]).astype(np.float64)
    return (hs * mask[:, :, None]).sum(axis=1) / lengths[:, None]


def attention_pool(hs, lengths, w):
    """Softmax-weighted sum of hidden states; padded steps get zero weight."""
    t = hs.shape[1]
    lengths = np.asarray(lengths)
    mask = np.arange(t)[None, :] < lengths[:, None]
    logits = hs @ w
    logits = np.where(mask, logits, -np.inf)
    zmax = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - zmax)
    ex = np.where(mask, ex, 0.0)
    alpha = ex / ex.sum(axis=1, keepdims=True)
    pooled = (alpha[:, :, None] * hs).sum(axis=1)
    return alpha, pooled


def head_forward(pooled, params, dropout_p=0.0, train=False, rng=None):
    """Dropout (inverted, train only) then the affine output head."""
    if train and dropout_p > 0.0:
        if rng is None:
            raise DataError("training-mode dropout needs an rng")
        keep = 1.0 - dropout_p
        drop_mask = (rng.random(pooled.shape) < keep) / keep
    else:
        drop_mask = None
    dropped = pooled if drop_mask is None else pooled * drop_mask
    pred = dropped @ params.head_w.T + params.head_b
    return pred, drop_mask


def forward(x, lengths, params, pooling, dropout_p=0.0, train=False, rng=None):
    """Full forward pass returning a trace sufficient for backprop."""
    if pooling not in POOLING_MODES:
        raise DataError(f"unknown pooling mode {pooling!r}")
    hs, zs, rs, hcs, mask = gru_forward(x, lengths, params)
    alpha = None
    if pooling == "attention":
        if params.attn_w is None:
            raise DataError("attention pooling requires attn_w parameters")
        alpha, pooled = attention_pool(hs, lengths, params.attn_w)
    else:
        pooled = mean_pool(hs, lengths)
    pred, drop_mask = head_forward(pooled, params, dropout_p, train, rng)
    return ForwardTrace(
        x=np.asarray(x, dtype=np.float64), lengths=np.asarray(lengths),
        mask=mask, hs=hs, zs=zs, rs=rs, hcs=hcs, pooled=pooled, pred=pred,
        pooling=pooling, alpha=alpha, drop_mask=drop_mask,
    )


def predict(x, lengths, params, pooling):
    """Deterministic eval-mode predictions."""
    return forward(x, lengths, params, pooling).pred


# --- checkpoint format ----------------------------------------------------
# u32 little-endian JSON header length, JSON header, then all parameter
# blocks as little-endian float64 in _BLOCK_ORDER (attn_w omitted for the
# mean-pooling variant).


def save_checkpoint(path, params, meta):
    header = dict(meta)
    header.update(d=params.d, h=params.h, k=params.k)
    blob = params.to_vector().astype("<f8").tobytes()
    raw = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(hlen).decode("utf-8"))
        vec = np.frombuffer(f.read(), dtype="<f8")
    d, h, k = meta["d"], meta["h"], meta["k"]
    params = init_params(d, h, k, meta["pooling"], np.random.default_rng(0))
    params.set_vector(vec.copy())
    return params, meta
