"""Sequence classifier over correlation rows, with hand-written backprop.

Architecture: linear input projection, learned positional embeddings, a stack
of pre-norm encoder layers (multi-head self-attention and a GELU feed-forward
block, each wrapped in a residual), mean pooling over positions and a sigmoid
head. Everything runs in float64 numpy.

A batch is given as a zero-padded array ``(B, L, input_dim)`` plus per-item
lengths. Internally items are grouped by length and each group is run without
padding, so pad rows never enter the arithmetic and an item's output does not
depend on what else is in the batch. Matrix products never use a single-row
left operand (BLAS dispatches those to a different kernel).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import _nnkernels as K
from .errors import (
    CorruptCheckpoint,
    NonFiniteActivation,
    NonFiniteGradient,
    SequenceTooLong,
    VersionMismatch,
)

CHECKPOINT_MAGIC = b"HEVM"
CHECKPOINT_VERSION = 1
LN_EPS = 1e-5
PROB_EPS = 1e-7
_U64 = 0xFFFFFFFFFFFFFFFF
_NO_MASK4 = np.zeros((1, 1, 1, 1))


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_dim: int = 12
    model_dim: int = 64
    layers: int = 3
    heads: int = 4
    ffn_dim: int = 256
    dropout: float = 0.1
    max_positions: int = 512
    activation: str = "gelu"
    # debug baseline: mean-pool the projected rows straight into the head
    linear_head: bool = False

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if self.activation != "gelu":
            raise ValueError("only GELU is supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def param_shapes(cfg: DiscriminatorConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.model_dim, cfg.ffn_dim
    shapes = {"in.W": (cfg.input_dim, d), "in.b": (d,), "pos": (cfg.max_positions, d)}
    for l in range(cfg.layers):
        p = f"l{l}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "Wq": (d, d), p + "bq": (d,), p + "Wk": (d, d), p + "bk": (d,),
            p + "Wv": (d, d), p + "bv": (d,), p + "Wo": (d, d), p + "bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "W1": (d, f), p + "b1": (f,), p + "W2": (f, d), p + "b2": (d,),
        })
    shapes.update({"head.w": (d,), "head.b": ()})
    return shapes


def init_params(cfg: DiscriminatorConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform matrices, unit norm gains, zeros elsewhere (head included)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif len(shape) == 2 and not name.startswith("head"):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


@dataclass(frozen=True)
class DropoutKey:
    """Identifies a training step; masks are a pure function of (key, layer, site, item, position)."""

    seed: int
    step: int


def _keep_mask(key: DropoutKey, layer: int, site: int, uids: np.ndarray,
               tail: tuple[int, ...], p: float) -> np.ndarray:
    size = int(np.prod(tail))
    m = K.keep_mask(key.seed & _U64, key.step & _U64, layer * 8 + site + 1, uids, size, p)
    return m.reshape((len(uids),) + tail)


def _mm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    if x.shape[0] == 1:
        return (np.concatenate([x, x]) @ w)[:1]
    return x @ w


def _forward_group(params, cfg, x, train, key, uids, keep_cache):
    """Forward for ``n`` unpadded items of one length ``L``; ``x`` is ``(n, L, D)``."""
    n, L, _ = x.shape
    d, H = cfg.model_dim, cfg.heads
    dh = d // H
    scale = 1.0 / np.sqrt(dh)
    p_drop = cfg.dropout if train else 0.0
    h = _mm(x.reshape(n * L, -1), params["in.W"]).reshape(n, L, d)
    h += params["in.b"]
    h += params["pos"][:L]
    h = h.reshape(n * L, d)
    cache = {"x": x, "layers": []}
    layers = 0 if cfg.linear_head else cfg.layers
    for l in range(layers):
        pre = f"l{l}."
        a, xhat1, rstd1 = K.ln_fwd(h, params[pre + "ln1.g"], params[pre + "ln1.b"], LN_EPS)
        q = _mm(a, params[pre + "Wq"])
        q += params[pre + "bq"]
        k = _mm(a, params[pre + "Wk"])
        k += params[pre + "bk"]
        v = _mm(a, params[pre + "Wv"])
        v += params[pre + "bv"]
        q4, k4, v4 = (t.reshape(n, L, H, dh) for t in (q, k, v))
        if p_drop > 0:
            m_att = _keep_mask(key, l, 0, uids, (H, L, L), p_drop)
            m_res1 = _keep_mask(key, l, 1, uids, (L, d), p_drop).reshape(n * L, d)
            m_res2 = _keep_mask(key, l, 2, uids, (L, d), p_drop).reshape(n * L, d)
        else:
            m_att = _NO_MASK4
            m_res1 = m_res2 = None
        ctx, pr = K.attn_fwd(q4, k4, v4, m_att, p_drop > 0, scale)
        ctx = ctx.reshape(n * L, d)
        o = _mm(ctx, params[pre + "Wo"])
        o += params[pre + "bo"]
        if m_res1 is not None:
            o *= m_res1
        h_mid = h + o
        a2, xhat2, rstd2 = K.ln_fwd(h_mid, params[pre + "ln2.g"], params[pre + "ln2.b"], LN_EPS)
        z = _mm(a2, params[pre + "W1"])
        z += params[pre + "b1"]
        f, cdf = K.gelu_fwd(z)
        g = _mm(f, params[pre + "W2"])
        g += params[pre + "b2"]
        if m_res2 is not None:
            g *= m_res2
        h = h_mid + g
        if not np.isfinite(h).all():
            raise NonFiniteActivation(l)
        if keep_cache:
            cache["layers"].append(dict(xhat1=xhat1, rstd1=rstd1, a=a, q=q4, k=k4, v=v4, pr=pr,
                                        m_att=m_att, ctx=ctx, m_res1=m_res1, xhat2=xhat2,
                                        rstd2=rstd2, a2=a2, z=z, cdf=cdf, f=f, m_res2=m_res2))
    pooled = h.reshape(n, L, d).mean(axis=1)
    logit = (pooled * params["head.w"]).sum(axis=1) + params["head.b"]
    if not np.isfinite(logit).all():
        raise NonFiniteActivation(layers)
    cache["pooled"] = pooled
    return logit, cache


def _backward_group(params, cfg, cache, dlogit, grads):
    x = cache["x"]
    n, L, _ = x.shape
    d, H = cfg.model_dim, cfg.heads
    dh = d // H
    scale = 1.0 / np.sqrt(dh)
    pooled = cache["pooled"]
    grads["head.w"] += (dlogit[:, None] * pooled).sum(axis=0)
    grads["head.b"] += dlogit.sum()
    dh_ = np.repeat((dlogit[:, None] * params["head.w"]) / L, L, axis=0)
    for l in reversed(range(len(cache["layers"]))):
        c = cache["layers"][l]
        pre = f"l{l}."
        # feed-forward residual
        dg = dh_ * c["m_res2"] if c["m_res2"] is not None else dh_
        grads[pre + "W2"] += c["f"].T @ dg
        grads[pre + "b2"] += dg.sum(axis=0)
        dz = K.gelu_bwd(dg @ params[pre + "W2"].T, c["z"], c["cdf"])
        grads[pre + "W1"] += c["a2"].T @ dz
        grads[pre + "b1"] += dz.sum(axis=0)
        dh_mid = dh_ + K.ln_bwd(dz @ params[pre + "W1"].T, params[pre + "ln2.g"], c["xhat2"],
                                c["rstd2"], grads[pre + "ln2.g"], grads[pre + "ln2.b"])
        # attention residual
        do = dh_mid * c["m_res1"] if c["m_res1"] is not None else dh_mid
        grads[pre + "Wo"] += c["ctx"].T @ do
        grads[pre + "bo"] += do.sum(axis=0)
        dctx = (do @ params[pre + "Wo"].T).reshape(n, L, H, dh)
        dq, dk, dv = K.attn_bwd(dctx, c["q"], c["k"], c["v"], c["pr"], c["m_att"],
                                c["m_res1"] is not None, scale)
        a = c["a"]
        da = np.zeros((n * L, d))
        for name, dt in (("q", dq), ("k", dk), ("v", dv)):
            dt2d = dt.reshape(n * L, d)
            grads[pre + "W" + name] += a.T @ dt2d
            grads[pre + "b" + name] += dt2d.sum(axis=0)
            da += dt2d @ params[pre + "W" + name].T
        dh_ = dh_mid + K.ln_bwd(da, params[pre + "ln1.g"], c["xhat1"], c["rstd1"],
                                grads[pre + "ln1.g"], grads[pre + "ln1.b"])
    grads["in.W"] += x.reshape(n * L, -1).T @ dh_
    grads["in.b"] += dh_.sum(axis=0)
    grads["pos"][:L] += dh_.reshape(n, L, d).sum(axis=0)


def _groups(lengths: np.ndarray):
    for L in np.unique(lengths):
        yield int(L), np.flatnonzero(lengths == L)


def _check_batch(cfg, X, lengths):
    X = np.asarray(X, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if X.ndim != 3 or X.shape[2] != cfg.input_dim:
        raise ValueError(f"batch must be (B, L, {cfg.input_dim}), got {X.shape}")
    if len(lengths) != X.shape[0]:
        raise ValueError("one length per item required")
    if len(lengths) and (lengths.min() < 1 or lengths.max() > X.shape[1]):
        raise ValueError("lengths must lie in [1, padded length]")
    if len(lengths) and lengths.max() > cfg.max_positions:
        raise SequenceTooLong(f"sequence of length {lengths.max()} exceeds {cfg.max_positions}")
    return X, lengths


def _uids(uids, n):
    return np.arange(n, dtype=np.int64) if uids is None else np.asarray(uids, dtype=np.int64)


def logits(params, cfg: DiscriminatorConfig, X, lengths, train: bool = False,
           key: DropoutKey | None = None, uids=None) -> np.ndarray:
    X, lengths = _check_batch(cfg, X, lengths)
    train = train and cfg.dropout > 0
    if train and key is None:
        raise ValueError("training-mode forward needs a DropoutKey")
    uids = _uids(uids, len(lengths))
    out = np.empty(len(lengths))
    for L, idx in _groups(lengths):
        lg, _ = _forward_group(params, cfg, X[idx, :L], train, key, uids[idx], False)
        out[idx] = lg
    return out


def bce_loss(probs, labels) -> float:
    """Summed binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum())


def loss_and_grad(params, cfg: DiscriminatorConfig, X, lengths, labels,
                  key: DropoutKey | None = None, uids=None, train: bool = True):
    """Summed BCE over the batch and its exact gradient for every parameter."""
    X, lengths = _check_batch(cfg, X, lengths)
    labels = np.asarray(labels, dtype=np.float64)
    train = train and cfg.dropout > 0
    if train and key is None:
        raise ValueError("training-mode pass needs a DropoutKey")
    uids = _uids(uids, len(lengths))
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    total = 0.0
    for L, idx in _groups(lengths):
        lg, cache = _forward_group(params, cfg, X[idx, :L], train, key, uids[idx], True)
        p = expit(lg)
        y = labels[idx]
        total += bce_loss(p, y)
        inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
        dlogit = np.where(inside, p - y, 0.0)
        _backward_group(params, cfg, cache, dlogit, grads)
    return total, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_update(params, grads, state: AdamState, lr: float) -> None:
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {k}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class Discriminator:
    config: DiscriminatorConfig
    params: dict
    adam: AdamState = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.adam is None:
            self.adam = AdamState.zeros_like(self.params)

    @classmethod
    def create(cls, config: DiscriminatorConfig, seed: int = 0) -> "Discriminator":
        return cls(config, init_params(config, seed))

    def copy(self) -> "Discriminator":
        return Discriminator(
            self.config, {k: v.copy() for k, v in self.params.items()},
            AdamState({k: v.copy() for k, v in self.adam.m.items()},
                      {k: v.copy() for k, v in self.adam.v.items()}, self.adam.step,
                      self.adam.beta1, self.adam.beta2, self.adam.eps),
            json.loads(json.dumps(self.meta)))

    def predict(self, X, lengths, train=False, key=None, uids=None) -> np.ndarray:
        return expit(logits(self.params, self.config, X, lengths, train, key, uids))

    def loss_and_grad(self, X, lengths, labels, key=None, uids=None, train=True):
        return loss_and_grad(self.params, self.config, X, lengths, labels, key, uids, train)

    def apply_gradients(self, grads, lr: float) -> None:
        adam_update(self.params, grads, self.adam, lr)


def forward(model: Discriminator, X, lengths, train_mode: bool = False,
            key: DropoutKey | None = None, uids=None) -> np.ndarray:
    """Per-item probabilities in (0, 1)."""
    return model.predict(X, lengths, train_mode, key, uids)


def backward_step(model: Discriminator, X, lengths, labels, lr: float,
                  key: DropoutKey | None = None, uids=None) -> float:
    """One exact-gradient Adam step; returns the pre-update loss."""
    loss, grads = model.loss_and_grad(X, lengths, labels, key, uids)
    model.apply_gradients(grads, lr)
    return loss


def _blob(arrays: dict, shapes: dict) -> bytes:
    return b"".join(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes() for k in shapes)


def _unblob(buf: memoryview, off: int, shapes: dict) -> tuple[dict, int]:
    out = {}
    for k, shape in shapes.items():
        n = int(np.prod(shape)) if shape else 1
        out[k] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    return out, off


def save_params(model: Discriminator, path) -> None:
    """Write ``HEVM`` checkpoint: header, config, params, Adam state, meta, sha256."""
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode()
    meta = json.dumps(model.meta, sort_keys=True).encode()
    shapes = param_shapes(model.config)
    st = model.adam
    parts = [
        CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg,
        _blob(model.params, shapes),
        struct.pack("<Qddd", st.step, st.beta1, st.beta2, st.eps),
        _blob(st.m, shapes), _blob(st.v, shapes),
        struct.pack("<I", len(meta)), meta,
    ]
    body = b"".join(parts)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_params(path, expected: DiscriminatorConfig | None = None) -> Discriminator:
    data = Path(path).read_bytes()
    if len(data) < 44 or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{path}: checksum mismatch (truncated or modified)")
    version, cfg_len = struct.unpack_from("<II", body, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    off = 12
    cfg = DiscriminatorConfig(**json.loads(body[off:off + cfg_len]))
    off += cfg_len
    if expected is not None and cfg != expected:
        raise VersionMismatch(f"{path}: checkpoint config {cfg} differs from expected {expected}")
    buf = memoryview(body)
    shapes = param_shapes(cfg)
    try:
        params, off = _unblob(buf, off, shapes)
        step, b1, b2, eps = struct.unpack_from("<Qddd", body, off)
        off += 32
        m, off = _unblob(buf, off, shapes)
        v, off = _unblob(buf, off, shapes)
        (meta_len,) = struct.unpack_from("<I", body, off)
        off += 4
        meta = json.loads(body[off:off + meta_len])
    except (ValueError, struct.error) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from None
    return Discriminator(cfg, params, AdamState(m, v, step, b1, b2, eps), meta)
