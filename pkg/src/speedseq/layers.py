"""Forward/backward passes for every block of the two speed models.

Each layer is a pair of functions::

    out, cache = <layer>_forward(x, params, ...)
    dx, grads = <layer>_backward(dout, cache)

``params`` is a mapping of short names (``"w"``, ``"b"``, ...) to arrays and
``grads`` comes back keyed the same way. Sequence inputs are batch-major
``(B, T, C)``; an unbatched ``(T, C)`` input is accepted and returned
unbatched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .tensorcore import DTYPE, Rng, init_param, softmax

LN_EPS = 1e-12


def _batched(x, ndim):
    x = np.ascontiguousarray(x, dtype=DTYPE)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ShapeError(f"expected {ndim - 1}-D or {ndim}-D input, got shape {x.shape}")
    return x, False


def _check_last(x, expected, what):
    if x.shape[-1] != expected:
        raise ShapeError(f"{what}: expected last dimension {expected}, got shape {x.shape}")


# ---------------------------------------------------------------- dense


def dense_params(rng: Rng, c_in: int, c_out: int) -> dict:
    return {
        "w": init_param((c_in, c_out), "xavier_uniform", rng),
        "b": init_param((c_out,), "zeros"),
    }


def dense_forward(x, params):
    """Affine map ``x @ w + b`` over the last axis."""
    x = np.asarray(x, dtype=DTYPE)
    w, b = params["w"], params["b"]
    _check_last(x, w.shape[0], "dense")
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    grads = {"w": x2.T @ d2, "b": d2.sum(axis=0)}
    return dout @ w.T, grads


# ---------------------------------------------------------------- conv1d


def conv1d_params(rng: Rng, c_in: int, c_out: int) -> dict:
    return {
        "w": init_param((3, c_in, c_out), "xavier_uniform", rng, fan=(3 * c_in, 3 * c_out)),
        "b": init_param((c_out,), "zeros"),
    }


def conv1d_forward(x, params):
    """Kernel-3, stride-1, zero-padded convolution along time.

    ``out[t] = b + x[t-1] @ w[0] + x[t] @ w[1] + x[t+1] @ w[2]``.
    """
    x, squeeze = _batched(x, 3)
    w, b = params["w"], params["b"]
    if w.ndim != 3 or w.shape[0] != 3:
        raise ShapeError(f"conv1d weight must be (3, C_in, C_out), got {w.shape}")
    _check_last(x, w.shape[1], "conv1d")
    if x.shape[1] < 1:
        raise ShapeError("conv1d needs at least one time step")
    out = kernels.conv3_forward(x, w, b)
    return (out[0] if squeeze else out), (x, w, squeeze)


def conv1d_backward(dout, cache):
    x, w, squeeze = cache
    dout = np.ascontiguousarray(dout[None] if squeeze else dout, dtype=DTYPE)
    dx, dw, db = kernels.conv3_backward(dout, x, w)
    return (dx[0] if squeeze else dx), {"w": dw, "b": db}


# ---------------------------------------------------------------- recurrent

_GATES = {"rnn": 1, "lstm": 4, "gru": 3}


def recurrent_params(rng: Rng, kind: str, c_in: int, hidden: int) -> dict:
    k = _GATES[kind]
    return {
        "wx": init_param((c_in, k * hidden), "xavier_uniform", rng),
        "wh": init_param((hidden, k * hidden), "xavier_uniform", rng),
        "b": init_param((k * hidden,), "zeros"),
    }


def _check_recurrent(kind, x, params):
    k = _GATES[kind]
    wx, wh, b = params["wx"], params["wh"], params["b"]
    H = wh.shape[0]
    if wh.shape != (H, k * H) or wx.shape[1] != k * H or b.shape != (k * H,):
        raise ShapeError(f"{kind} parameter shapes inconsistent: wx {wx.shape}, wh {wh.shape}, b {b.shape}")
    _check_last(x, wx.shape[0], kind)
    return H


def recurrent_forward(kind: str, x, params, h0=None, c0=None):
    """Unroll a cell over ``x`` of shape (B, T, C); returns hidden states (B, T, H)."""
    x, squeeze = _batched(x, 3)
    H = _check_recurrent(kind, x, params)
    B = x.shape[0]
    xs = np.ascontiguousarray(x.transpose(1, 0, 2))
    h0 = np.zeros((B, H)) if h0 is None else np.ascontiguousarray(np.broadcast_to(h0, (B, H)), dtype=DTYPE)
    wx, wh, b = params["wx"], params["wh"], params["b"]
    if kind == "rnn":
        hs = kernels.rnn_forward(xs, h0, wx, wh, b)
        extra = ()
    elif kind == "lstm":
        c0 = np.zeros((B, H)) if c0 is None else np.ascontiguousarray(np.broadcast_to(c0, (B, H)), dtype=DTYPE)
        hs, cs, gates = kernels.lstm_forward(xs, h0, c0, wx, wh, b)
        extra = (c0, cs, gates)
    elif kind == "gru":
        hs, gcache = kernels.gru_forward(xs, h0, wx, wh, b)
        extra = (gcache,)
    else:
        raise ConfigError(f"unknown recurrent kind {kind!r}")
    out = np.ascontiguousarray(hs.transpose(1, 0, 2))
    cache = (kind, xs, h0, hs, extra, params, squeeze)
    return (out[0] if squeeze else out), cache


def recurrent_backward(dout, cache, dcs=None):
    """BPTT. ``dcs`` (LSTM only) is the gradient w.r.t. emitted cell states.

    Returns ``(dx, grads, dstate)`` where ``dstate`` is dh0 (or (dh0, dc0)).
    """
    kind, xs, h0, hs, extra, params, squeeze = cache
    dout = dout[None] if squeeze else dout
    dhs = np.ascontiguousarray(np.asarray(dout, dtype=DTYPE).transpose(1, 0, 2))
    wx, wh = params["wx"], params["wh"]
    if kind == "rnn":
        dxs, dh0, dwx, dwh, db = kernels.rnn_backward(dhs, xs, h0, hs, wx, wh)
        dstate = dh0
    elif kind == "lstm":
        c0, cs, gates = extra
        if dcs is None:
            dcs_t = np.zeros_like(hs)
        else:
            dcs = dcs[None] if squeeze else dcs
            dcs_t = np.ascontiguousarray(np.asarray(dcs, dtype=DTYPE).transpose(1, 0, 2))
        dxs, dh0, dc0, dwx, dwh, db = kernels.lstm_backward(dhs, dcs_t, xs, h0, c0, hs, cs, gates, wx, wh)
        dstate = (dh0, dc0)
    else:
        (gcache,) = extra
        dxs, dh0, dwx, dwh, db = kernels.gru_backward(dhs, xs, h0, hs, gcache, wx, wh)
        dstate = dh0
    dx = dxs.transpose(1, 0, 2)
    dx = np.ascontiguousarray(dx[0] if squeeze else dx)
    return dx, {"wx": dwx, "wh": dwh, "b": db}, dstate


def recurrent_cell_states(cache):
    """Cell states (B, T, H) of an LSTM unroll."""
    kind, _, _, _, extra, _, squeeze = cache
    if kind != "lstm":
        raise ValueError("only LSTM caches carry cell states")
    cs = extra[1].transpose(1, 0, 2)
    return cs[0] if squeeze else cs


def _one_step(kind, x_t, h_prev, params, c_prev=None):
    x_t = np.asarray(x_t, dtype=DTYPE)
    single = x_t.ndim == 1
    x = x_t[None, None, :] if single else x_t[:, None, :]
    h0 = np.asarray(h_prev, dtype=DTYPE)
    h0 = h0[None] if h0.ndim == 1 else h0
    if h0.shape[-1] != params["wh"].shape[0]:
        raise ShapeError(f"{kind}: hidden state shape {h0.shape} does not match wh {params['wh'].shape}")
    c0 = None
    if c_prev is not None:
        c0 = np.asarray(c_prev, dtype=DTYPE)
        c0 = c0[None] if c0.ndim == 1 else c0
    hs, cache = recurrent_forward(kind, x, params, h0=h0, c0=c0)
    h = hs[:, 0]
    if kind == "lstm":
        c = recurrent_cell_states(cache)[:, 0]
        return (h[0], c[0]) if single else (h, c)
    return h[0] if single else h


def rnn_cell_forward(x_t, h_prev, params):
    """h_t = tanh(x_t @ wx + h_prev @ wh + b)."""
    return _one_step("rnn", x_t, h_prev, params)


def lstm_cell_forward(x_t, h_prev, c_prev, params):
    return _one_step("lstm", x_t, h_prev, params, c_prev)


def gru_cell_forward(x_t, h_prev, params):
    return _one_step("gru", x_t, h_prev, params)


# ---------------------------------------------------------------- temporal attention


def attention_params(rng: Rng, hidden: int) -> dict:
    return {
        "w": init_param((hidden, hidden), "xavier_uniform", rng),
        "v": init_param((hidden,), "xavier_uniform", rng, fan=(hidden, 1)),
    }


def temporal_attention_forward(h, params):
    """Additive attention over time that re-weights the full sequence.

    score_t = v . tanh(h_t @ w), alpha = softmax(score), out_t = T * alpha_t * h_t.
    The factor T makes uniform attention an identity map.
    Returns ``(out, alpha, cache)``.
    """
    h, squeeze = _batched(h, 3)
    w, v = params["w"], params["v"]
    _check_last(h, w.shape[0], "temporal attention")
    T = h.shape[1]
    u = np.tanh(h @ w)
    scores = u @ v
    alpha = softmax(scores, axis=1)
    out = T * alpha[..., None] * h
    cache = (h, u, alpha, w, v, squeeze)
    if squeeze:
        return out[0], alpha[0], cache
    return out, alpha, cache


def temporal_attention_backward(dout, cache):
    h, u, alpha, w, v, squeeze = cache
    dout = dout[None] if squeeze else dout
    T = h.shape[1]
    dh = T * alpha[..., None] * dout
    dalpha = T * np.einsum("bth,bth->bt", dout, h)
    dscores = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    dv = np.einsum("bth,bt->h", u, dscores)
    dpre = dscores[..., None] * v * (1.0 - u * u)
    H = h.shape[2]
    dw = h.reshape(-1, H).T @ dpre.reshape(-1, H)
    dh += dpre @ w.T
    return (dh[0] if squeeze else dh), {"w": dw, "v": dv}


# ---------------------------------------------------------------- pooling


def mean_pool_forward(x):
    x = np.asarray(x, dtype=DTYPE)
    return x.mean(axis=-2), x.shape


def mean_pool_backward(dout, cache):
    shape = cache
    T = shape[-2]
    return np.broadcast_to(dout[..., None, :] / T, shape).copy()


# ---------------------------------------------------------------- dropout


def dropout_forward(x, p: float, train_mode: bool, rng: Rng | None = None):
    """Inverted dropout: survivors are scaled by 1/(1-p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    x = np.asarray(x, dtype=DTYPE)
    if not train_mode or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dout, cache):
    mask = cache
    return dout if mask is None else dout * mask


# ---------------------------------------------------------------- transformer blocks


def positional_encoding(T: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: even columns sin(t / 10000^(2i/d)), odd columns cos."""
    if d_model % 2:
        raise ConfigError(f"positional encoding needs an even d_model, got {d_model}")
    pos = np.arange(T, dtype=DTYPE)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=DTYPE)
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((T, d_model), dtype=DTYPE)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def layer_norm_params(d: int) -> dict:
    return {"g": init_param((d,), "ones"), "b": init_param((d,), "zeros")}


def layer_norm_forward(x, params, eps: float = LN_EPS):
    x = np.asarray(x, dtype=DTYPE)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * params["g"] + params["b"], (xhat, inv, params["g"])


def layer_norm_backward(dout, cache):
    xhat, inv, g = cache
    D = xhat.shape[-1]
    grads = {
        "g": (dout * xhat).reshape(-1, D).sum(axis=0),
        "b": dout.reshape(-1, D).sum(axis=0),
    }
    dxhat = dout * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, grads


def mhsa_params(rng: Rng, d_model: int) -> dict:
    p = {}
    for name in ("q", "k", "v", "o"):
        p["w" + name] = init_param((d_model, d_model), "xavier_uniform", rng)
        p["b" + name] = init_param((d_model,), "zeros")
    return p


def mhsa_forward(x, params, n_heads: int):
    """Unmasked multi-head scaled dot-product self-attention.

    Returns ``(out, cache)``; ``cache["attn"]`` holds the (B, heads, T, T)
    attention weights.
    """
    x, squeeze = _batched(x, 3)
    B, T, D = x.shape
    _check_last(x, params["wq"].shape[0], "self-attention")
    if D % n_heads:
        raise ConfigError(f"d_model {D} is not divisible by n_heads {n_heads}")
    dh = D // n_heads

    def split(a):
        return a.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    q = split(x @ params["wq"] + params["bq"])
    k = split(x @ params["wk"] + params["bk"])
    v = split(x @ params["wv"] + params["bv"])
    scale = 1.0 / math.sqrt(dh)
    attn = softmax(q @ k.transpose(0, 1, 3, 2) * scale, axis=-1)
    heads = attn @ v
    concat = heads.transpose(0, 2, 1, 3).reshape(B, T, D)
    out = concat @ params["wo"] + params["bo"]
    cache = {
        "x": x, "q": q, "k": k, "v": v, "attn": attn, "concat": concat,
        "params": params, "n_heads": n_heads, "scale": scale, "squeeze": squeeze,
    }
    return (out[0] if squeeze else out), cache


def mhsa_backward(dout, cache):
    x, q, k, v, attn = cache["x"], cache["q"], cache["k"], cache["v"], cache["attn"]
    p, n_heads, scale = cache["params"], cache["n_heads"], cache["scale"]
    if cache["squeeze"]:
        dout = dout[None]
    B, T, D = x.shape
    dh = D // n_heads
    x2 = x.reshape(-1, D)
    d2 = dout.reshape(-1, D)
    grads = {
        "wo": cache["concat"].reshape(-1, D).T @ d2,
        "bo": d2.sum(axis=0),
    }
    dheads = (dout @ p["wo"].T).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    dattn = dheads @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dheads
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dx = np.zeros_like(x)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        flat = dproj.transpose(0, 2, 1, 3).reshape(-1, D)
        grads["w" + name] = x2.T @ flat
        grads["b" + name] = flat.sum(axis=0)
        dx += (flat @ p["w" + name].T).reshape(B, T, D)
    return (dx[0] if cache["squeeze"] else dx), grads


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int
    n_heads: int
    d_ff: int
    n_layers: int = 1
    dropout_p: float = 0.0

    def __post_init__(self):
        if min(self.d_model, self.n_heads, self.d_ff, self.n_layers) <= 0:
            raise ConfigError("encoder dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


def encoder_layer_params(rng: Rng, cfg: EncoderConfig) -> dict:
    p = {}
    for name, value in mhsa_params(rng, cfg.d_model).items():
        p["attn." + name] = value
    for name, value in layer_norm_params(cfg.d_model).items():
        p["ln1." + name] = value
    for name, value in dense_params(rng, cfg.d_model, cfg.d_ff).items():
        p["ff1." + name] = value
    for name, value in dense_params(rng, cfg.d_ff, cfg.d_model).items():
        p["ff2." + name] = value
    for name, value in layer_norm_params(cfg.d_model).items():
        p["ln2." + name] = value
    return p


def _sub(params, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def encoder_layer_forward(x, cfg: EncoderConfig, params, train_mode: bool = False, rng: Rng | None = None):
    """Post-norm encoder layer.

    y = LN(x + MHSA(x)); out = LN(y + FFN(y)) with FFN = dense -> relu -> dense.
    ``train_mode``/``rng`` are accepted for interface symmetry; this layer has
    no stochastic path.
    """
    x, squeeze = _batched(x, 3)
    a, c_attn = mhsa_forward(x, _sub(params, "attn."), cfg.n_heads)
    y, c_ln1 = layer_norm_forward(x + a, _sub(params, "ln1."))
    f1, c_ff1 = dense_forward(y, _sub(params, "ff1."))
    r = np.maximum(f1, 0.0)
    f2, c_ff2 = dense_forward(r, _sub(params, "ff2."))
    out, c_ln2 = layer_norm_forward(y + f2, _sub(params, "ln2."))
    cache = (c_attn, c_ln1, c_ff1, f1, c_ff2, c_ln2, squeeze)
    return (out[0] if squeeze else out), cache


def encoder_layer_backward(dout, cache):
    c_attn, c_ln1, c_ff1, f1, c_ff2, c_ln2, squeeze = cache
    dout = dout[None] if squeeze else dout
    grads = {}

    def put(prefix, g):
        for k, v in g.items():
            grads[prefix + k] = v

    dz2, g = layer_norm_backward(dout, c_ln2)
    put("ln2.", g)
    dr, g = dense_backward(dz2, c_ff2)
    put("ff2.", g)
    df1 = dr * (f1 > 0)
    dy_ff, g = dense_backward(df1, c_ff1)
    put("ff1.", g)
    dz1, g = layer_norm_backward(dz2 + dy_ff, c_ln1)
    put("ln1.", g)
    dx_attn, g = mhsa_backward(dz1, c_attn)
    put("attn.", g)
    dx = dz1 + dx_attn
    return (dx[0] if squeeze else dx), grads
