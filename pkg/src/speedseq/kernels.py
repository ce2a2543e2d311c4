"""Hot loops: 3-tap temporal convolution and the recurrent unrolls.

Each kernel is written once in the numpy subset that numba compiles. By
default they run as plain numpy; with ``SPEEDSEQ_NUMBA=1`` the same source
runs as ``@njit`` functions.

Recurrent kernels are time-major: sequences are ``(T, B, C)`` so every
per-step slice ``xs[t]`` is a contiguous ``(B, C)`` block. Weights use the
row-vector convention ``x @ W``. Gate blocks are concatenated along the last
axis: LSTM ``[i, f, g, o]``, GRU ``[z, r, n]``.
"""
import numpy as np

from ._accel import USE_NUMBA, jitable, maybe_njit

__all__ = [
    "USE_NUMBA",
    "conv3_forward",
    "conv3_backward",
    "rnn_forward",
    "rnn_backward",
    "lstm_forward",
    "lstm_backward",
    "gru_forward",
    "gru_backward",
]


@jitable
def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@maybe_njit
def conv3_forward(x, w, b):
    """Same-padded kernel-3 convolution along time.

    x: (B, T, C), w: (3, C, O) with tap k reading x[t + k - 1], b: (O,).
    """
    B, T, C = x.shape
    O = w.shape[2]
    x2 = np.ascontiguousarray(x).reshape(B * T, C)
    out = np.dot(x2, np.ascontiguousarray(w[1])).reshape(B, T, O)
    if T > 1:
        left = np.dot(x2, np.ascontiguousarray(w[0])).reshape(B, T, O)
        right = np.dot(x2, np.ascontiguousarray(w[2])).reshape(B, T, O)
        out[:, 1:, :] += left[:, :-1, :]
        out[:, :-1, :] += right[:, 1:, :]
    out += b
    return out


@maybe_njit
def conv3_backward(dout, x, w):
    """Gradients of :func:`conv3_forward`; returns (dx, dw, db)."""
    B, T, C = x.shape
    O = w.shape[2]
    d2 = np.ascontiguousarray(dout).reshape(B * T, O)
    x2 = np.ascontiguousarray(x).reshape(B * T, C)
    db = d2.sum(axis=0)
    dw = np.zeros((3, C, O))
    dw[1] = np.dot(x2.T, d2)
    dx = np.dot(d2, np.ascontiguousarray(w[1].T)).reshape(B, T, C)
    if T > 1:
        # x shifted so that row t holds x[t-1] (resp. x[t+1]), zero at the edge
        x_prev = np.zeros((B, T, C))
        x_prev[:, 1:, :] = x[:, :-1, :]
        x_next = np.zeros((B, T, C))
        x_next[:, :-1, :] = x[:, 1:, :]
        dw[0] = np.dot(x_prev.reshape(B * T, C).T, d2)
        dw[2] = np.dot(x_next.reshape(B * T, C).T, d2)
        g0 = np.dot(d2, np.ascontiguousarray(w[0].T)).reshape(B, T, C)
        g2 = np.dot(d2, np.ascontiguousarray(w[2].T)).reshape(B, T, C)
        dx[:, :-1, :] += g0[:, 1:, :]
        dx[:, 1:, :] += g2[:, :-1, :]
    return dx, dw, db


@maybe_njit
def rnn_forward(xs, h0, wx, wh, b):
    T, B, _ = xs.shape
    H = wh.shape[0]
    hs = np.empty((T, B, H))
    h = h0
    for t in range(T):
        h = np.tanh(np.dot(xs[t], wx) + np.dot(h, wh) + b)
        hs[t] = h
    return hs


@maybe_njit
def rnn_backward(dhs, xs, h0, hs, wx, wh):
    """BPTT for :func:`rnn_forward`; returns (dxs, dh0, dwx, dwh, db)."""
    T, B, E = xs.shape
    H = wh.shape[0]
    dxs = np.empty((T, B, E))
    dwx = np.zeros((E, H))
    dwh = np.zeros((H, H))
    db = np.zeros(H)
    dh_next = np.zeros((B, H))
    wx_t = np.ascontiguousarray(wx.T)
    wh_t = np.ascontiguousarray(wh.T)
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        da = (dhs[t] + dh_next) * (1.0 - hs[t] * hs[t])
        dwx += np.dot(xs[t].T, da)
        dwh += np.dot(h_prev.T, da)
        db += da.sum(axis=0)
        dxs[t] = np.dot(da, wx_t)
        dh_next = np.dot(da, wh_t)
    return dxs, dh_next, dwx, dwh, db


@maybe_njit
def lstm_forward(xs, h0, c0, wx, wh, b):
    """Returns hs, cs (T, B, H) and post-activation gates (T, B, 4H)."""
    T, B, _ = xs.shape
    H = wh.shape[0]
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    gates = np.empty((T, B, 4 * H))
    h = h0
    c = c0
    for t in range(T):
        a = np.dot(xs[t], wx) + np.dot(h, wh) + b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :, :H] = i
        gates[t, :, H:2 * H] = f
        gates[t, :, 2 * H:3 * H] = g
        gates[t, :, 3 * H:] = o
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


@maybe_njit
def lstm_backward(dhs, dcs, xs, h0, c0, hs, cs, gates, wx, wh):
    """BPTT for :func:`lstm_forward`.

    ``dhs``/``dcs`` are loss gradients w.r.t. each emitted h_t and c_t.
    Returns (dxs, dh0, dc0, dwx, dwh, db).
    """
    T, B, E = xs.shape
    H = wh.shape[0]
    dxs = np.empty((T, B, E))
    dwx = np.zeros((E, 4 * H))
    dwh = np.zeros((H, 4 * H))
    db = np.zeros(4 * H)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dpre = np.empty((B, 4 * H))
    wx_t = np.ascontiguousarray(wx.T)
    wh_t = np.ascontiguousarray(wh.T)
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        c_prev = cs[t - 1] if t > 0 else c0
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dcs[t] + dc_next + dh * o * (1.0 - tc * tc)
        dpre[:, :H] = dc * g * i * (1.0 - i)
        dpre[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dpre[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dpre[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dwx += np.dot(xs[t].T, dpre)
        dwh += np.dot(h_prev.T, dpre)
        db += dpre.sum(axis=0)
        dxs[t] = np.dot(dpre, wx_t)
        dh_next = np.dot(dpre, wh_t)
    return dxs, dh_next, dc_next, dwx, dwh, db


@maybe_njit
def gru_forward(xs, h0, wx, wh, b):
    """Returns hs (T, B, H) and per-step cache (T, B, 4H) = [z, r, n, W_hn h_prev]."""
    T, B, _ = xs.shape
    H = wh.shape[0]
    hs = np.empty((T, B, H))
    cache = np.empty((T, B, 4 * H))
    h = h0
    for t in range(T):
        ax = np.dot(xs[t], wx) + b
        ah = np.dot(h, wh)
        z = _sigmoid(ax[:, :H] + ah[:, :H])
        r = _sigmoid(ax[:, H:2 * H] + ah[:, H:2 * H])
        hn = ah[:, 2 * H:]
        n = np.tanh(ax[:, 2 * H:] + r * hn)
        h = (1.0 - z) * n + z * h
        cache[t, :, :H] = z
        cache[t, :, H:2 * H] = r
        cache[t, :, 2 * H:3 * H] = n
        cache[t, :, 3 * H:] = hn
        hs[t] = h
    return hs, cache


@maybe_njit
def gru_backward(dhs, xs, h0, hs, cache, wx, wh):
    """BPTT for :func:`gru_forward`; returns (dxs, dh0, dwx, dwh, db)."""
    T, B, E = xs.shape
    H = wh.shape[0]
    dxs = np.empty((T, B, E))
    dwx = np.zeros((E, 3 * H))
    dwh = np.zeros((H, 3 * H))
    db = np.zeros(3 * H)
    dh_next = np.zeros((B, H))
    dax = np.empty((B, 3 * H))
    dah = np.empty((B, 3 * H))
    wx_t = np.ascontiguousarray(wx.T)
    wh_t = np.ascontiguousarray(wh.T)
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        z = cache[t, :, :H]
        r = cache[t, :, H:2 * H]
        n = cache[t, :, 2 * H:3 * H]
        hn = cache[t, :, 3 * H:]
        dh = dhs[t] + dh_next
        dan = dh * (1.0 - z) * (1.0 - n * n)
        daz = dh * (h_prev - n) * z * (1.0 - z)
        dar = dan * hn * r * (1.0 - r)
        dax[:, :H] = daz
        dax[:, H:2 * H] = dar
        dax[:, 2 * H:] = dan
        dah[:, :H] = daz
        dah[:, H:2 * H] = dar
        dah[:, 2 * H:] = dan * r
        dwx += np.dot(xs[t].T, dax)
        dwh += np.dot(h_prev.T, dah)
        db += dax.sum(axis=0)
        dxs[t] = np.dot(dax, wx_t)
        dh_next = dh * z + np.dot(dah, wh_t)
    return dxs, dh_next, dwx, dwh, db
