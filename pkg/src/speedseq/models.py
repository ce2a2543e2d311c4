"""The two speed regressors.

Recurrent variants (rnn / lstm / gru)::

    conv embed -> recurrent unroll -> temporal attention -> conv -> mean over time -> dense -> speed

Transformer variant::

    conv embed -> + positional encoding -> encoder x n_layers -> mean over time
        -> dense -> relu -> dropout -> dense -> speed

The network regresses the z-scored speed; ``forward`` maps it back to km/h
with the training-label mean and std stored on the model.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import layers as L
from .errors import ConfigError, ShapeError, StaleCacheError, TooShortError
from .features import N_FEATURES, NormStats, extract_features, window_array
from .tensorcore import DTYPE, ParamSet, Rng

VARIANTS = ("rnn", "lstm", "gru", "transformer")
RECURRENT = ("rnn", "lstm", "gru")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "lstm"
    input_dim: int = N_FEATURES
    embed_dim: int = 32
    hidden_dim: int = 64
    n_layers: int | None = None
    n_heads: int = 4
    d_ff: int = 128
    dropout_p: float = 0.1
    seq_len: int = 20
    use_positional_encoding: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid variants: {', '.join(VARIANTS)}")
        if self.n_layers is None:
            object.__setattr__(self, "n_layers", 2 if self.variant == "transformer" else 1)
        dims = dict(
            input_dim=self.input_dim, embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
            n_layers=self.n_layers, n_heads=self.n_heads, d_ff=self.d_ff, seq_len=self.seq_len,
        )
        for name, value in dims.items():
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.variant == "transformer":
            if self.embed_dim % self.n_heads:
                raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}")
            if self.embed_dim % 2:
                raise ConfigError(f"embed_dim must be even for positional encoding, got {self.embed_dim}")

    @property
    def encoder(self) -> L.EncoderConfig:
        return L.EncoderConfig(self.embed_dim, self.n_heads, self.d_ff, self.n_layers, self.dropout_p)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        if not isinstance(d, dict):
            raise ConfigError("model config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config field(s): {sorted(unknown)}")
        return cls(**d)


class SpeedModel:
    """Config, parameters and the normalization state needed at inference."""

    def __init__(self, config: ModelConfig, params: ParamSet, norm_stats: NormStats | None = None,
                 target_mean: float = 0.0, target_std: float = 1.0):
        if not target_std > 0:
            raise ConfigError(f"target std must be positive, got {target_std}")
        self.config = config
        self.params = params
        self.norm_stats = norm_stats or NormStats.identity()
        self.target_mean = float(target_mean)
        self.target_std = float(target_std)
        self.version = 0  # bumped on every parameter update; guards stale caches
        self.epoch = 0
        self.best_val_rmse = None

    @property
    def target_stats(self):
        return self.target_mean, self.target_std

    def touch(self):
        self.version += 1

    def n_params(self) -> int:
        return self.params.count()

    def __repr__(self):
        return f"SpeedModel({self.config.variant}, {self.n_params()} params)"


def _add(ps: ParamSet, prefix: str, block: dict):
    for name, value in block.items():
        ps.add(prefix + name, value)


def build(config: ModelConfig, rng: Rng | int) -> SpeedModel:
    """Initialize every block (xavier weights, zero biases)."""
    if isinstance(rng, int):
        rng = Rng(rng)
    c = config
    ps = ParamSet()
    _add(ps, "embed.", L.conv1d_params(rng, c.input_dim, c.embed_dim))
    if c.variant in RECURRENT:
        width = c.embed_dim
        for k in range(c.n_layers):
            _add(ps, f"rec{k}.", L.recurrent_params(rng, c.variant, width, c.hidden_dim))
            width = c.hidden_dim
        _add(ps, "attn.", L.attention_params(rng, c.hidden_dim))
        _add(ps, "conv.", L.conv1d_params(rng, c.hidden_dim, c.hidden_dim))
        _add(ps, "head.", L.dense_params(rng, c.hidden_dim, 1))
    else:
        enc = c.encoder
        for k in range(c.n_layers):
            _add(ps, f"enc{k}.", L.encoder_layer_params(rng, enc))
        _add(ps, "fc1.", L.dense_params(rng, c.embed_dim, c.hidden_dim))
        _add(ps, "out.", L.dense_params(rng, c.hidden_dim, 1))
    return SpeedModel(config, ps)


def _sub(ps: ParamSet, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in ps.items() if k.startswith(prefix)}


def _put(grads: dict, prefix: str, g: dict):
    for k, v in g.items():
        grads[prefix + k] = v


def _check_batch(model: SpeedModel, batch) -> np.ndarray:
    c = model.config
    x = np.ascontiguousarray(batch, dtype=DTYPE)
    if x.ndim != 3 or x.shape[2] != c.input_dim:
        raise ShapeError(f"expected batch of shape (B, T, {c.input_dim}), got {x.shape}")
    if x.shape[1] != c.seq_len:
        raise ShapeError(f"model expects seq_len {c.seq_len}, got T={x.shape[1]}")
    return x


def _tail(model: SpeedModel, h, caches: dict, train_mode: bool, rng: Rng | None):
    """Everything after the conv embedding; returns the z-scored output (B,)."""
    c = model.config
    ps = model.params
    if c.variant in RECURRENT:
        for k in range(c.n_layers):
            h, caches[f"rec{k}"] = L.recurrent_forward(c.variant, h, _sub(ps, f"rec{k}."))
        h, alpha, caches["attn"] = L.temporal_attention_forward(h, _sub(ps, "attn."))
        h, caches["conv"] = L.conv1d_forward(h, _sub(ps, "conv."))
        h, caches["pool"] = L.mean_pool_forward(h)
        z, caches["head"] = L.dense_forward(h, _sub(ps, "head."))
        caches["alpha"] = alpha
    else:
        if c.use_positional_encoding:
            h = h + L.positional_encoding(c.seq_len, c.embed_dim)
        enc = c.encoder
        for k in range(c.n_layers):
            h, caches[f"enc{k}"] = L.encoder_layer_forward(h, enc, _sub(ps, f"enc{k}."), train_mode, rng)
        h, caches["pool"] = L.mean_pool_forward(h)
        f1, caches["fc1"] = L.dense_forward(h, _sub(ps, "fc1."))
        caches["relu"] = f1
        d, caches["drop"] = L.dropout_forward(np.maximum(f1, 0.0), c.dropout_p, train_mode, rng)
        z, caches["out"] = L.dense_forward(d, _sub(ps, "out."))
    return z[:, 0]


def embed(model: SpeedModel, batch) -> np.ndarray:
    """Conv embedding of a (B, T, 8) batch: (B, T, embed_dim)."""
    h, _ = L.conv1d_forward(_check_batch(model, batch), _sub(model.params, "embed."))
    return h


def forward_embedded(model: SpeedModel, h) -> np.ndarray:
    """Eval-mode km/h predictions from an already embedded (B, T, embed_dim) sequence.

    The conv embedding mixes neighbouring frames, so time-order properties of
    the downstream blocks are stated on this embedded sequence.
    """
    h = np.ascontiguousarray(h, dtype=DTYPE)
    if h.ndim != 3 or h.shape[1:] != (model.config.seq_len, model.config.embed_dim):
        raise ShapeError(f"expected (B, {model.config.seq_len}, {model.config.embed_dim}), got {h.shape}")
    z = _tail(model, h, {}, False, None)
    return z * model.target_std + model.target_mean


def forward(model: SpeedModel, batch, train_mode: bool = False, rng: Rng | None = None):
    """Predict km/h for a (B, T, 8) batch of normalized windows.

    Returns ``(pred_kmh, cache)``; dropout only fires in train mode.
    """
    x = _check_batch(model, batch)
    caches = {}
    h, caches["embed"] = L.conv1d_forward(x, _sub(model.params, "embed."))
    z = _tail(model, h, caches, train_mode, rng)
    pred = z * model.target_std + model.target_mean
    cache = {"layers": caches, "version": model.version, "model_id": id(model), "z": z}
    return pred, cache


def backward(model: SpeedModel, cache, grad_pred) -> dict:
    """Gradients of a loss w.r.t. every parameter, given dLoss/dpred_kmh.

    Also copies them into ``model.params.grads``.
    """
    if cache.get("model_id") != id(model) or cache.get("version") != model.version:
        raise StaleCacheError("cache does not come from the current parameters of this model")
    c = model.config
    lc = cache["layers"]
    dz = (np.asarray(grad_pred, dtype=DTYPE) * model.target_std)[:, None]
    grads: dict = {}
    if c.variant in RECURRENT:
        dh, g = L.dense_backward(dz, lc["head"])
        _put(grads, "head.", g)
        dh = L.mean_pool_backward(dh, lc["pool"])
        dh, g = L.conv1d_backward(dh, lc["conv"])
        _put(grads, "conv.", g)
        dh, g = L.temporal_attention_backward(dh, lc["attn"])
        _put(grads, "attn.", g)
        for k in reversed(range(c.n_layers)):
            dh, g, _ = L.recurrent_backward(dh, lc[f"rec{k}"])
            _put(grads, f"rec{k}.", g)
    else:
        dd, g = L.dense_backward(dz, lc["out"])
        _put(grads, "out.", g)
        dr = L.dropout_backward(dd, lc["drop"])
        df1 = dr * (lc["relu"] > 0)
        dh, g = L.dense_backward(df1, lc["fc1"])
        _put(grads, "fc1.", g)
        dh = L.mean_pool_backward(dh, lc["pool"])
        for k in reversed(range(c.n_layers)):
            dh, g = L.encoder_layer_backward(dh, lc[f"enc{k}"])
            _put(grads, f"enc{k}.", g)
    _, g = L.conv1d_backward(dh, lc["embed"])
    _put(grads, "embed.", g)
    model.params.set_grads(grads)
    return grads


def normalize_windows(model: SpeedModel, windows: np.ndarray) -> np.ndarray:
    return (windows - model.norm_stats.mean) / model.norm_stats.std


def track_windows(model: SpeedModel, track, stride: int = 1) -> np.ndarray:
    """Normalized (n, seq_len, 8) windows of one track."""
    seq = extract_features(track)
    w = window_array(seq.values, model.config.seq_len, stride)
    if len(w) == 0:
        raise TooShortError(
            f"track {track.track_id!r} has {track.n_frames} frames; "
            f"seq_len {model.config.seq_len} needs at least {model.config.seq_len + 1}",
            [track.track_id],
        )
    return normalize_windows(model, w)


def predict_windows(model: SpeedModel, windows: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Eval-mode predictions (km/h) for already-normalized windows."""
    out = np.empty(len(windows))
    for s in range(0, len(windows), chunk):
        out[s:s + chunk], _ = forward(model, windows[s:s + chunk], train_mode=False)
    return out


def predict_track(model: SpeedModel, track) -> tuple[float, list[float]]:
    """Mean of the per-window predictions over every stride-1 window."""
    per_window = predict_windows(model, track_windows(model, track))
    return float(per_window.mean()), [float(v) for v in per_window]


def predict_tracks(model: SpeedModel, tracks) -> list[tuple[float, list[float]]]:
    """Batched :func:`predict_track` over many tracks (same numbers, fewer calls)."""
    tracks = list(tracks)
    short = [t.track_id for t in tracks if t.n_frames < model.config.seq_len + 1]
    if short:
        raise TooShortError(
            f"{len(short)} track(s) shorter than seq_len + 1 = {model.config.seq_len + 1} frames: "
            + ", ".join(short[:20]) + (" ..." if len(short) > 20 else ""),
            short,
        )
    if not tracks:
        return []
    per_track = [track_windows(model, t) for t in tracks]
    preds = predict_windows(model, np.concatenate(per_track, axis=0))
    out = []
    start = 0
    for w in per_track:
        p = preds[start:start + len(w)]
        start += len(w)
        out.append((float(p.mean()), [float(v) for v in p]))
    return out
