"""MSE training with Adam, early stopping and JSON checkpoints."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import models as M
from ._io import atomic_write_text
from .dataio import require_labels, split_dataset
from .errors import (
    CheckpointVersionError,
    ConfigError,
    CorruptCheckpointError,
    DataError,
    NumericError,
    ShapeError,
)
from .features import NormStats, extract_features, filter_min_length, fit_norm_stats, window_array
from .metrics import rmse
from .tensorcore import DTYPE, ParamSet, Rng

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
TARGET_STD_FLOOR = 1.0  # km/h
CLIP_NORM = 5.0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 32
    epochs: int = 60
    seed: int = 0
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    window_stride: int = 1
    clip_norm: float = CLIP_NORM
    restore_best: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.epochs < 1 or self.window_stride < 1:
            raise ConfigError("batch_size, epochs and window_stride must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps_adam > 0):
            raise ConfigError("Adam needs 0 <= beta < 1 and eps > 0")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        if not isinstance(d, dict):
            raise ConfigError("train config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config field(s): {sorted(unknown)}")
        return cls(**d)


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    if pred.size == 0:
        raise ShapeError("mse_loss needs at least one element")
    diff = pred - target
    n = diff.size
    return float(np.dot(diff.ravel(), diff.ravel()) / n), 2.0 * diff / n


class AdamState:
    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def adam_step(params, grads, state: AdamState, cfg: TrainConfig, step_index: int | None = None):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    t = state.step + 1 if step_index is None else int(step_index)
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    state.step = t
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"{name!r}: parameter {p.shape}, gradient {g.shape}, moment {state.m[name].shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class History:
    train_loss: list
    val_rmse: list
    best_epoch: int = 0

    def __len__(self):
        return len(self.train_loss)

    def to_dict(self):
        return {"train_loss": list(self.train_loss), "val_rmse": list(self.val_rmse), "best_epoch": self.best_epoch}


def _windows(tracks, seq_len, stride):
    xs, ys, owner = [], [], []
    for i, t in enumerate(tracks):
        w = window_array(extract_features(t).values, seq_len, stride)
        xs.append(w)
        ys.append(np.full(len(w), t.speed_kmh))
        owner.append(np.full(len(w), i))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(owner)


def _track_rmse(model, x_val, owner, labels):
    preds = M.predict_windows(model, x_val)
    n = len(labels)
    sums = np.bincount(owner, weights=preds, minlength=n)
    counts = np.bincount(owner, minlength=n)
    return rmse(list(zip(sums / counts, labels)))


def prepare_training_tracks(tracks, seq_len: int):
    tracks = list(tracks)
    require_labels(tracks)
    kept = filter_min_length(tracks, seq_len + 1)
    if len(kept) < 2:
        raise DataError(
            f"need at least 2 labeled tracks with >= {seq_len + 1} frames, got {len(kept)} of {len(tracks)}"
        )
    return kept


def train(model: M.SpeedModel, tracks, tcfg: TrainConfig | None = None, progress=None):
    """Fit ``model`` in place and return ``(model, history)``.

    A seeded ``val_fraction`` of the tracks is held out for early stopping
    on per-track validation RMSE; input and target statistics come from the
    remaining training tracks only. With ``restore_best`` the parameters of
    the best validation epoch are restored at the end.
    """
    tcfg = tcfg or TrainConfig()
    seq_len = model.config.seq_len
    kept = prepare_training_tracks(tracks, seq_len)
    split = split_dataset(kept, 1.0 - tcfg.val_fraction, tcfg.seed)
    train_tracks, val_tracks = split.train, split.test

    model.norm_stats = fit_norm_stats(extract_features(t) for t in train_tracks)
    labels = np.array([t.speed_kmh for t in train_tracks])
    model.target_mean = float(labels.mean())
    model.target_std = float(max(labels.std(), TARGET_STD_FLOOR))

    x_tr, y_tr, _ = _windows(train_tracks, seq_len, tcfg.window_stride)
    x_tr = M.normalize_windows(model, x_tr)
    z_tr = (y_tr - model.target_mean) / model.target_std
    x_val, _, val_owner = _windows(val_tracks, seq_len, 1)
    x_val = M.normalize_windows(model, x_val)
    val_labels = np.array([t.speed_kmh for t in val_tracks])

    rng = Rng(tcfg.seed)
    drop_rng = rng.spawn(1)
    state = AdamState(model.params.params)
    history = History([], [])
    best = math.inf
    best_params = model.params.copy()
    stale = 0
    n = len(x_tr)
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, tcfg.batch_size):
            idx = order[s:s + tcfg.batch_size]
            pred, cache = M.forward(model, x_tr[idx], train_mode=True, rng=drop_rng)
            z = (pred - model.target_mean) / model.target_std
            loss, dz = mse_loss(z, z_tr[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch starting at {s}")
            grads = M.backward(model, cache, dz / model.target_std)
            clip_grad_norm(grads, tcfg.clip_norm)
            adam_step(model.params.params, grads, state, tcfg)
            model.touch()
            total += loss * len(idx)
        train_loss = total / n
        val = _track_rmse(model, x_val, val_owner, val_labels)
        if not math.isfinite(val):
            raise NumericError(f"non-finite validation RMSE at epoch {epoch}")
        history.train_loss.append(train_loss)
        history.val_rmse.append(val)
        if progress:
            progress(epoch, train_loss, val)
        log.debug("epoch %d train_loss %.6f val_rmse %.4f", epoch, train_loss, val)
        if val < best:
            best = val
            best_params = model.params.copy()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.early_stop_patience:
                break
    if tcfg.restore_best:
        model.params.load(best_params.params)
        model.touch()
        model.epoch = history.best_epoch
    else:
        model.epoch = len(history)
    model.best_val_rmse = best
    model.train_config = tcfg
    return model, history


# ---------------------------------------------------------------- checkpoints


def checkpoint_dict(model: M.SpeedModel) -> dict:
    tcfg = getattr(model, "train_config", None)
    best = model.best_val_rmse
    return {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": tcfg.to_dict() if tcfg is not None else None,
        "norm_stats": model.norm_stats.to_dict(),
        "target_stats": {"mean": model.target_mean, "std": model.target_std},
        "params": {
            name: {"shape": list(p.shape), "data": [float(v) for v in p.ravel()]}
            for name, p in model.params.items()
        },
        "epoch": model.epoch,
        "best_val_rmse": best if best is None or math.isfinite(best) else None,
    }


def save_checkpoint(model: M.SpeedModel, path):
    atomic_write_text(path, json.dumps(checkpoint_dict(model)) + "\n")


def model_from_checkpoint(d: dict) -> M.SpeedModel:
    if not isinstance(d, dict) or "version" not in d:
        raise CorruptCheckpointError("checkpoint has no version field")
    if d["version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {d['version']!r} is not supported (expected {CHECKPOINT_VERSION})"
        )
    try:
        config = M.ModelConfig.from_dict(d["model_config"])
        skeleton = M.build(config, Rng(0))
        params = ParamSet()
        for name, ref in skeleton.params.items():
            entry = d["params"][name]
            arr = np.array(entry["data"], dtype=DTYPE).reshape(entry["shape"])
            if arr.shape != ref.shape:
                raise CorruptCheckpointError(f"parameter {name!r} has shape {arr.shape}, expected {ref.shape}")
            params.add(name, arr)
        extra = set(d["params"]) - set(skeleton.params.names())
        if extra:
            raise CorruptCheckpointError(f"unexpected parameters {sorted(extra)}")
        ts = d["target_stats"]
        model = M.SpeedModel(config, params, NormStats.from_dict(d["norm_stats"]), ts["mean"], ts["std"])
        model.epoch = int(d.get("epoch", 0))
        model.best_val_rmse = d.get("best_val_rmse")
        tc = d.get("train_config")
        model.train_config = TrainConfig.from_dict(tc) if tc is not None else None
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (CorruptCheckpointError, CheckpointVersionError)):
            raise
        raise CorruptCheckpointError(f"malformed checkpoint: {exc!r}") from exc
    return model


def load_checkpoint(path) -> M.SpeedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: not a valid checkpoint file ({exc})") from exc
    return model_from_checkpoint(d)
