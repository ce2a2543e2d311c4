"""Frame-delta features, z-score normalization and sliding windows."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, FrameGapError, TooShortError

FEATURE_NAMES = ("dx1", "dy1", "dx2", "dy2", "dcx", "dcy", "dw", "dh")
N_FEATURES = len(FEATURE_NAMES)
STD_FLOOR = 1e-8
DEFAULT_SEQ_LEN = 20


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    values: np.ndarray  # (T, 8)
    track_id: str
    label_kmh: float | None = None

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))

    @classmethod
    def identity(cls):
        return cls(np.zeros(N_FEATURES), np.ones(N_FEATURES))

    def __eq__(self, other):
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)


def frame_deltas(boxes: np.ndarray) -> np.ndarray:
    """(N, 4) boxes -> (N-1, 8) delta rows in FEATURE_NAMES order."""
    d = np.diff(np.asarray(boxes, dtype=np.float64), axis=0)
    dx1, dy1, dx2, dy2 = d.T
    out = np.empty((len(d), N_FEATURES))
    out[:, :4] = d
    out[:, 4] = (dx1 + dx2) / 2.0
    out[:, 5] = (dy1 + dy2) / 2.0
    out[:, 6] = dx2 - dx1
    out[:, 7] = dy2 - dy1
    return out


def extract_features(track) -> FeatureSequence:
    """Row t holds box[t+1] - box[t] plus center shift and size change."""
    if track.n_frames < 2:
        raise TooShortError(
            f"track {track.track_id!r} has {track.n_frames} frame(s); need at least 2",
            [track.track_id],
        )
    gaps = np.diff(track.frame_idx)
    if np.any(gaps != 1):
        k = int(np.flatnonzero(gaps != 1)[0])
        raise FrameGapError(
            f"track {track.track_id!r}: frame gap of {int(gaps[k])} after frame {int(track.frame_idx[k])}"
        )
    return FeatureSequence(frame_deltas(track.boxes), track.track_id, track.speed_kmh)


def filter_min_length(tracks, min_frames: int):
    if min_frames < 2:
        raise ValueError(f"min_frames must be >= 2, got {min_frames}")
    return [t for t in tracks if t.n_frames >= min_frames]


def fit_norm_stats(sequences) -> NormStats:
    """Per-feature mean and population std over every row of every sequence."""
    rows = [np.asarray(s.values if isinstance(s, FeatureSequence) else s) for s in sequences]
    rows = [r for r in rows if len(r)]
    if not rows:
        raise DataError("cannot fit normalization stats on zero rows")
    allrows = np.concatenate(rows, axis=0)
    mean = allrows.mean(axis=0)
    std = np.maximum(allrows.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def normalize(seq: FeatureSequence, stats: NormStats) -> FeatureSequence:
    return replace(seq, values=(seq.values - stats.mean) / stats.std)


def denormalize(seq: FeatureSequence, stats: NormStats) -> FeatureSequence:
    return replace(seq, values=seq.values * stats.std + stats.mean)


def window_count(T: int, seq_len: int, stride: int = 1) -> int:
    return (T - seq_len) // stride + 1 if T >= seq_len else 0


def window_array(values: np.ndarray, seq_len: int, stride: int = 1) -> np.ndarray:
    """(T, C) -> (n_windows, seq_len, C) copy of every stride-aligned window."""
    if seq_len < 1 or stride < 1:
        raise ValueError("seq_len and stride must be >= 1")
    values = np.asarray(values)
    if len(values) < seq_len:
        return np.empty((0, seq_len) + values.shape[1:], dtype=values.dtype)
    v = sliding_window_view(values, seq_len, axis=0)[::stride]
    return np.ascontiguousarray(np.moveaxis(v, -1, 1))


def window(seq: FeatureSequence, seq_len: int, stride: int = 1) -> list[FeatureSequence]:
    return [
        FeatureSequence(w, seq.track_id, seq.label_kmh)
        for w in window_array(seq.values, seq_len, stride)
    ]
