"""Track datasets: validation, JSON-lines persistence, seeded splits.

One track per line::

    {"track_id": "a", "fps": 30, "speed_kmh": 60,
     "frames": [[0, [10, 10, 20, 18]], [1, [12, 10, 22, 18]]]}

``speed_kmh`` may be omitted for inference-only tracks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._io import atomic_write_text
from .errors import DataError, InvariantError, ParseError, UnlabeledError
from .tensorcore import Rng


class BoundingBox(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    def validate(self, track_id=None):
        if not all(math.isfinite(v) for v in self):
            raise InvariantError(f"non-finite box coordinate {tuple(self)}", track_id, "frames")
        if not self.x2 > self.x1:
            raise InvariantError(f"x2 must exceed x1 in box {tuple(self)}", track_id, "frames")
        if not self.y2 > self.y1:
            raise InvariantError(f"y2 must exceed y1 in box {tuple(self)}", track_id, "frames")
        return self


@dataclass(frozen=True, eq=False)
class Track:
    """One vehicle's per-frame boxes, optionally labeled with its constant speed.

    ``frame_idx`` is an int64 vector and ``boxes`` an (N, 4) float64 array of
    (x1, y1, x2, y2) rows; both are read-only after validation.
    """

    track_id: str
    fps: float
    frame_idx: np.ndarray
    boxes: np.ndarray
    speed_kmh: float | None = None

    def __post_init__(self):
        fi = np.array(self.frame_idx, dtype=np.int64).reshape(-1)
        bx = np.array(self.boxes, dtype=np.float64)
        if bx.ndim == 1 and bx.size == 0:
            bx = bx.reshape(0, 4)
        fi.flags.writeable = False
        bx.flags.writeable = False
        object.__setattr__(self, "frame_idx", fi)
        object.__setattr__(self, "boxes", bx)
        object.__setattr__(self, "fps", float(self.fps))
        if self.speed_kmh is not None:
            object.__setattr__(self, "speed_kmh", float(self.speed_kmh))
        self.validate()

    @classmethod
    def from_frames(cls, track_id, fps, frames, speed_kmh=None):
        """Build from ``[(frame_idx, (x1, y1, x2, y2)), ...]`` pairs."""
        idx = [int(f) for f, _ in frames]
        boxes = [tuple(float(v) for v in b) for _, b in frames]
        return cls(track_id, fps, np.array(idx, dtype=np.int64), np.array(boxes, dtype=np.float64).reshape(-1, 4), speed_kmh)

    def validate(self):
        tid = self.track_id
        if not isinstance(tid, str):
            raise InvariantError("track_id must be a string", tid, "track_id")
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise InvariantError(f"fps must be finite and positive, got {self.fps}", tid, "fps")
        if self.speed_kmh is not None and not (math.isfinite(self.speed_kmh) and self.speed_kmh >= 0):
            raise InvariantError(f"speed_kmh must be finite and >= 0, got {self.speed_kmh}", tid, "speed_kmh")
        if self.boxes.ndim != 2 or self.boxes.shape[1] != 4:
            raise InvariantError(f"boxes must be (N, 4), got {self.boxes.shape}", tid, "frames")
        if len(self.frame_idx) != len(self.boxes):
            raise InvariantError("frame index and box counts differ", tid, "frames")
        if len(self.frame_idx) == 0:
            raise InvariantError("frames list is empty", tid, "frames")
        if np.any(np.diff(self.frame_idx) <= 0):
            raise InvariantError("frame indices must be strictly increasing", tid, "frames")
        for row in self.boxes:
            BoundingBox(*row).validate(tid)

    @property
    def labeled(self) -> bool:
        return self.speed_kmh is not None

    @property
    def n_frames(self) -> int:
        return len(self.frame_idx)

    @property
    def frames(self) -> list[tuple[int, BoundingBox]]:
        return [(int(f), BoundingBox(*map(float, b))) for f, b in zip(self.frame_idx, self.boxes)]

    def __len__(self):
        return self.n_frames

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return (
            self.track_id == other.track_id
            and self.fps == other.fps
            and self.speed_kmh == other.speed_kmh
            and np.array_equal(self.frame_idx, other.frame_idx)
            and np.array_equal(self.boxes, other.boxes)
        )

    def __hash__(self):
        return hash((self.track_id, self.fps, self.speed_kmh, self.n_frames))

    def to_record(self) -> dict:
        rec = {"track_id": self.track_id, "fps": self.fps}
        if self.speed_kmh is not None:
            rec["speed_kmh"] = self.speed_kmh
        rec["frames"] = [[int(f), [float(v) for v in b]] for f, b in zip(self.frame_idx, self.boxes)]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Track":
        if not isinstance(rec, dict):
            raise InvariantError("track record must be a JSON object")
        tid = rec.get("track_id")
        for key in ("track_id", "fps", "frames"):
            if key not in rec:
                raise InvariantError(f"missing required field {key!r}", tid, key)
        frames = rec["frames"]
        if not isinstance(frames, list):
            raise InvariantError("frames must be a list", tid, "frames")
        idx, boxes = [], []
        for item in frames:
            if not (isinstance(item, list) and len(item) == 2 and isinstance(item[1], list) and len(item[1]) == 4):
                raise InvariantError(f"malformed frame entry {item!r}", tid, "frames")
            f, box = item
            if isinstance(f, bool) or not isinstance(f, int):
                raise InvariantError(f"frame index must be an integer, got {f!r}", tid, "frames")
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in box):
                raise InvariantError(f"box coordinates must be numbers, got {box!r}", tid, "frames")
            idx.append(f)
            boxes.append([float(v) for v in box])
        fps = rec["fps"]
        if isinstance(fps, bool) or not isinstance(fps, (int, float)):
            raise InvariantError(f"fps must be a number, got {fps!r}", tid, "fps")
        speed = rec.get("speed_kmh")
        if speed is not None and (isinstance(speed, bool) or not isinstance(speed, (int, float))):
            raise InvariantError(f"speed_kmh must be a number, got {speed!r}", tid, "speed_kmh")
        return cls(
            tid,
            fps,
            np.array(idx, dtype=np.int64),
            np.array(boxes, dtype=np.float64).reshape(-1, 4),
            speed,
        )


def dumps_tracks(tracks) -> str:
    return "".join(json.dumps(t.to_record(), separators=(",", ":")) + "\n" for t in tracks)


def load_tracks(path) -> list[Track]:
    """Read a JSON-lines track file. Blank lines are skipped."""
    tracks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            try:
                tracks.append(Track.from_record(rec))
            except InvariantError as exc:
                raise InvariantError(f"line {lineno}: {exc}", exc.track_id, exc.field) from exc
    return tracks


def save_tracks(tracks, path):
    for t in tracks:
        t.validate()
    atomic_write_text(path, dumps_tracks(tracks))


def require_labels(tracks):
    missing = [t.track_id for t in tracks if not t.labeled]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise UnlabeledError(f"{len(missing)} track(s) have no speed_kmh label: {shown}")


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    test: list
    seed: int
    train_fraction: float


def split_dataset(tracks, train_fraction: float, seed: int) -> DatasetSplit:
    """Seeded shuffle split; each side keeps the input order of its members.

    |train| = round(train_fraction * N), clamped so both sides are non-empty.
    """
    tracks = list(tracks)
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(tracks)
    if n < 2:
        raise DataError(f"need at least 2 tracks to split, got {n}")
    ids = [t.track_id for t in tracks]
    if len(set(ids)) != n:
        raise DataError("track ids must be unique to split")
    n_train = int(math.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    order = Rng(seed).permutation(n)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return DatasetSplit(
        train=[tracks[i] for i in train_idx],
        test=[tracks[i] for i in test_idx],
        seed=int(seed),
        train_fraction=float(train_fraction),
    )
