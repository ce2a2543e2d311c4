"""Synthetic pinhole-camera trajectories with exactly known speeds.

Camera frame: X right, Y down, Z forward, in meters; pixels follow
``u = f * X / Z + cx``, ``v = f * Y / Z + cy``. The road lies
``camera_height_m`` below the camera, so a vehicle occupies
``Y in [camera_height_m - H, camera_height_m]``.

Two scenarios:

* ``lateral``: the vehicle's side face (length L by height H) slides along +X
  at a fixed depth. The box center moves ``f * v / (fps * Z)`` px per frame.
* ``approach``: the vehicle's rear face (width W by height H) moves toward
  the camera, ``Z(t) = z0 - v * t / fps``, so the box grows nonlinearly.

Both faces are planar and parallel to the image plane, which keeps the
projection analytically invertible.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from .dataio import Track
from .errors import ConfigError, GeometryError, TooShortError
from .tensorcore import Rng

KMH_PER_MS = 3.6
MIN_EXTENT_PX = 1e-6
SPEED_RANGE = (30.0, 105.0)


@dataclass(frozen=True)
class CameraConfig:
    focal_px: float = 1000.0
    cx: float = 960.0
    cy: float = 540.0
    image_w: int = 1920
    image_h: int = 1080
    fps: float = 30.0

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ConfigError(f"focal_px must be positive, got {self.focal_px}")
        if not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.image_w <= 0 or self.image_h <= 0:
            raise ConfigError("image size must be positive")
        if not (0 <= self.cx <= self.image_w and 0 <= self.cy <= self.image_h):
            raise ConfigError(f"principal point ({self.cx}, {self.cy}) lies outside the image")


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "lateral"
    speed_kmh: float = 60.0
    n_frames: int = 40
    noise_px_std: float = 0.5
    seed: int = 0
    depth_m: float = 40.0
    z0_m: float = 60.0
    x0_m: float = 0.0
    vehicle_w_m: float = 1.8
    vehicle_h_m: float = 1.5
    vehicle_l_m: float = 4.5
    camera_height_m: float = 6.0
    speed_range: tuple = SPEED_RANGE
    min_frames: int = 21

    def __post_init__(self):
        if self.kind not in ("lateral", "approach"):
            raise ConfigError(f"scenario kind must be 'lateral' or 'approach', got {self.kind!r}")
        lo, hi = self.speed_range
        if not lo <= self.speed_kmh <= hi:
            raise ConfigError(f"speed {self.speed_kmh} km/h outside configured range [{lo}, {hi}]")
        if self.n_frames < self.min_frames:
            raise ConfigError(f"n_frames {self.n_frames} below minimum {self.min_frames}")
        if self.noise_px_std < 0:
            raise ConfigError("noise_px_std must be >= 0")
        if self.kind == "lateral" and not self.depth_m > 0:
            raise ConfigError("depth_m must be positive")
        if self.kind == "approach" and not self.z0_m > 0:
            raise ConfigError("z0_m must be positive")
        if min(self.vehicle_w_m, self.vehicle_h_m, self.vehicle_l_m) <= 0:
            raise ConfigError("vehicle dimensions must be positive")


class WorldBox(NamedTuple):
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float


def project_points(X, Y, Z, cam: CameraConfig):
    return cam.focal_px * X / Z + cam.cx, cam.focal_px * Y / Z + cam.cy


def project_box(box: WorldBox, cam: CameraConfig) -> tuple[float, float, float, float]:
    """Image-space bounding box of the 8 projected corners.

    Extents below 1e-6 px are widened symmetrically to 1e-6 px.
    """
    xs = np.array([box.x_min, box.x_max])
    ys = np.array([box.y_min, box.y_max])
    zs = np.array([box.z_min, box.z_max])
    if np.any(zs <= 0):
        raise GeometryError(f"box corner behind the camera (z range {box.z_min}..{box.z_max})")
    X, Y, Z = (a.ravel() for a in np.meshgrid(xs, ys, zs, indexing="ij"))
    u, v = project_points(X, Y, Z, cam)
    x1, x2 = _widen(u.min(), u.max())
    y1, y2 = _widen(v.min(), v.max())
    return float(x1), float(y1), float(x2), float(y2)


def _widen(lo, hi):
    if hi - lo < MIN_EXTENT_PX:
        mid = (lo + hi) / 2.0
        return mid - MIN_EXTENT_PX / 2.0, mid + MIN_EXTENT_PX / 2.0
    return lo, hi


def _world_boxes(scn: ScenarioConfig, fps: float):
    t = np.arange(scn.n_frames, dtype=np.float64)
    v_ms = scn.speed_kmh / KMH_PER_MS
    y_min, y_max = scn.camera_height_m - scn.vehicle_h_m, scn.camera_height_m
    if scn.kind == "lateral":
        xc = scn.x0_m + v_ms * t / fps
        half = scn.vehicle_l_m / 2.0
        return [WorldBox(x - half, x + half, y_min, y_max, scn.depth_m, scn.depth_m) for x in xc]
    z = scn.z0_m - v_ms * t / fps
    half = scn.vehicle_w_m / 2.0
    return [WorldBox(scn.x0_m - half, scn.x0_m + half, y_min, y_max, zz, zz) for zz in z]


def _in_view(box, cam):
    x1, y1, x2, y2 = box
    return x2 > 0 and x1 < cam.image_w and y2 > 0 and y1 < cam.image_h


def generate_track(scn: ScenarioConfig, cam: CameraConfig | None = None, track_id: str | None = None) -> Track:
    """Render one scenario into a labeled track, adding seeded per-corner noise."""
    cam = cam or CameraConfig()
    boxes = np.empty((scn.n_frames, 4))
    for i, wb in enumerate(_world_boxes(scn, cam.fps)):
        if wb.z_min <= 0:
            raise GeometryError(f"vehicle reaches the camera plane at frame {i}")
        b = project_box(wb, cam)
        if not _in_view(b, cam):
            raise GeometryError(f"vehicle leaves the image at frame {i}")
        boxes[i] = b
    if scn.noise_px_std > 0:
        boxes = boxes + Rng(scn.seed).normal(0.0, scn.noise_px_std, size=boxes.shape)
        bad = np.flatnonzero((boxes[:, 2] <= boxes[:, 0]) | (boxes[:, 3] <= boxes[:, 1]))
        if bad.size:
            raise GeometryError(f"noise collapsed the box at frame {int(bad[0])}")
    return Track(
        track_id or f"{scn.kind}-s{scn.seed}",
        cam.fps,
        np.arange(scn.n_frames, dtype=np.int64),
        boxes,
        scn.speed_kmh,
    )


def lateral_x_range(scn: ScenarioConfig, cam: CameraConfig) -> tuple[float, float]:
    """Center-X interval over which the side face stays fully inside the image."""
    half = scn.vehicle_l_m / 2.0
    lo = -cam.cx * scn.depth_m / cam.focal_px + half
    hi = (cam.image_w - cam.cx) * scn.depth_m / cam.focal_px - half
    return lo, hi


@dataclass(frozen=True)
class DatasetConfig:
    """Everything :func:`generate_dataset` needs; mirrors the generate config file."""

    n_tracks: int = 400
    speed_range: tuple = SPEED_RANGE
    mix: dict = field(default_factory=lambda: {"lateral": 0.5, "approach": 0.5})
    seed: int = 42
    camera: CameraConfig = field(default_factory=CameraConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    lane_offset_m: float = 3.5

    def to_dict(self):
        d = asdict(self)
        d["speed_range"] = list(self.speed_range)
        d["scenario"]["speed_range"] = list(self.scenario.speed_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        if not isinstance(d, dict):
            raise ConfigError("dataset config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown dataset config field(s): {sorted(unknown)}")
        kw = dict(d)
        try:
            if "camera" in kw:
                kw["camera"] = CameraConfig(**kw["camera"])
            if "scenario" in kw:
                sc = dict(kw["scenario"])
                if "speed_range" in sc:
                    sc["speed_range"] = tuple(sc["speed_range"])
                kw["scenario"] = ScenarioConfig(**sc)
            if "speed_range" in kw:
                kw["speed_range"] = tuple(float(v) for v in kw["speed_range"])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "DatasetConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(d)


def generate_dataset(
    n_tracks: int = 400,
    speed_range=SPEED_RANGE,
    mix=None,
    cam: CameraConfig | None = None,
    seed: int = 42,
    template: ScenarioConfig | None = None,
    lane_offset_m: float = 3.5,
) -> list[Track]:
    """Draw ``n_tracks`` scenarios and render them.

    Track ``i`` depends only on ``seed + i``: its kind, speed (uniform in
    ``speed_range``), start position and noise seed all come from that stream.
    ``mix`` maps scenario kind to weight. ``template`` supplies the remaining
    scenario fields (depths, vehicle size, frame count, noise level).
    """
    if n_tracks < 1:
        raise ConfigError(f"n_tracks must be >= 1, got {n_tracks}")
    lo, hi = (float(v) for v in speed_range)
    if not lo < hi:
        raise ConfigError(f"speed range must satisfy lo < hi, got {speed_range}")
    if lo < 0:
        raise ConfigError("speeds must be non-negative")
    cam = cam or CameraConfig()
    template = template or ScenarioConfig()
    mix = dict(mix or {"lateral": 0.5, "approach": 0.5})
    if set(mix) - {"lateral", "approach"} or any(w < 0 for w in mix.values()) or sum(mix.values()) <= 0:
        raise ConfigError(f"mix must weight 'lateral'/'approach' non-negatively, got {mix}")
    p_lateral = mix.get("lateral", 0.0) / sum(mix.values())

    span_s = (template.n_frames - 1) / cam.fps
    tracks = []
    width = len(str(n_tracks - 1))
    for i in range(n_tracks):
        r = Rng(seed + i)
        kind = "lateral" if r.random() < p_lateral else "approach"
        speed = float(r.uniform(lo, hi))
        travel = speed / KMH_PER_MS * span_s
        base = replace(template, kind=kind, speed_kmh=speed, speed_range=(lo, hi))
        if kind == "lateral":
            x_lo, x_hi = lateral_x_range(base, cam)
            if x_hi - travel < x_lo:
                raise GeometryError(
                    f"lateral track at {speed:.1f} km/h travels {travel:.1f} m, "
                    f"more than the {x_hi - x_lo:.1f} m visible at depth {base.depth_m} m"
                )
            x0 = float(r.uniform(x_lo, x_hi - travel))
        else:
            if base.z0_m - travel <= base.vehicle_l_m:
                raise GeometryError(
                    f"approach track at {speed:.1f} km/h reaches the camera within {template.n_frames} frames"
                )
            x0 = float(r.uniform(-lane_offset_m, lane_offset_m))
        noise_seed = int(r.integers(0, 2**31 - 1))
        scn = replace(base, x0_m=x0, seed=noise_seed)
        tracks.append(generate_track(scn, cam, track_id=f"{kind}-{i:0{width}d}"))
    return tracks


def generate_from_config(cfg: DatasetConfig) -> list[Track]:
    return generate_dataset(
        cfg.n_tracks, cfg.speed_range, cfg.mix, cfg.camera, cfg.seed, cfg.scenario, cfg.lane_offset_m
    )


def box_centers_u(track: Track) -> np.ndarray:
    return (track.boxes[:, 0] + track.boxes[:, 2]) / 2.0


def oracle_speed_lateral(track: Track, cam: CameraConfig, depth_m: float) -> float:
    """Invert the lateral scenario: least-squares slope of the box center.

    The slope (px/s) maps to meters per second through ``depth_m / focal_px``.
    """
    if track.n_frames < 2:
        raise TooShortError(f"track {track.track_id!r} needs at least 2 frames", [track.track_id])
    t = track.frame_idx.astype(np.float64) / track.fps
    u = box_centers_u(track)
    tc = t - t.mean()
    slope = float(np.dot(tc, u - u.mean()) / np.dot(tc, tc))
    return abs(slope * depth_m / cam.focal_px * KMH_PER_MS)


def closed_form_speeds(track: Track, cam: CameraConfig, depth_m: float) -> np.ndarray:
    """Per-frame-pair speed estimates ``du * Z * fps / f`` in km/h."""
    du = np.diff(box_centers_u(track))
    return np.abs(du * depth_m * track.fps / cam.focal_px * KMH_PER_MS)


def default_config_dict() -> dict:
    return DatasetConfig().to_dict()


def speed_summary(tracks) -> str:
    speeds = [t.speed_kmh for t in tracks if t.speed_kmh is not None]
    if not speeds:
        return f"{len(tracks)} tracks (unlabeled)"
    return f"{len(tracks)} tracks, speeds {min(speeds):.2f}..{max(speeds):.2f} km/h"

