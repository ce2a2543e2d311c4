"""Vehicle speed estimation from per-frame bounding-box trajectories."""
from .dataio import BoundingBox, DatasetSplit, Track, load_tracks, save_tracks, split_dataset
from .errors import SpeedSeqError
from .features import extract_features, filter_min_length, fit_norm_stats, normalize, window
from .metrics import Metrics, accuracy_pct, emit_report, evaluate, rmse
from .models import ModelConfig, SpeedModel, backward, build, forward, predict_track
from .synth import CameraConfig, ScenarioConfig, generate_dataset, generate_track, oracle_speed_lateral
from .train import TrainConfig, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
