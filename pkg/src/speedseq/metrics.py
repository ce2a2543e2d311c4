"""Per-prediction accuracy, RMSE, evaluation and CSV reports."""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import DataError, TooShortError, UnlabeledError

SUMMARY_COLUMNS = ("model", "dataset", "mean_accuracy_pct", "rmse_kmh", "n")
SCATTER_COLUMNS = ("track_id", "actual_kmh", "predicted_kmh")


def accuracy_pct(predicted: float, actual: float) -> float:
    """(1 - |predicted - actual| / |actual|) * 100, unclamped."""
    if actual == 0:
        raise DataError("accuracy is undefined for an actual speed of 0")
    # expanded form: one rounding fewer, exact on integer-valued examples
    return 100.0 - 100.0 * abs(predicted - actual) / abs(actual)


def rmse(pairs) -> float:
    """Root mean squared error over (predicted, actual) pairs."""
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.size == 0:
        raise DataError("rmse of an empty set is undefined")
    d = arr[:, 0] - arr[:, 1]
    return math.sqrt(float(np.dot(d, d)) / len(d))


@dataclass
class SampleRow:
    track_id: str
    actual_kmh: float
    predicted_kmh: float
    accuracy_pct: float


@dataclass
class Metrics:
    per_sample: list
    mean_accuracy_pct: float
    rmse_kmh: float
    n: int

    @classmethod
    def from_rows(cls, rows) -> "Metrics":
        rows = list(rows)
        if not rows:
            raise DataError("no samples to score")
        acc = sum(r.accuracy_pct for r in rows) / len(rows)
        err = rmse([(r.predicted_kmh, r.actual_kmh) for r in rows])
        return cls(rows, acc, err, len(rows))

    @classmethod
    def from_predictions(cls, ids, predicted, actual) -> "Metrics":
        rows = [
            SampleRow(str(i), float(a), float(p), accuracy_pct(float(p), float(a)))
            for i, p, a in zip(ids, predicted, actual)
        ]
        return cls.from_rows(rows)


def evaluate(model, tracks, predictor=None, per_window: bool = False) -> Metrics:
    """Score ``model`` on labeled tracks, one row per track (mean of its windows).

    ``predictor(tracks) -> [(speed, per_window), ...]`` replaces the model,
    e.g. to inject oracle predictions. ``per_window=True`` scores every
    window as its own row instead, for diagnostics.
    """
    from .models import predict_tracks

    tracks = list(tracks)
    unlabeled = [t.track_id for t in tracks if t.speed_kmh is None]
    if unlabeled:
        raise UnlabeledError(f"evaluation needs labeled tracks; unlabeled: {', '.join(unlabeled[:20])}")
    if predictor is None:
        seq_len = model.config.seq_len
        short = [t.track_id for t in tracks if t.n_frames < seq_len + 1]
        if short:
            raise TooShortError(
                f"{len(short)} track(s) shorter than {seq_len + 1} frames: " + ", ".join(short[:20]),
                short,
            )
        preds = predict_tracks(model, tracks)
    else:
        preds = predictor(tracks)
    if per_window:
        ids, p, a = [], [], []
        for t, (_, windows) in zip(tracks, preds):
            for k, w in enumerate(windows):
                ids.append(f"{t.track_id}#{k}")
                p.append(w)
                a.append(t.speed_kmh)
        return Metrics.from_predictions(ids, p, a)
    return Metrics.from_predictions(
        [t.track_id for t in tracks], [s for s, _ in preds], [t.speed_kmh for t in tracks]
    )


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _slug(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", s)


def summary_csv(metrics_by_model: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for (model_name, dataset), m in metrics_by_model.items():
        w.writerow([model_name, dataset, _fmt(m.mean_accuracy_pct), _fmt(m.rmse_kmh), m.n])
    return buf.getvalue()


def scatter_csv(m: Metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCATTER_COLUMNS)
    for r in m.per_sample:
        w.writerow([r.track_id, _fmt(r.actual_kmh), _fmt(r.predicted_kmh)])
    return buf.getvalue()


def scatter_filename(model_name: str, dataset: str) -> str:
    return f"scatter_{_slug(model_name)}_{_slug(dataset)}.csv"


def emit_report(metrics_by_model: dict, path) -> dict:
    """Write ``summary.csv`` plus one scatter CSV per (model, dataset) key.

    ``metrics_by_model`` maps ``(model_name, dataset_name)`` to Metrics.
    Returns the written paths.
    """
    if not metrics_by_model:
        raise DataError("nothing to report")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = {"summary": out / "summary.csv"}
    atomic_write_text(written["summary"], summary_csv(metrics_by_model))
    for (model_name, dataset), m in metrics_by_model.items():
        p = out / scatter_filename(model_name, dataset)
        atomic_write_text(p, scatter_csv(m))
        written[(model_name, dataset)] = p
    return written


def read_summary(path) -> list[dict]:
    """Parse a summary CSV; raises DataError on a malformed file."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SUMMARY_COLUMNS:
            raise DataError(f"{path}: expected header {','.join(SUMMARY_COLUMNS)}, got {reader.fieldnames}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise DataError(f"{path}: line {lineno} has the wrong number of fields")
            try:
                float(row["mean_accuracy_pct"])
                float(row["rmse_kmh"])
                int(row["n"])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
            rows.append(row)
    return rows


def read_scatter(path) -> list[tuple[str, float, float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [(r["track_id"], float(r["actual_kmh"]), float(r["predicted_kmh"])) for r in reader]


def merge_summaries(rows) -> tuple[list[str], list[str], dict]:
    """Pivot summary rows into (models, datasets, {(model, dataset): row})."""
    cells = {}
    models, datasets = [], []
    for r in rows:
        key = (r["model"], r["dataset"])
        if key in cells:
            raise DataError(f"duplicate entry for model {key[0]!r} on dataset {key[1]!r}")
        cells[key] = r
        if key[0] not in models:
            models.append(key[0])
        if key[1] not in datasets:
            datasets.append(key[1])
    return models, datasets, cells


def comparison_table(rows) -> tuple[str, str]:
    """Model-by-dataset accuracy and RMSE table as (csv_text, plain_text)."""
    models, datasets, cells = merge_summaries(rows)
    header = ["model"]
    for d in datasets:
        header += [f"{d} accuracy_pct", f"{d} rmse_kmh"]
    body = []
    for m in models:
        line = [m]
        for d in datasets:
            r = cells.get((m, d))
            line += [r["mean_accuracy_pct"], r["rmse_kmh"]] if r else ["", ""]
        body.append(line)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
    text = "\n".join(
        "  ".join(str(c).ljust(widths[i]) for i, c in enumerate(row)).rstrip() for row in [header] + body
    )
    return buf.getvalue(), text + "\n"
