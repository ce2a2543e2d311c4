"""Example converter: per-frame annotation CSV -> canonical track JSONL.

    python scripts/convert_csv.py annotations.csv tracks.jsonl [--fps 30]

Input columns (header required, extra columns ignored)::

    track_id, frame_idx, x1, y1, x2, y2 [, speed_kmh] [, fps]

Rows may come in any order; they are grouped by ``track_id`` and sorted by
``frame_idx``. ``speed_kmh`` and ``fps`` must be constant within a track. A
missing or empty ``speed_kmh`` produces an inference-only track. Source
datasets ship their own annotation layouts, so a real corpus needs a short
adapter that emits this CSV first.
"""
from __future__ import annotations

import argparse
import csv
import sys
from collections import OrderedDict

from speedseq.dataio import Track, save_tracks
from speedseq.errors import DataError

REQUIRED = ("track_id", "frame_idx", "x1", "y1", "x2", "y2")


def _single(values, what, track_id):
    distinct = set(values)
    if len(distinct) > 1:
        raise DataError(f"track {track_id!r}: {what} varies within the track: {sorted(distinct)}")
    return distinct.pop()


def convert(rows, default_fps: float | None = None) -> list[Track]:
    groups: OrderedDict[str, list] = OrderedDict()
    for lineno, row in enumerate(rows, start=2):
        missing = [c for c in REQUIRED if not row.get(c)]
        if missing:
            raise DataError(f"line {lineno}: missing {', '.join(missing)}")
        groups.setdefault(row["track_id"], []).append(row)
    tracks = []
    for tid, rs in groups.items():
        rs.sort(key=lambda r: int(r["frame_idx"]))
        speed = _single((r.get("speed_kmh") or "" for r in rs), "speed_kmh", tid)
        fps = _single((r.get("fps") or "" for r in rs), "fps", tid)
        if not fps:
            if default_fps is None:
                raise DataError(f"track {tid!r} has no fps column; pass --fps")
            fps = default_fps
        tracks.append(Track(
            tid,
            float(fps),
            [int(r["frame_idx"]) for r in rs],
            [[float(r[k]) for k in ("x1", "y1", "x2", "y2")] for r in rs],
            float(speed) if speed else None,
        ))
    return tracks


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="convert an annotation CSV to speedseq track JSONL")
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--fps", type=float, help="frame rate for tracks without an fps column")
    args = ap.parse_args(argv)
    try:
        with open(args.src, encoding="utf-8", newline="") as fh:
            tracks = convert(csv.DictReader(fh), args.fps)
        save_tracks(tracks, args.dst)
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(tracks)} tracks to {args.dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
