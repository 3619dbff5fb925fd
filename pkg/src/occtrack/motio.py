"""Reading and writing MOT-challenge detection and result files.

Lines are ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z``; ``id``
and the world coordinates are ``-1`` when unused.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class MotParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


@dataclass(frozen=True)
class Detection:
    box: tuple              # (left, top, width, height)
    score: float
    id: int = -1


def _number(text: str, path, line: int, name: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise MotParseError(path, line, f"field {name!r} is not numeric: {text.strip()!r}") from None


FIELDS = ("frame", "id", "bb_left", "bb_top", "bb_width", "bb_height", "conf")


def load_mot_detections(path) -> dict[int, list[Detection]]:
    """Detections keyed by frame, covering every frame from the first to the last.

    Frames without detections map to empty lists. An empty file yields ``{}``.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MotParseError(path, 0, f"cannot read file: {exc.strerror or exc}") from None
    by_frame: dict[int, list[Detection]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) < 7:
            raise MotParseError(path, lineno, f"expected at least 7 fields, found {len(parts)}")
        vals = [_number(p, path, lineno, FIELDS[k] if k < 7 else f"field {k + 1}")
                for k, p in enumerate(parts)]
        frame = vals[0]
        if frame != int(frame):
            raise MotParseError(path, lineno, f"frame {frame} is not an integer")
        w, h = vals[4], vals[5]
        if w < 0 or h < 0:
            raise MotParseError(path, lineno, "negative box size")
        by_frame.setdefault(int(frame), []).append(
            Detection((vals[2], vals[3], w, h), vals[6], int(vals[1])))
    if not by_frame:
        return {}
    first, last = min(by_frame), max(by_frame)
    return {f: by_frame.get(f, []) for f in range(first, last + 1)}


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def write_mot_detections(path, frames: Mapping[int, Sequence[Detection]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for frame in sorted(frames):
            for d in frames[frame]:
                w.writerow([frame, d.id, *(_fmt(v) for v in d.box), _fmt(d.score), -1, -1, -1])


def write_mot_results(path, rows: Iterable[tuple]) -> None:
    """Rows ``(frame, track id, left, top, width, height, conf)`` in result format."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for frame, tid, l, t, bw, bh, conf in rows:
            w.writerow([int(frame), int(tid), f"{l:.3f}", f"{t:.3f}", f"{bw:.3f}", f"{bh:.3f}",
                        f"{conf:.4f}", -1, -1, -1])
