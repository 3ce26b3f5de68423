"""Core radar point types and dataset file I/O.

Scenes are stored as JSONL, one scene per line:

    {"scene_id": str, "source": [[x,y,z,rcs,vx,vy],...], "target": [[...],...]}

Generated points use the same framing with 6-value rows:

    {"scene_id": str, "points": [[x,y,rcs,vx,vy,score],...]}

All numbers are JSON doubles; writers emit ``repr``-exact floats so a
read-back reproduces the structures bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence


class DatasetError(ValueError):
    """Malformed or invalid dataset content, with file/line context."""


@dataclass(frozen=True)
class RadarPoint:
    """One measured radar return: position (m), RCS (dBsm), Doppler velocity (m/s)."""

    x: float
    y: float
    z: float
    rcs: float
    vx: float
    vy: float

    def as_row(self) -> list[float]:
        return [self.x, self.y, self.z, self.rcs, self.vx, self.vy]


@dataclass(frozen=True)
class GeneratedPoint:
    """One synthesized point; no z (not predicted), score in [0, 1]."""

    x: float
    y: float
    rcs: float
    vx: float
    vy: float
    score: float

    def as_row(self) -> list[float]:
        return [self.x, self.y, self.rcs, self.vx, self.vy, self.score]


@dataclass(frozen=True)
class PointCloud:
    points: tuple[RadarPoint, ...]
    frame_id: str = ""

    def __len__(self) -> int:
        return len(self.points)

    def xyz(self) -> "np.ndarray":
        import numpy as np

        if not self.points:
            return np.zeros((0, 6))
        return np.array([p.as_row() for p in self.points], dtype=np.float64)


@dataclass(frozen=True)
class ScenePair:
    """Source (short-range domain) and target (long-range domain) views of one scene."""

    scene_id: str
    source: PointCloud
    target: PointCloud


def _check_finite(value, what: str, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DatasetError(f"{where}: {what} is not a number: {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise DatasetError(f"{where}: {what} is not finite: {value!r}")
    return v


def _parse_cloud(rows, frame_id: str, field: str, where: str) -> PointCloud:
    if not isinstance(rows, list):
        raise DatasetError(f"{where}: {field} must be a list of 6-value rows")
    pts = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != 6:
            raise DatasetError(f"{where}: {field}[{i}] must have 6 values")
        vals = [_check_finite(v, f"{field}[{i}][{j}]", where) for j, v in enumerate(row)]
        pts.append(RadarPoint(*vals))
    return PointCloud(tuple(pts), frame_id)


def read_scene_file(path: str | Path) -> list[ScenePair]:
    """Read all scenes from a JSONL file, validating every value finite."""
    path = Path(path)
    pairs: list[ScenePair] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}: line {lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: invalid JSON: {exc.msg}") from exc
            if not isinstance(rec, dict) or "scene_id" not in rec:
                raise DatasetError(f"{where}: expected an object with scene_id")
            sid = rec["scene_id"]
            if not isinstance(sid, str):
                raise DatasetError(f"{where}: scene_id must be a string")
            source = _parse_cloud(rec.get("source", []), sid, "source", where)
            target = _parse_cloud(rec.get("target", []), sid, "target", where)
            pairs.append(ScenePair(sid, source, target))
    return pairs


def write_scene_file(pairs: Sequence[ScenePair], path: str | Path) -> None:
    """Write scenes as JSONL; read_scene_file inverts this bit-exactly."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for pair in pairs:
                rec = {
                    "scene_id": pair.scene_id,
                    "source": [p.as_row() for p in pair.source.points],
                    "target": [p.as_row() for p in pair.target.points],
                }
                fh.write(json.dumps(rec) + "\n")
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc


def write_points_file(
    records: Iterable[tuple[str, Sequence[GeneratedPoint]]], path: str | Path
) -> None:
    """Write generated points grouped per scene, one JSONL record each.

    The on-disk schema keys points by scene_id, so the writer takes
    (scene_id, points) records rather than a flat point list.
    """
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for scene_id, points in records:
                rec = {"scene_id": scene_id, "points": [p.as_row() for p in points]}
                fh.write(json.dumps(rec) + "\n")
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc


def read_points_file(path: str | Path) -> list[tuple[str, list[GeneratedPoint]]]:
    path = Path(path)
    out: list[tuple[str, list[GeneratedPoint]]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}: line {lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: invalid JSON: {exc.msg}") from exc
            if not isinstance(rec, dict) or not isinstance(rec.get("scene_id"), str):
                raise DatasetError(f"{where}: expected an object with scene_id")
            pts = []
            for i, row in enumerate(rec.get("points", [])):
                if not isinstance(row, list) or len(row) != 6:
                    raise DatasetError(f"{where}: points[{i}] must have 6 values")
                vals = [_check_finite(v, f"points[{i}][{j}]", where) for j, v in enumerate(row)]
                if not 0.0 <= vals[5] <= 1.0:
                    raise DatasetError(f"{where}: points[{i}] score outside [0, 1]")
                pts.append(GeneratedPoint(*vals))
            out.append((rec["scene_id"], pts))
    return out
