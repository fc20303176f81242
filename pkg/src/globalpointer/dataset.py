"""Line-delimited JSON dataset files.

Layout, one JSON object per line::

    {"type": "header", "version": 1, "m": 10, "n": 10, "units": "m", "box_half_extent": 25}
    {"type": "frame", "id": 0, "points": [[plane_id, x, y, z], ...]}
    ...                                   (exactly m frame records, ids 0..m-1)
    {"type": "ground_truth", "poses": [[r00, r01, ..., r22, tx, ty, tz], ...],
     "planes": [[nx, ny, nz, d], ...]}   (optional)

Points are in the frame's local coordinates. Every float is written with 17
significant digits so a write/read cycle reproduces the data bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, ObservationGraph, Plane, Pose

__all__ = ["FORMAT_VERSION", "Dataset", "DatasetError", "read_dataset", "write_dataset",
           "dataset_from_scene", "format_float"]

FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    m: int
    n: int
    graph: ObservationGraph
    poses: list | None = None
    planes: list | None = None
    units: str = "m"
    box_half_extent: float = 25.0

    @property
    def has_ground_truth(self) -> bool:
        return self.poses is not None


def dataset_from_scene(scene, ground_truth: bool = True) -> Dataset:
    return Dataset(scene.m, scene.n, scene.graph,
                   list(scene.poses) if ground_truth else None,
                   list(scene.planes) if ground_truth else None,
                   box_half_extent=scene.spec.box_half_extent)


def format_float(x: float) -> str:
    x = float(x)
    if not np.isfinite(x):
        raise DatasetError("non-finite value")
    s = "%.17g" % x
    # keep JSON readers from seeing an integer where a float was written
    return s if any(c in s for c in ".en") else s + ".0"


def _row(values) -> str:
    return "[" + ", ".join(format_float(v) for v in values) + "]"


def write_dataset(path, data: Dataset) -> None:
    if data.graph.points is None:
        raise DatasetError("graph carries no raw points")
    header = {"type": "header", "version": FORMAT_VERSION, "m": data.m, "n": data.n,
              "units": data.units, "box_half_extent": float(data.box_half_extent)}
    lines = [json.dumps(header)]
    for i in range(data.m):
        parts = []
        for j in data.graph.planes_of(i):
            for p in data.graph.points[(i, j)]:
                parts.append(f"[{j}, {format_float(p[0])}, {format_float(p[1])}, {format_float(p[2])}]")
        lines.append('{"type": "frame", "id": %d, "points": [%s]}' % (i, ", ".join(parts)))
    if data.poses is not None:
        poses = ", ".join(_row(np.concatenate([p.rotation.reshape(-1), p.translation])) for p in data.poses)
        planes = ", ".join(_row(pl.vector()) for pl in data.planes)
        lines.append('{"type": "ground_truth", "poses": [%s], "planes": [%s]}' % (poses, planes))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _fail(lineno: int, msg: str):
    raise DatasetError(f"line {lineno}: {msg}")


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        raw = [(k + 1, line) for k, line in enumerate(fh) if line.strip()]
    if not raw:
        raise DatasetError("empty file")
    records = []
    for lineno, line in raw:
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            _fail(lineno, f"malformed record ({exc.msg})")
        if not isinstance(rec, dict) or "type" not in rec:
            _fail(lineno, "record without a type")
        records.append((lineno, rec))

    lineno, header = records[0]
    if header["type"] != "header":
        _fail(lineno, "first record must be the header")
    if header.get("version") != FORMAT_VERSION:
        _fail(lineno, f"unknown version {header.get('version')!r}")
    try:
        m, n = int(header["m"]), int(header["n"])
    except (KeyError, TypeError, ValueError):
        _fail(lineno, "header needs integer m and n")
    frames = [(ln, r) for ln, r in records[1:] if r["type"] == "frame"]
    if not frames:
        raise DatasetError("no frames")
    if len(frames) != m:
        _fail(frames[-1][0], f"expected {m} frames, found {len(frames)}")

    points: dict = {}
    seen = set()
    for ln, rec in frames:
        i = rec.get("id")
        if not isinstance(i, int) or not (0 <= i < m) or i in seen:
            _fail(ln, f"bad frame id {i!r}")
        seen.add(i)
        pts = rec.get("points")
        if not isinstance(pts, list):
            _fail(ln, f"frame {i}: points must be a list")
        for k, entry in enumerate(pts):
            if not (isinstance(entry, list) and len(entry) == 4 and isinstance(entry[0], int)):
                _fail(ln, f"frame {i}: point {k} must be [plane_id, x, y, z]")
            j = entry[0]
            if not (0 <= j < n):
                _fail(ln, f"frame {i}: point {k} has plane_id {j} outside [0, {n})")
            xyz = entry[1:]
            if not all(isinstance(v, (int, float)) and np.isfinite(v) for v in xyz):
                _fail(ln, f"frame {i}: point {k} has non-finite coordinates")
            points.setdefault((i, j), []).append([float(v) for v in xyz])
    points = {key: np.array(v, dtype=float) for key, v in points.items()}
    try:
        graph = ObservationGraph.from_points(m, n, points)
    except GeometryError as exc:
        raise DatasetError(str(exc)) from exc

    poses = planes = None
    for ln, rec in records[1:]:
        if rec["type"] == "frame":
            continue
        if rec["type"] != "ground_truth":
            _fail(ln, f"unknown record type {rec['type']!r}")
        try:
            P = np.array(rec["poses"], dtype=float)
            L = np.array(rec["planes"], dtype=float)
            if P.shape != (m, 12) or L.shape != (n, 4):
                raise ValueError("ground truth has the wrong shape")
            poses = [Pose(r[:9].reshape(3, 3), r[9:]) for r in P]
            planes = [Plane(r[:3], r[3]) for r in L]
        except (KeyError, ValueError, GeometryError) as exc:
            _fail(ln, f"bad ground truth ({exc})")
    return Dataset(m, n, graph, poses, planes, str(header.get("units", "m")),
                   float(header.get("box_half_extent", 25.0)))
