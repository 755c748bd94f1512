"""Bit-exact JSONL serialization for scenes and detection logs.

Scene schema (one JSON object per line, UTF-8, '\\n' terminated)::

    {scene_id, ego_speed, nav_command,
     objects: [{position: [x, y, z], heading, size: [l, w, h], velocity: [vx, vy],
                acceleration: [ax, ay], yaw_rate, yaw_accel, category, visibility,
                track_id, future: [[x, y, heading] x T_plan]}],
     map: {resolution, origin: [x, y], shape: [h, w],
           channels: run-length encoding per channel},
     expert_trajectory: [[x, y, heading] x T_plan]}

Detection-log schema::

    {scene_id, boxes: [{position, heading, size, velocity, scores: [n_categories]}]}

Run lengths alternate values starting with 0 over the row-major flattened
channel, so a channel beginning with 1 starts with a zero-length run.
"""
from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .types import NAV_COMMANDS, BEVMap, BoxSet, GroundTruthObject, Scene, Trajectory


class SchemaError(ValueError):
    """A serialized record violated the schema; names the offending field."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


def rle_encode(flat: np.ndarray) -> list[int]:
    """Run lengths of a binary vector, alternating values starting with 0."""
    flat = np.asarray(flat).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], size: int, path: str = "channels") -> np.ndarray:
    out = np.zeros(size, dtype=np.uint8)
    pos = 0
    value = 0
    for r in runs:
        if not isinstance(r, int) or r < 0:
            raise SchemaError(path, f"run lengths must be non-negative integers, got {r!r}")
        if value:
            out[pos:pos + r] = 1
        pos += r
        value ^= 1
    if pos != size:
        raise SchemaError(path, f"run lengths sum to {pos}, expected {size}")
    return out


def _require(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]

def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {value!r}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected an integer, got {value!r}")
    return value


def _floats(value, n: int, path: str) -> list[float]:
    if not isinstance(value, list) or len(value) != n:
        raise SchemaError(path, f"expected a list of {n} numbers, got {value!r}")
    return [_number(v, f"{path}[{k}]") for k, v in enumerate(value)]


def _waypoints(value, path: str, t_plan: int | None = None) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise SchemaError(path, "expected a non-empty list of [x, y, heading] rows")
    if t_plan is not None and len(value) != t_plan:
        raise SchemaError(path, f"expected {t_plan} waypoints, got {len(value)}")
    return np.array([_floats(row, 3, f"{path}[{k}]") for k, row in enumerate(value)])


# ---------------------------------------------------------------------------
# Scene records
# ---------------------------------------------------------------------------

def scene_to_record(scene: Scene) -> dict:
    h, w = scene.map.shape
    return {
        "scene_id": scene.scene_id,
        "ego_speed": scene.ego_speed,
        "nav_command": scene.nav_command,
        "objects": [
            {
                "position": [float(v) for v in obj.position],
                "heading": obj.heading,
                "size": [float(v) for v in obj.size],
                "velocity": [float(v) for v in obj.velocity],
                "acceleration": [float(v) for v in obj.acceleration],
                "yaw_rate": obj.yaw_rate,
                "yaw_accel": obj.yaw_accel,
                "category": obj.category,
                "visibility": obj.visibility,
                "track_id": obj.track_id,
                "future": [[float(v) for v in row] for row in scene.future_tracks[k]],
            }
            for k, obj in enumerate(scene.objects)
        ],
        "map": {
            "resolution": scene.map.resolution,
            "origin": [float(v) for v in scene.map.origin],
            "shape": [h, w],
            "channels": [rle_encode(scene.map.grid[:, :, c]) for c in range(5)],
        },
        "expert_trajectory": [[float(v) for v in row] for row in scene.expert_trajectory.waypoints],
    }


def record_to_scene(record: dict) -> Scene:
    scene_id = _require(record, "scene_id", "")
    if not isinstance(scene_id, str):
        raise SchemaError("scene_id", f"expected a string, got {scene_id!r}")
    ego_speed = _number(_require(record, "ego_speed", ""), "ego_speed")
    nav = _require(record, "nav_command", "")
    if nav not in NAV_COMMANDS:
        raise SchemaError("nav_command", f"expected one of {NAV_COMMANDS}, got {nav!r}")

    expert = _waypoints(_require(record, "expert_trajectory", ""), "expert_trajectory")
    t_plan = len(expert)

    map_rec = _require(record, "map", "")
    resolution = _number(_require(map_rec, "resolution", "map"), "map.resolution")
    origin = _floats(_require(map_rec, "origin", "map"), 2, "map.origin")
    shape = _require(map_rec, "shape", "map")
    if not isinstance(shape, list) or len(shape) != 2:
        raise SchemaError("map.shape", f"expected [h, w], got {shape!r}")
    h = _integer(shape[0], "map.shape[0]")
    w = _integer(shape[1], "map.shape[1]")
    if h <= 0 or w <= 0:
        raise SchemaError("map.shape", f"dimensions must be positive, got {shape!r}")
    channels = _require(map_rec, "channels", "map")
    if not isinstance(channels, list) or len(channels) != 5:
        raise SchemaError("map.channels", f"expected exactly 5 channels, got {len(channels) if isinstance(channels, list) else channels!r}")
    grid = np.zeros((h, w, 5), dtype=np.uint8)
    for c, runs in enumerate(channels):
        if not isinstance(runs, list):
            raise SchemaError(f"map.channels[{c}]", "expected a list of run lengths")
        grid[:, :, c] = rle_decode(runs, h * w, f"map.channels[{c}]").reshape(h, w)
    try:
        bev = BEVMap(grid=grid, resolution=resolution, origin=np.array(origin))
    except ValueError as exc:
        raise SchemaError("map", str(exc)) from exc

    objects_rec = _require(record, "objects", "")
    if not isinstance(objects_rec, list):
        raise SchemaError("objects", f"expected a list, got {type(objects_rec).__name__}")
    objects = []
    futures = []
    for k, rec in enumerate(objects_rec):
        path = f"objects[{k}]"
        track_id = _require(rec, "track_id", path)
        if not isinstance(track_id, str):
            raise SchemaError(f"{path}.track_id", f"expected a string, got {track_id!r}")
        visibility = _integer(_require(rec, "visibility", path), f"{path}.visibility")
        if visibility not in (0, 1, 2, 3):
            raise SchemaError(f"{path}.visibility", f"expected 0..3, got {visibility}")
        category = _integer(_require(rec, "category", path), f"{path}.category")
        size = _floats(_require(rec, "size", path), 3, f"{path}.size")
        if min(size) <= 0:
            raise SchemaError(f"{path}.size", f"components must be positive, got {size}")
        try:
            obj = GroundTruthObject(
                position=np.array(_floats(_require(rec, "position", path), 3, f"{path}.position")),
                heading=_number(_require(rec, "heading", path), f"{path}.heading"),
                size=np.array(size),
                velocity=np.array(_floats(_require(rec, "velocity", path), 2, f"{path}.velocity")),
                acceleration=np.array(_floats(_require(rec, "acceleration", path), 2, f"{path}.acceleration")),
                yaw_rate=_number(_require(rec, "yaw_rate", path), f"{path}.yaw_rate"),
                yaw_accel=_number(_require(rec, "yaw_accel", path), f"{path}.yaw_accel"),
                category=category,
                visibility=visibility,
                track_id=track_id,
            )
        except ValueError as exc:
            raise SchemaError(path, str(exc)) from exc
        objects.append(obj)
        futures.append(_waypoints(_require(rec, "future", path), f"{path}.future", t_plan))

    try:
        return Scene(
            objects=tuple(objects),
            map=bev,
            future_tracks=tuple(futures),
            ego_speed=ego_speed,
            nav_command=nav,
            expert_trajectory=Trajectory(expert),
            scene_id=scene_id,
        )
    except ValueError as exc:
        raise SchemaError("", str(exc)) from exc


# ---------------------------------------------------------------------------
# Detection records
# ---------------------------------------------------------------------------

def detections_to_record(scene_id: str, boxes: BoxSet) -> dict:
    return {
        "scene_id": scene_id,
        "boxes": [
            {
                "position": [float(v) for v in boxes.positions[i]],
                "heading": float(boxes.headings[i]),
                "size": [float(v) for v in boxes.sizes[i]],
                "velocity": [float(v) for v in boxes.velocities[i]],
                "scores": [float(v) for v in boxes.scores[i]],
            }
            for i in range(len(boxes))
        ],
    }


def record_to_detections(record: dict, n_categories: int) -> tuple[str, BoxSet]:
    scene_id = _require(record, "scene_id", "")
    if not isinstance(scene_id, str):
        raise SchemaError("scene_id", f"expected a string, got {scene_id!r}")
    boxes_rec = _require(record, "boxes", "")
    if not isinstance(boxes_rec, list):
        raise SchemaError("boxes", f"expected a list, got {type(boxes_rec).__name__}")
    positions, headings, sizes, velocities, scores = [], [], [], [], []
    for k, rec in enumerate(boxes_rec):
        path = f"boxes[{k}]"
        positions.append(_floats(_require(rec, "position", path), 3, f"{path}.position"))
        headings.append(_number(_require(rec, "heading", path), f"{path}.heading"))
        size = _floats(_require(rec, "size", path), 3, f"{path}.size")
        if min(size) <= 0:
            raise SchemaError(f"{path}.size", f"components must be positive, got {size}")
        sizes.append(size)
        velocities.append(_floats(_require(rec, "velocity", path), 2, f"{path}.velocity"))
        sc = _floats(_require(rec, "scores", path), n_categories, f"{path}.scores")
        if min(sc) < 0 or max(sc) > 1:
            raise SchemaError(f"{path}.scores", f"scores must lie in [0, 1], got {sc}")
        scores.append(sc)
    if not boxes_rec:
        return scene_id, BoxSet.empty(n_categories)
    return scene_id, BoxSet(positions, headings, sizes, velocities, scores)


# ---------------------------------------------------------------------------
# Byte-stream and file helpers
# ---------------------------------------------------------------------------

def _dumps(record: dict) -> bytes:
    return (json.dumps(record, separators=(",", ":")) + "\n").encode("utf-8")


def _loads(data: bytes | str) -> dict:
    try:
        record = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise SchemaError("", "top-level value must be an object")
    return record


def serialize_scene(scene: Scene) -> bytes:
    return _dumps(scene_to_record(scene))


def deserialize_scene(data: bytes | str) -> Scene:
    return record_to_scene(_loads(data))


def write_scenes(path: Path | str, scenes: Iterable[Scene]) -> None:
    with open(path, "wb") as fh:
        for scene in scenes:
            fh.write(serialize_scene(scene))


def read_scenes(path: Path | str) -> list[Scene]:
    out = []
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(deserialize_scene(line))
            except SchemaError as exc:
                raise SchemaError(exc.field_path, f"line {lineno}: {exc}") from exc
    return out


def write_detections(path: Path | str, logs: Iterable[tuple[str, BoxSet]]) -> None:
    with open(path, "wb") as fh:
        for scene_id, boxes in logs:
            fh.write(_dumps(detections_to_record(scene_id, boxes)))


def read_detections(path: Path | str, n_categories: int) -> dict[str, BoxSet]:
    out: dict[str, BoxSet] = {}
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scene_id, boxes = record_to_detections(_loads(line), n_categories)
            except SchemaError as exc:
                raise SchemaError(exc.field_path, f"line {lineno}: {exc}") from exc
            if scene_id in out:
                raise SchemaError("scene_id", f"line {lineno}: duplicate scene_id {scene_id!r}")
            out[scene_id] = boxes
    return out
