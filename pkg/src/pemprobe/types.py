"""Core domain model: objects, boxes, BEV maps, scenes, trajectories.

Everything lives in the ego frame (x forward, y left, meters). All types are
immutable values after construction, and all helpers here are pure functions,
so they are safe to use from any number of concurrent workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

NAV_COMMANDS = ("go-straight", "turn-left", "turn-right")

# Default ego footprint (compact sedan class); configurable in the eval paths.
EGO_LENGTH = 4.08
EGO_WIDTH = 1.73

# Planning horizon: waypoints at 2 Hz over 3 s.
T_PLAN = 6
PLAN_DT = 0.5

MAP_CHANNELS = ("drivable", "divider", "crossing", "walkway", "stopline")


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to the half-open interval (-pi, pi].

    Exactly the identity on already-wrapped inputs, so wrapping is idempotent
    bit-for-bit (serialization round trips rely on this).
    """
    a = np.asarray(angle, dtype=float)
    wrapped = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    out = np.where((a > -np.pi) & (a <= np.pi), a, wrapped)
    if np.ndim(angle) == 0:
        return float(out)
    return out


def angle_diff(a, b):
    """Wrapped difference a - b in (-pi, pi]."""
    return wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _vec(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return _freeze(arr)


@dataclass(frozen=True, eq=False)
class GroundTruthObject:
    """A single annotated object with full first/second-order dynamics."""

    position: np.ndarray      # (3,) x, y, z in m
    heading: float            # rad, wrapped to (-pi, pi] at construction
    size: np.ndarray          # (3,) length, width, height in m, > 0
    velocity: np.ndarray      # (2,) m/s
    acceleration: np.ndarray  # (2,) m/s^2
    yaw_rate: float           # rad/s
    yaw_accel: float          # rad/s^2
    category: int
    visibility: int           # occlusion quartile, 0 (least) .. 3 (most visible)
    track_id: str

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position, 3, "position"))
        object.__setattr__(self, "size", _vec(self.size, 3, "size"))
        object.__setattr__(self, "velocity", _vec(self.velocity, 2, "velocity"))
        object.__setattr__(self, "acceleration", _vec(self.acceleration, 2, "acceleration"))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        object.__setattr__(self, "yaw_rate", float(self.yaw_rate))
        object.__setattr__(self, "yaw_accel", float(self.yaw_accel))
        if np.any(self.size <= 0):
            raise ValueError(f"size must be strictly positive, got {self.size}")
        if self.visibility not in (0, 1, 2, 3):
            raise ValueError(f"visibility must be in {{0,1,2,3}}, got {self.visibility}")
        if self.category < 0:
            raise ValueError("category must be non-negative")

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroundTruthObject):
            return NotImplemented
        return (np.array_equal(self.position, other.position)
                and self.heading == other.heading
                and np.array_equal(self.size, other.size)
                and np.array_equal(self.velocity, other.velocity)
                and np.array_equal(self.acceleration, other.acceleration)
                and self.yaw_rate == other.yaw_rate
                and self.yaw_accel == other.yaw_accel
                and self.category == other.category
                and self.visibility == other.visibility
                and self.track_id == other.track_id)


@dataclass(frozen=True, eq=False)
class Box:
    """A detection-like 3D box: geometry plus independent per-category scores.

    Scores are independent sigmoid confidences in [0, 1], not a simplex.
    """

    position: np.ndarray  # (3,)
    heading: float
    size: np.ndarray      # (3,) l, w, h > 0
    velocity: np.ndarray  # (2,)
    scores: np.ndarray    # (n_categories,)

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position, 3, "position"))
        object.__setattr__(self, "size", _vec(self.size, 3, "size"))
        object.__setattr__(self, "velocity", _vec(self.velocity, 2, "velocity"))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 1 or scores.size == 0:
            raise ValueError("scores must be a non-empty 1-D vector")
        if np.any(scores < 0) or np.any(scores > 1):
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "scores", _freeze(scores))
        if np.any(self.size <= 0):
            raise ValueError(f"size must be strictly positive, got {self.size}")

    @property
    def category(self) -> int:
        return int(np.argmax(self.scores))

    @property
    def max_score(self) -> float:
        return float(np.max(self.scores))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return (np.array_equal(self.position, other.position)
                and self.heading == other.heading
                and np.array_equal(self.size, other.size)
                and np.array_equal(self.velocity, other.velocity)
                and np.array_equal(self.scores, other.scores))


class BoxSet:
    """A set of boxes stored as packed arrays (one row per box)."""

    def __init__(self, positions, headings, sizes, velocities, scores):
        self.positions = _freeze(np.asarray(positions, dtype=float).reshape(-1, 3))
        n = len(self.positions)
        self.headings = _freeze(wrap_angle(np.asarray(headings, dtype=float).reshape(n)))
        self.sizes = _freeze(np.asarray(sizes, dtype=float).reshape(n, 3))
        self.velocities = _freeze(np.asarray(velocities, dtype=float).reshape(n, 2))
        scores = np.asarray(scores, dtype=float)
        if scores.ndim != 2 or scores.shape[0] != n:
            raise ValueError(f"scores must be (N, n_categories), got {scores.shape}")
        self.scores = _freeze(scores)
        if n and np.any(self.sizes <= 0):
            raise ValueError("box sizes must be strictly positive")
        if n and (np.any(self.scores < 0) or np.any(self.scores > 1)):
            raise ValueError("scores must lie in [0, 1]")

    @classmethod
    def empty(cls, n_categories: int) -> "BoxSet":
        return cls(
            np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)),
            np.zeros((0, 2)), np.zeros((0, n_categories)),
        )

    @classmethod
    def from_boxes(cls, boxes: Sequence[Box], n_categories: int | None = None) -> "BoxSet":
        if not boxes:
            if n_categories is None:
                raise ValueError("n_categories required for an empty BoxSet")
            return cls.empty(n_categories)
        return cls(
            np.stack([b.position for b in boxes]),
            np.array([b.heading for b in boxes]),
            np.stack([b.size for b in boxes]),
            np.stack([b.velocity for b in boxes]),
            np.stack([b.scores for b in boxes]),
        )

    @property
    def n_categories(self) -> int:
        return self.scores.shape[1]

    def __len__(self) -> int:
        return len(self.positions)

    def box(self, i: int) -> Box:
        return Box(self.positions[i], self.headings[i], self.sizes[i],
                   self.velocities[i], self.scores[i])

    def __iter__(self) -> Iterator[Box]:
        return (self.box(i) for i in range(len(self)))

    def max_scores(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0)
        return self.scores.max(axis=1)

    def categories(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0, dtype=int)
        return self.scores.argmax(axis=1)

    def filter_by_score(self, threshold: float) -> "BoxSet":
        """Keep boxes with max(scores) >= threshold (the shared 0.2 filter)."""
        if len(self) == 0:
            return self
        keep = self.max_scores() >= threshold
        return self.select(np.flatnonzero(keep))

    def select(self, indices) -> "BoxSet":
        idx = np.asarray(indices, dtype=int)
        return BoxSet(self.positions[idx], self.headings[idx], self.sizes[idx],
                      self.velocities[idx], self.scores[idx])

    def reg_vectors(self) -> np.ndarray:
        """Regression parameterization (N, 10): x, y, z, l, w, h, sin, cos, vx, vy."""
        return np.concatenate([
            self.positions,
            self.sizes,
            np.sin(self.headings)[:, None],
            np.cos(self.headings)[:, None],
            self.velocities,
        ], axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoxSet):
            return NotImplemented
        return (len(self) == len(other)
                and self.scores.shape == other.scores.shape
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.headings, other.headings)
                and np.array_equal(self.sizes, other.sizes)
                and np.array_equal(self.velocities, other.velocities)
                and np.array_equal(self.scores, other.scores))


@dataclass(frozen=True)
class BEVMap:
    """Rasterized BEV map: (h, w, 5) binary grid.

    Axis 0 spans x, axis 1 spans y; cell (i, j) covers the square with lower
    corner ``origin + (i, j) * resolution``. Channels follow MAP_CHANNELS.
    """

    grid: np.ndarray       # (h, w, 5), values in {0, 1}
    resolution: float      # m per cell
    origin: np.ndarray     # (2,) ego-frame position of cell (0, 0)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.uint8)
        if grid.ndim != 3 or grid.shape[2] != 5:
            raise ValueError(f"grid must be (h, w, 5), got {grid.shape}")
        if not np.all((grid == 0) | (grid == 1)):
            raise ValueError("grid values must be binary")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", _vec(self.origin, 2, "origin"))
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[0], self.grid.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) covered by the raster."""
        h, w = self.shape
        return (self.origin[0], self.origin[0] + h * self.resolution,
                self.origin[1], self.origin[1] + w * self.resolution)

    def cell_index(self, points) -> np.ndarray:
        """Map (N, 2) ego points to integer (N, 2) cell indices (may be out of range)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.floor((pts - self.origin) / self.resolution).astype(int)

    def in_bounds(self, points) -> np.ndarray:
        idx = self.cell_index(points)
        h, w = self.shape
        return (idx[:, 0] >= 0) & (idx[:, 0] < h) & (idx[:, 1] >= 0) & (idx[:, 1] < w)

    def lookup(self, points, channel: int) -> np.ndarray:
        """Channel values at ego points; zero outside the raster."""
        idx = self.cell_index(points)
        h, w = self.shape
        ok = (idx[:, 0] >= 0) & (idx[:, 0] < h) & (idx[:, 1] >= 0) & (idx[:, 1] < w)
        out = np.zeros(len(idx), dtype=np.uint8)
        out[ok] = self.grid[idx[ok, 0], idx[ok, 1], channel]
        return out


@dataclass(frozen=True)
class Trajectory:
    """T_plan future waypoints (x, y, heading) in the ego frame at 2 Hz."""

    waypoints: np.ndarray  # (T_plan, 3)

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 3:
            raise ValueError(f"waypoints must be (T, 3), got {wp.shape}")
        wp = wp.copy()
        wp[:, 2] = wrap_angle(wp[:, 2])
        object.__setattr__(self, "waypoints", _freeze(wp))

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def xy(self) -> np.ndarray:
        return self.waypoints[:, :2]


@dataclass(frozen=True)
class Scene:
    """Ground-truth scene context: objects, map, futures, and ego state."""

    objects: tuple[GroundTruthObject, ...]
    map: BEVMap
    future_tracks: tuple[np.ndarray, ...]  # per object, (T_plan, 3) of (x, y, heading)
    ego_speed: float
    nav_command: str
    expert_trajectory: Trajectory
    scene_id: str

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        tracks = []
        for k, tr in enumerate(self.future_tracks):
            tr = np.asarray(tr, dtype=float)
            if tr.shape != (len(self.expert_trajectory), 3):
                raise ValueError(
                    f"future_tracks[{k}] must be ({len(self.expert_trajectory)}, 3), got {tr.shape}")
            tracks.append(_freeze(tr))
        object.__setattr__(self, "future_tracks", tuple(tracks))
        if len(self.future_tracks) != len(self.objects):
            raise ValueError("future_tracks must align index-wise with objects")
        if self.nav_command not in NAV_COMMANDS:
            raise ValueError(f"nav_command must be one of {NAV_COMMANDS}")
        object.__setattr__(self, "ego_speed", float(self.ego_speed))

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def gt_box_set(self, n_categories: int) -> BoxSet:
        """Ground-truth boxes as a BoxSet with one-hot unit scores."""
        boxes = []
        for obj in self.objects:
            scores = np.zeros(n_categories)
            scores[obj.category] = 1.0
            boxes.append(Box(obj.position, obj.heading, obj.size, obj.velocity, scores))
        return BoxSet.from_boxes(boxes, n_categories)


# ---------------------------------------------------------------------------
# BEV geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrientedRect:
    """An oriented rectangle in the BEV plane."""

    center: np.ndarray       # (2,)
    half_extents: np.ndarray  # (2,) along local x (length) and y (width)
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, 2, "center"))
        object.__setattr__(self, "half_extents", _vec(self.half_extents, 2, "half_extents"))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        if np.any(self.half_extents <= 0):
            raise ValueError("half_extents must be strictly positive")


def bev_project(box: Union[Box, GroundTruthObject]) -> OrientedRect:
    """Project a 3D box onto the BEV plane (bottom-face rectangle)."""
    return OrientedRect(
        center=box.position[:2],
        half_extents=np.array([box.size[0] / 2.0, box.size[1] / 2.0]),
        heading=box.heading,
    )


def rect_corners(rect: OrientedRect) -> np.ndarray:
    """The 4 corners (4, 2), counter-clockwise starting front-left."""
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    rot = np.array([[c, -s], [s, c]])
    hx, hy = rect.half_extents
    local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
    return rect.center + local @ rot.T


def rects_intersect(a: OrientedRect, b: OrientedRect) -> bool:
    """Closed-rectangle overlap via the separating-axis test over 4 edge normals."""
    ca = rect_corners(a)
    cb = rect_corners(b)
    for heading in (a.heading, b.heading):
        c, s = math.cos(heading), math.sin(heading)
        for axis in ((c, s), (-s, c)):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def ego_rect(x: float, y: float, heading: float,
             length: float = EGO_LENGTH, width: float = EGO_WIDTH) -> OrientedRect:
    """Ego-vehicle footprint at a trajectory waypoint."""
    return OrientedRect(np.array([x, y]), np.array([length / 2.0, width / 2.0]), heading)
