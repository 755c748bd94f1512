"""Procedural driving scenes plus a scripted detector with known error statistics.

The generator builds multi-lane straight or arc roads in the ego frame,
populates them with lane traffic, parked clusters, pedestrians and cyclists,
rasterizes the static layout into the 5-channel BEV map, and derives
occlusion-based visibility by ray casting. The oracle detector corrupts the
ground truth with a parametric noise profile (range-dependent translation
noise, duplicates along the viewing ray, map-correlated ghost boxes) and
stands in for a real 3D detector at desk scale; external detection logs in
the documented schema can be ingested instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import sceneio
from .matching import GREEDY_DIST_THRESHOLD, greedy_match
from .types import (
    BEVMap, Box, BoxSet, EGO_LENGTH, EGO_WIDTH, GroundTruthObject, OrientedRect,
    PLAN_DT, Scene, T_PLAN, Trajectory, bev_project, rect_corners, wrap_angle,
)

CATEGORY_NAMES = ("vehicle", "pedestrian", "cyclist")
N_CATEGORIES = len(CATEGORY_NAMES)

SPLIT_NAMES = ("pem_train", "planner_train", "val")


class GenerationError(RuntimeError):
    """Object placement could not be satisfied within the retry budget."""


@dataclass
class NoiseProfile:
    """Parametric error characteristics of the scripted detector.

    Translation noise is decomposed along/across the ego->object viewing ray;
    the along-ray stdev grows linearly with range and equals ``sigma_along``
    at 50 m (vertical noise uses half the cross-ray stdev). ``score_tp_beta``
    with a zero second parameter denotes a deterministic unit score (the
    noiseless limit). ``score_range_gain`` / ``score_error_gain`` couple the
    true-positive confidence to range and to the realized translation error,
    so confidence carries information about detection quality.
    """

    fn_base: tuple[float, ...] = (0.06, 0.14, 0.10)  # per category
    fn_range_gain: float = 0.004        # added miss probability per meter
    fn_visibility_gain: float = 0.07    # per visibility quartile below 3
    sigma_along: float = 0.9            # m at 50 m range
    sigma_across: float = 0.15          # m
    sigma_heading: float = 0.06         # rad; doubled for objects longer than 6 m
    sigma_vel: float = 0.35             # m/s
    dup_prob: float = 0.12
    dup_offset_sigma: float = 2.2       # m along the viewing ray
    ghost_rate: float = 1.1             # expected spurious boxes per scene
    score_tp_beta: tuple[float, float] = (7.0, 2.0)
    score_fp_beta: tuple[float, float] = (2.2, 3.5)
    score_range_gain: float = 0.5
    score_error_gain: float = 0.45

    def validate(self) -> None:
        probs = list(self.fn_base) + [self.dup_prob]
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        stdevs = (self.sigma_along, self.sigma_across, self.sigma_heading,
                  self.sigma_vel, self.dup_offset_sigma)
        if any(s < 0 for s in stdevs):
            raise ValueError("noise stdevs must be non-negative")
        if self.ghost_rate < 0 or self.fn_range_gain < 0 or self.fn_visibility_gain < 0:
            raise ValueError("rates must be non-negative")

    @classmethod
    def noiseless(cls, n_categories: int = N_CATEGORIES) -> "NoiseProfile":
        return cls(
            fn_base=(0.0,) * n_categories, fn_range_gain=0.0, fn_visibility_gain=0.0,
            sigma_along=0.0, sigma_across=0.0, sigma_heading=0.0, sigma_vel=0.0,
            dup_prob=0.0, dup_offset_sigma=0.0, ghost_rate=0.0,
            score_tp_beta=(1.0, 0.0), score_fp_beta=(1.0, 0.0),
            score_range_gain=0.0, score_error_gain=0.0,
        )


@dataclass
class WorldConfig:
    """Road layout and population parameters of the procedural world."""

    lane_width: float = 3.5
    max_fwd_lanes: int = 2
    max_opp_lanes: int = 1
    straight_prob: float = 0.5
    radius_range: tuple[float, float] = (60.0, 250.0)
    s_forward: float = 70.0
    s_backward: float = 22.0
    crossing_prob: float = 0.4

    n_vehicles: tuple[int, int] = (3, 9)
    n_pedestrians: tuple[int, int] = (0, 4)
    n_cyclists: tuple[int, int] = (0, 2)
    parking_cluster_prob: float = 0.65
    parked_count: tuple[int, int] = (2, 5)
    stopped_prob: float = 0.18
    behind_prob: float = 0.35
    vehicle_speed: tuple[float, float] = (2.0, 13.0)
    ego_speed: tuple[float, float] = (4.0, 11.0)

    map_h: int = 96
    map_w: int = 64
    map_resolution: float = 1.0
    map_origin: tuple[float, float] = (-20.0, -32.0)

    placement_retries: int = 60
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_vehicles", "n_pedestrians", "n_cyclists", "parked_count",
                     "vehicle_speed", "ego_speed", "radius_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is degenerate: ({lo}, {hi})")
        if self.lane_width <= 0 or self.map_resolution <= 0:
            raise ValueError("lane_width and map_resolution must be positive")
        if self.map_h <= 0 or self.map_w <= 0:
            raise ValueError("map raster must be non-empty")


# ---------------------------------------------------------------------------
# Road geometry: arclength/offset coordinates on a straight or arc centerline
# ---------------------------------------------------------------------------

@dataclass
class Road:
    curvature: float            # 1/m, 0 for straight; positive curves left
    lane_width: float
    n_fwd: int                  # forward lanes; ego lane at offset 0
    n_opp: int
    has_parking: bool
    crossing_s: float | None
    s_min: float
    s_max: float

    PARK_DEPTH = 2.3
    WALK_DEPTH = 2.0

    @property
    def d_road_min(self) -> float:
        return -self.lane_width / 2.0 - (self.PARK_DEPTH if self.has_parking else 0.0)

    @property
    def d_road_max(self) -> float:
        return (self.n_fwd + self.n_opp - 1) * self.lane_width + self.lane_width / 2.0

    def lane_offset(self, lane: int) -> float:
        return lane * self.lane_width

    @property
    def park_offset(self) -> float:
        return -self.lane_width / 2.0 - self.PARK_DEPTH / 2.0

    def point_at(self, s, d):
        """Road frame (s, d) -> ego frame (x, y); d positive to the left."""
        s = np.asarray(s, dtype=float)
        d = np.asarray(d, dtype=float)
        k = self.curvature
        if k == 0.0:
            return np.stack(np.broadcast_arrays(s, d), axis=-1)
        phi = s * k
        x = (np.sin(phi) - d * np.sin(phi) * k) / k
        y = (1.0 - np.cos(phi)) / k + d * np.cos(phi)
        return np.stack(np.broadcast_arrays(x, y), axis=-1)

    def heading_at(self, s):
        return wrap_angle(np.asarray(s, dtype=float) * self.curvature)

    def road_frame(self, points):
        """Ego frame (..., 2) -> (s, d) road coordinates."""
        pts = np.asarray(points, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        k = self.curvature
        if k == 0.0:
            return x, y
        radius = 1.0 / k
        r = np.hypot(x, y - radius)
        d = radius - np.sign(radius) * r
        phi = np.arctan2(x * np.sign(radius), (radius - y) * np.sign(radius))
        return phi * radius, d


def _build_road(cfg: WorldConfig, rng: np.random.Generator) -> Road:
    if rng.random() < cfg.straight_prob:
        curvature = 0.0
    else:
        radius = rng.uniform(*cfg.radius_range)
        curvature = (1.0 if rng.random() < 0.5 else -1.0) / radius
    n_fwd = int(rng.integers(1, cfg.max_fwd_lanes + 1))
    n_opp = int(rng.integers(0, cfg.max_opp_lanes + 1))
    has_parking = rng.random() < cfg.parking_cluster_prob
    crossing_s = float(rng.uniform(18.0, 45.0)) if rng.random() < cfg.crossing_prob else None

    road = Road(curvature, cfg.lane_width, n_fwd, n_opp, has_parking, crossing_s,
                s_min=-cfg.s_backward, s_max=cfg.s_forward)
    _clip_road_to_map(road, cfg)
    return road


def _clip_road_to_map(road: Road, cfg: WorldConfig) -> None:
    """Shrink the usable s-range so every road-band point stays on the raster."""
    x0, y0 = cfg.map_origin
    x1 = x0 + cfg.map_h * cfg.map_resolution
    y1 = y0 + cfg.map_w * cfg.map_resolution
    margin = 1.0
    offsets = np.array([road.d_road_min - road.WALK_DEPTH, road.d_road_max + road.WALK_DEPTH])

    def inside(s: float) -> bool:
        pts = road.point_at(np.full_like(offsets, s), offsets)
        return bool(np.all((pts[:, 0] >= x0 + margin) & (pts[:, 0] <= x1 - margin)
                           & (pts[:, 1] >= y0 + margin) & (pts[:, 1] <= y1 - margin)))

    s = 0.0
    while s + 1.0 <= road.s_max and inside(s + 1.0):
        s += 1.0
    road.s_max = s
    s = 0.0
    while s - 1.0 >= road.s_min and inside(s - 1.0):
        s -= 1.0
    road.s_min = s
    if road.crossing_s is not None and road.crossing_s > road.s_max - 6.0:
        road.crossing_s = None


def _rasterize(road: Road, cfg: WorldConfig) -> BEVMap:
    h, w, res = cfg.map_h, cfg.map_w, cfg.map_resolution
    xs = cfg.map_origin[0] + (np.arange(h) + 0.5) * res
    ys = cfg.map_origin[1] + (np.arange(w) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    s, d = road.road_frame(np.stack([gx, gy], axis=-1))
    on_road = (s >= road.s_min) & (s <= road.s_max)

    grid = np.zeros((h, w, 5), dtype=np.uint8)
    lw = road.lane_width
    drivable = on_road & (d >= road.d_road_min) & (d <= road.d_road_max)
    grid[:, :, 0] = drivable

    for i in range(road.n_fwd + road.n_opp - 1):
        line = lw / 2.0 + i * lw
        grid[:, :, 1] |= (on_road & (np.abs(d - line) <= 0.25)).astype(np.uint8)

    if road.crossing_s is not None:
        sc = road.crossing_s
        band = (np.abs(s - sc) <= 1.5) & (d >= -lw / 2.0) & (d <= road.d_road_max)
        grid[:, :, 2] = band
        stop = (s >= sc - 3.8) & (s <= sc - 2.6) & (d >= -lw / 2.0) & (d <= road.d_road_max)
        grid[:, :, 4] = stop

    walk_r = on_road & (d < road.d_road_min) & (d >= road.d_road_min - road.WALK_DEPTH)
    walk_l = on_road & (d > road.d_road_max) & (d <= road.d_road_max + road.WALK_DEPTH)
    grid[:, :, 3] = walk_r | walk_l
    return BEVMap(grid=grid, resolution=res, origin=np.array(cfg.map_origin))


# ---------------------------------------------------------------------------
# Population
# ---------------------------------------------------------------------------

def _vehicle_size(rng) -> np.ndarray:
    if rng.random() < 0.12:  # truck / van: long enough to double heading noise
        return np.array([rng.uniform(6.5, 9.0), rng.uniform(2.3, 2.6), rng.uniform(2.8, 3.5)])
    return np.array([rng.uniform(4.2, 5.2), rng.uniform(1.75, 2.1), rng.uniform(1.5, 1.9)])


def _pedestrian_size(rng) -> np.ndarray:
    side = rng.uniform(0.5, 0.8)
    return np.array([side, side * rng.uniform(0.8, 1.0), rng.uniform(1.5, 1.9)])


def _cyclist_size(rng) -> np.ndarray:
    return np.array([rng.uniform(1.6, 2.0), rng.uniform(0.5, 0.7), rng.uniform(1.4, 1.8)])


@dataclass
class _Placed:
    position: np.ndarray
    heading: float
    size: np.ndarray
    velocity: np.ndarray
    category: int
    yaw_rate: float
    kind: str  # vehicle / parked / pedestrian / cyclist


def _rect_of(p: _Placed) -> OrientedRect:
    return OrientedRect(p.position[:2], np.array([p.size[0] / 2, p.size[1] / 2]), p.heading)


def _rects_clear(candidate: OrientedRect, placed: list[OrientedRect], margin: float = 0.4) -> bool:
    from .types import rects_intersect
    inflated = OrientedRect(candidate.center, candidate.half_extents + margin, candidate.heading)
    ego = OrientedRect(np.zeros(2), np.array([EGO_LENGTH / 2 + 1.2, EGO_WIDTH / 2 + 1.2]), 0.0)
    if rects_intersect(inflated, ego):
        return False
    return not any(rects_intersect(inflated, r) for r in placed)


def _in_map(rect: OrientedRect, cfg: WorldConfig) -> bool:
    x0, y0 = cfg.map_origin
    x1 = x0 + cfg.map_h * cfg.map_resolution
    y1 = y0 + cfg.map_w * cfg.map_resolution
    corners = rect_corners(rect)
    return bool(np.all((corners[:, 0] >= x0) & (corners[:, 0] < x1)
                       & (corners[:, 1] >= y0) & (corners[:, 1] < y1)))


def _place(road: Road, cfg: WorldConfig, rng, placed_rects, sampler) -> _Placed | None:
    """Run a placement sampler under the retry budget; None if it never fit."""
    for _ in range(cfg.placement_retries):
        candidate = sampler()
        if candidate is None:
            continue
        rect = _rect_of(candidate)
        if _in_map(rect, cfg) and _rects_clear(rect, placed_rects):
            placed_rects.append(rect)
            return candidate
    return None


def _populate(road: Road, cfg: WorldConfig, rng) -> list[_Placed]:
    placed: list[_Placed] = []
    rects: list[OrientedRect] = []

    def moving_vehicle() -> _Placed | None:
        lanes = list(range(road.n_fwd + road.n_opp))
        lane = int(rng.choice(lanes))
        opposing = lane >= road.n_fwd
        behind = (not opposing) and rng.random() < cfg.behind_prob
        if behind:
            if road.s_min > -10.0:
                return None
            s = rng.uniform(road.s_min + 4.0, -7.0)
        else:
            s = rng.uniform(7.0, max(9.0, road.s_max - 4.0))
        d = road.lane_offset(lane) + rng.normal(0.0, 0.25)
        d = float(np.clip(d, road.lane_offset(lane) - 0.8, road.lane_offset(lane) + 0.8))
        stopped = rng.random() < cfg.stopped_prob
        speed = 0.0 if stopped else rng.uniform(*cfg.vehicle_speed)
        tangent = road.heading_at(s)
        heading = wrap_angle(tangent + math.pi if opposing else tangent)
        heading = wrap_angle(heading + rng.normal(0.0, 0.02))
        xy = road.point_at(s, d)
        size = _vehicle_size(rng)
        vel = speed * np.array([math.cos(heading), math.sin(heading)])
        return _Placed(np.array([xy[0], xy[1], size[2] / 2]), heading, size, vel,
                       category=0, yaw_rate=road.curvature * speed, kind="vehicle")

    def parked_vehicle(s: float) -> _Placed | None:
        d = road.park_offset + rng.normal(0.0, 0.12)
        heading = wrap_angle(road.heading_at(s) + rng.normal(0.0, 0.05))
        xy = road.point_at(s, d)
        size = _vehicle_size(rng)
        return _Placed(np.array([xy[0], xy[1], size[2] / 2]), heading, size,
                       np.zeros(2), category=0, yaw_rate=0.0, kind="parked")

    def pedestrian() -> _Placed | None:
        crossing = road.crossing_s is not None and rng.random() < 0.5
        if crossing:
            s = road.crossing_s + rng.uniform(-1.0, 1.0)
            d = rng.uniform(-road.lane_width / 2.0 + 0.5, road.d_road_max - 0.5)
            tangent = road.heading_at(s)
            direction = 1.0 if rng.random() < 0.5 else -1.0
            heading = wrap_angle(tangent + direction * math.pi / 2.0)
            speed = rng.uniform(0.9, 1.5)
        else:
            side = 1.0 if rng.random() < 0.5 else -1.0
            d = (road.d_road_max + 1.0) if side > 0 else (road.d_road_min - 1.0)
            s = rng.uniform(road.s_min + 3.0, road.s_max - 3.0)
            tangent = road.heading_at(s)
            heading = wrap_angle(tangent + (0.0 if rng.random() < 0.5 else math.pi))
            speed = rng.uniform(0.8, 1.6)
        xy = road.point_at(s, d)
        size = _pedestrian_size(rng)
        vel = speed * np.array([math.cos(heading), math.sin(heading)])
        return _Placed(np.array([xy[0], xy[1], size[2] / 2]), heading, size, vel,
                       category=1, yaw_rate=0.0, kind="pedestrian")

    def cyclist() -> _Placed | None:
        s = rng.uniform(6.0, max(8.0, road.s_max - 4.0))
        d = -road.lane_width / 2.0 + 0.55
        heading = wrap_angle(road.heading_at(s) + rng.normal(0.0, 0.03))
        speed = rng.uniform(3.0, 6.0)
        xy = road.point_at(s, d)
        size = _cyclist_size(rng)
        vel = speed * np.array([math.cos(heading), math.sin(heading)])
        return _Placed(np.array([xy[0], xy[1], size[2] / 2]), heading, size, vel,
                       category=2, yaw_rate=road.curvature * speed, kind="cyclist")

    n_vehicles = int(rng.integers(cfg.n_vehicles[0], cfg.n_vehicles[1] + 1))
    for _ in range(n_vehicles):
        p = _place(road, cfg, rng, rects, moving_vehicle)
        if p is None:
            raise GenerationError("could not place a moving vehicle within the retry budget")
        placed.append(p)

    if road.has_parking and road.s_max > 26.0 and cfg.parked_count[1] > 0:
        count = int(rng.integers(cfg.parked_count[0], cfg.parked_count[1] + 1))
        base = rng.uniform(4.0, road.s_max - 6.0 * count - 2.0) if road.s_max - 6.0 * count - 2.0 > 4.0 else 4.0
        for i in range(count):
            s_i = base + i * (5.6 + rng.uniform(0.0, 1.2))
            if s_i > road.s_max - 4.0:
                break
            p = _place(road, cfg, rng, rects, lambda s=s_i: parked_vehicle(s))
            if p is not None:
                placed.append(p)

    n_peds = int(rng.integers(cfg.n_pedestrians[0], cfg.n_pedestrians[1] + 1))
    for _ in range(n_peds):
        p = _place(road, cfg, rng, rects, pedestrian)
        if p is not None:
            placed.append(p)

    n_cyc = int(rng.integers(cfg.n_cyclists[0], cfg.n_cyclists[1] + 1))
    for _ in range(n_cyc):
        p = _place(road, cfg, rng, rects, cyclist)
        if p is not None:
            placed.append(p)

    return placed


# ---------------------------------------------------------------------------
# Visibility by ray casting
# ---------------------------------------------------------------------------

def _ray_rect_distance(direction: np.ndarray, rect: OrientedRect) -> float:
    """Distance from the origin along ``direction`` to entering ``rect`` (inf on miss)."""
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    rot = np.array([[c, s], [-s, c]])
    o = rot @ (-rect.center)
    d = rot @ direction
    t_lo, t_hi = -math.inf, math.inf
    for axis in range(2):
        h = rect.half_extents[axis]
        if abs(d[axis]) < 1e-12:
            if abs(o[axis]) > h:
                return math.inf
            continue
        t1 = (-h - o[axis]) / d[axis]
        t2 = (h - o[axis]) / d[axis]
        t_lo = max(t_lo, min(t1, t2))
        t_hi = min(t_hi, max(t1, t2))
    if t_hi < t_lo or t_hi < 0:
        return math.inf
    return max(t_lo, 0.0)


def _visibility_quartiles(placed: list[_Placed], n_rays: int = 21) -> list[int]:
    rects = [_rect_of(p) for p in placed]
    out = []
    for i, p in enumerate(placed):
        corners = rect_corners(rects[i])
        center_bearing = math.atan2(p.position[1], p.position[0])
        rel = wrap_angle(np.arctan2(corners[:, 1], corners[:, 0]) - center_bearing)
        lo, hi = float(np.min(rel)), float(np.max(rel))
        angles = center_bearing + np.linspace(lo, hi, n_rays)
        unblocked = 0
        total = 0
        for phi in angles:
            direction = np.array([math.cos(phi), math.sin(phi)])
            t_self = _ray_rect_distance(direction, rects[i])
            if not math.isfinite(t_self):
                continue
            total += 1
            occluded = any(
                _ray_rect_distance(direction, rects[j]) < t_self - 0.05
                for j in range(len(placed)) if j != i
            )
            if not occluded:
                unblocked += 1
        frac = (unblocked / total) if total else 1.0
        if frac > 0.75:
            out.append(3)
        elif frac > 0.5:
            out.append(2)
        elif frac > 0.25:
            out.append(1)
        else:
            out.append(0)
    return out


# ---------------------------------------------------------------------------
# Expert trajectory: lane following with reactive longitudinal control
# ---------------------------------------------------------------------------

def _expert_trajectory(road: Road, placed: list[_Placed], ego_speed: float,
                       futures: list[np.ndarray]) -> Trajectory:
    """Follow the ego lane; adapt speed to the nearest object in the corridor.

    Pure lane following at constant speed would make the demonstrations
    independent of the traffic, and a planner imitating them would ignore its
    detections; the gap-keeping rule ties the expert (and hence the planner)
    to the perceived objects.
    """
    s_e, v_e = 0.0, ego_speed
    a_max = 3.0
    waypoints = []
    obj_s0 = []
    for p in placed:
        s_o, d_o = road.road_frame(p.position[:2])
        obj_s0.append((float(s_o), float(d_o)))
    for t in range(T_PLAN):
        # objects move on their constant-velocity futures
        lead_gap, lead_speed = math.inf, 0.0
        for k, p in enumerate(placed):
            pos_t = futures[k][t, :2] if t < len(futures[k]) else p.position[:2]
            s_o, d_o = road.road_frame(pos_t)
            if abs(d_o) > 1.7 or s_o <= s_e:
                continue
            gap = s_o - s_e - (p.size[0] + EGO_LENGTH) / 2.0
            if gap < lead_gap:
                lead_gap = gap
                v_vec = p.velocity
                tangent = road.heading_at(s_o)
                lead_speed = max(0.0, v_vec[0] * math.cos(tangent) + v_vec[1] * math.sin(tangent))
        if math.isfinite(lead_gap):
            d_safe = 2.5 + 0.55 * v_e
            v_des = max(0.0, min(ego_speed, lead_speed + (lead_gap - d_safe) / 1.5))
        else:
            v_des = ego_speed
        v_e = float(np.clip(v_des, v_e - a_max * PLAN_DT, v_e + a_max * PLAN_DT))
        s_e += v_e * PLAN_DT
        xy = road.point_at(s_e, 0.0)
        waypoints.append([xy[0], xy[1], road.heading_at(s_e)])
    return Trajectory(np.array(waypoints))


def _nav_command(expert: Trajectory) -> str:
    total_turn = wrap_angle(expert.waypoints[-1, 2] - 0.0)
    if total_turn > math.radians(15.0):
        return "turn-left"
    if total_turn < -math.radians(15.0):
        return "turn-right"
    return "go-straight"


def generate_scene(config: WorldConfig, rng: np.random.Generator,
                   scene_id: str = "scene") -> Scene:
    """Generate one procedural scene; deterministic given the rng state."""
    config.validate()
    road = _build_road(config, rng)
    bev = _rasterize(road, config)
    placed = _populate(road, config, rng)
    ego_speed = float(rng.uniform(*config.ego_speed))

    futures = []
    for p in placed:
        steps = (np.arange(1, T_PLAN + 1) * PLAN_DT)[:, None]
        xy = p.position[:2] + steps * p.velocity
        heading = np.full((T_PLAN, 1), p.heading)
        futures.append(np.concatenate([xy, heading], axis=1))

    expert = _expert_trajectory(road, placed, ego_speed, futures)
    visibility = _visibility_quartiles(placed)

    objects = []
    for k, p in enumerate(placed):
        objects.append(GroundTruthObject(
            position=p.position, heading=p.heading, size=p.size, velocity=p.velocity,
            acceleration=np.zeros(2), yaw_rate=p.yaw_rate, yaw_accel=0.0,
            category=p.category, visibility=visibility[k],
            track_id=f"{scene_id}-{p.kind}{k}",
        ))
    return Scene(
        objects=tuple(objects), map=bev, future_tracks=tuple(futures),
        ego_speed=ego_speed, nav_command=_nav_command(expert),
        expert_trajectory=expert, scene_id=scene_id,
    )


# ---------------------------------------------------------------------------
# Oracle detector
# ---------------------------------------------------------------------------

def _drivable_boundary_cells(bev: BEVMap) -> np.ndarray:
    """Cell indices of drivable cells that touch a non-drivable 4-neighbour."""
    drivable = bev.grid[:, :, 0].astype(bool)
    padded = np.pad(drivable, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    boundary = drivable & ~interior
    return np.argwhere(boundary)


def _sample_score(rng, beta: tuple[float, float], exponent: float = 1.0) -> float:
    a, b = beta
    if b == 0.0:
        return 1.0
    return float(rng.beta(a, b) ** max(exponent, 1.0))


def _other_scores(rng, n_categories: int, category: int, deterministic: bool) -> np.ndarray:
    scores = np.zeros(n_categories)
    if not deterministic:
        for c in range(n_categories):
            if c != category:
                scores[c] = rng.beta(1.0, 20.0) * 0.3
    return scores


def oracle_detect(scene: Scene, profile: NoiseProfile, rng: np.random.Generator,
                  n_categories: int = N_CATEGORIES) -> BoxSet:
    """Corrupt the ground truth according to the noise profile.

    Per object: drop with the analytic miss probability, else add along/cross
    ray translation noise, heading and velocity noise, and a quality-coupled
    Beta confidence; occasionally emit a lower-score duplicate displaced along
    the viewing ray. Finally scatter Poisson-distributed ghost boxes near the
    drivable-area boundary.
    """
    profile.validate()
    boxes: list[Box] = []
    deterministic = profile.score_tp_beta[1] == 0.0
    for obj in scene.objects:
        range_m = float(np.hypot(obj.position[0], obj.position[1]))
        p_miss = min(1.0, profile.fn_base[obj.category]
                     + profile.fn_range_gain * range_m
                     + profile.fn_visibility_gain * (3 - obj.visibility))
        if rng.random() < p_miss:
            continue
        ray = obj.position[:2] / max(range_m, 1e-9)
        perp = np.array([-ray[1], ray[0]])
        sigma_along_r = profile.sigma_along * range_m / 50.0
        e_along = rng.normal(0.0, sigma_along_r) if sigma_along_r > 0 else 0.0
        e_cross = rng.normal(0.0, profile.sigma_across) if profile.sigma_across > 0 else 0.0
        e_z = rng.normal(0.0, 0.5 * profile.sigma_across) if profile.sigma_across > 0 else 0.0
        position = obj.position + np.array([*(e_along * ray + e_cross * perp), e_z])
        heading_sigma = profile.sigma_heading * (2.0 if obj.size[0] > 6.0 else 1.0)
        heading = wrap_angle(obj.heading + (rng.normal(0.0, heading_sigma) if heading_sigma > 0 else 0.0))
        velocity = obj.velocity + (rng.normal(0.0, profile.sigma_vel, 2) if profile.sigma_vel > 0 else 0.0)

        e_norm = abs(e_along) / max(sigma_along_r, 0.05)
        exponent = 1.0 + profile.score_range_gain * range_m / 50.0 \
            + profile.score_error_gain * e_norm
        score = _sample_score(rng, profile.score_tp_beta, exponent)
        scores = _other_scores(rng, n_categories, obj.category, deterministic)
        scores[obj.category] = score
        boxes.append(Box(position, heading, obj.size, velocity, scores))

        if profile.dup_prob > 0 and rng.random() < profile.dup_prob:
            offset = rng.normal(0.0, profile.dup_offset_sigma)
            dup_pos = position + np.array([offset * ray[0], offset * ray[1], 0.0])
            dup_scores = scores * rng.uniform(0.35, 0.85)
            boxes.append(Box(dup_pos, heading, obj.size, velocity, dup_scores))

    if profile.ghost_rate > 0:
        n_ghosts = int(rng.poisson(profile.ghost_rate))
        cells = _drivable_boundary_cells(scene.map)
        if len(cells) and n_ghosts:
            res = scene.map.resolution
            for _ in range(n_ghosts):
                cell = cells[int(rng.integers(len(cells)))]
                xy = scene.map.origin + (cell + 0.5) * res + rng.uniform(-0.5 * res, 0.5 * res, 2)
                category = 0 if rng.random() < 0.7 else int(rng.integers(1, n_categories))
                size = (_vehicle_size(rng) if category == 0
                        else _pedestrian_size(rng) if category == 1 else _cyclist_size(rng))
                heading = float(rng.uniform(-math.pi, math.pi))
                velocity = rng.normal(0.0, 0.8, 2)
                scores = _other_scores(rng, n_categories, category, deterministic)
                scores[category] = _sample_score(rng, profile.score_fp_beta)
                boxes.append(Box(np.array([xy[0], xy[1], size[2] / 2]), heading,
                                 size, velocity, scores))
    return BoxSet.from_boxes(boxes, n_categories)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Scenes with raw detector logs and cached greedy matches.

    Matches index into the score-filtered detections (the shared 0.2 filter is
    applied identically to detector targets and model outputs everywhere).
    """

    scenes: list[Scene]
    detections: dict[str, BoxSet]
    matches: dict[str, np.ndarray]
    n_categories: int
    score_filter: float = 0.2

    def __post_init__(self):
        self._filtered = {sid: det.filter_by_score(self.score_filter)
                          for sid, det in self.detections.items()}

    def __len__(self) -> int:
        return len(self.scenes)

    def scene_by_id(self, scene_id: str) -> Scene:
        for scene in self.scenes:
            if scene.scene_id == scene_id:
                return scene
        raise KeyError(scene_id)

    def filtered(self, scene_id: str) -> BoxSet:
        return self._filtered[scene_id]

    def subset(self, indices) -> "Dataset":
        scenes = [self.scenes[i] for i in indices]
        ids = {s.scene_id for s in scenes}
        return Dataset(
            scenes=scenes,
            detections={k: v for k, v in self.detections.items() if k in ids},
            matches={k: v for k, v in self.matches.items() if k in ids},
            n_categories=self.n_categories,
            score_filter=self.score_filter,
        )


def make_dataset(scenes: list[Scene], detections: dict[str, BoxSet],
                 n_categories: int = N_CATEGORIES, score_filter: float = 0.2) -> Dataset:
    """Assemble a dataset, computing greedy matches on the filtered detections."""
    matches = {}
    for scene in scenes:
        filtered = detections[scene.scene_id].filter_by_score(score_filter)
        matches[scene.scene_id] = greedy_match(filtered, scene.objects,
                                               GREEDY_DIST_THRESHOLD)
    return Dataset(scenes, detections, matches, n_categories, score_filter)


def split_counts(n_scenes: int, fractions: tuple[float, float, float]) -> list[int]:
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    bounds = np.round(np.cumsum(fractions) * n_scenes).astype(int)
    counts = np.diff(np.concatenate([[0], bounds]))
    return [int(c) for c in counts]


def build_dataset(config: WorldConfig, profile: NoiseProfile, n_scenes: int,
                  split_fractions: tuple[float, float, float],
                  out_dir: Path | str, n_categories: int = N_CATEGORIES,
                  score_filter: float = 0.2) -> dict[str, Dataset]:
    """Generate scenes + detector logs and write the three training splits."""
    out_dir = Path(out_dir)
    counts = split_counts(n_scenes, split_fractions)
    datasets: dict[str, Dataset] = {}
    index = 0
    for split, count in zip(SPLIT_NAMES, counts):
        scenes = []
        detections = {}
        for _ in range(count):
            scene_id = f"scene{index:06d}"
            gen_rng = np.random.default_rng(np.random.SeedSequence([config.seed, index, 0]))
            det_rng = np.random.default_rng(np.random.SeedSequence([config.seed, index, 1]))
            scene = generate_scene(config, gen_rng, scene_id)
            scenes.append(scene)
            detections[scene_id] = oracle_detect(scene, profile, det_rng, n_categories)
            index += 1
        dataset = make_dataset(scenes, detections, n_categories, score_filter)
        datasets[split] = dataset
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        sceneio.write_scenes(split_dir / "scenes.jsonl", scenes)
        sceneio.write_detections(split_dir / "detections.jsonl",
                                 [(s.scene_id, detections[s.scene_id]) for s in scenes])
        _write_matches(split_dir / "matches.jsonl", dataset)
    return datasets


def _write_matches(path: Path, dataset: Dataset) -> None:
    import json
    with open(path, "wb") as fh:
        for scene in dataset.scenes:
            row = {"scene_id": scene.scene_id,
                   "matches": [int(v) for v in dataset.matches[scene.scene_id]]}
            fh.write((json.dumps(row, separators=(",", ":")) + "\n").encode())


def ingest_external(scene_path: Path | str, detections_path: Path | str,
                    n_categories: int = N_CATEGORIES, score_filter: float = 0.2) -> Dataset:
    """Load scenes and a detection log in the documented schema.

    Detections referencing unknown scene ids are rejected; scenes without a
    detection record get an empty box set (a detector may output nothing).
    """
    scenes = sceneio.read_scenes(scene_path)
    raw = sceneio.read_detections(detections_path, n_categories)
    known = {s.scene_id for s in scenes}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise sceneio.SchemaError("scene_id", f"detections reference unknown scene ids: {unknown[:5]}")
    detections = {sid: raw.get(sid, BoxSet.empty(n_categories)) for sid in known}
    return make_dataset(scenes, detections, n_categories, score_filter)


def load_split(split_dir: Path | str, n_categories: int = N_CATEGORIES,
               score_filter: float = 0.2) -> Dataset:
    split_dir = Path(split_dir)
    return ingest_external(split_dir / "scenes.jsonl", split_dir / "detections.jsonl",
                           n_categories, score_filter)
