import numpy as np
import pytest

from pemprobe.types import (
    BEVMap, Box, BoxSet, GroundTruthObject, Scene, Trajectory, T_PLAN,
)

N_CATEGORIES = 3


def make_object(x=10.0, y=0.0, heading=0.0, size=(4.5, 1.9, 1.7), velocity=(5.0, 0.0),
                category=0, visibility=3, track_id="o0", **kw):
    return GroundTruthObject(
        position=np.array([x, y, kw.get("z", 0.85)]),
        heading=heading,
        size=np.array(size),
        velocity=np.array(velocity),
        acceleration=np.array(kw.get("acceleration", (0.0, 0.0))),
        yaw_rate=kw.get("yaw_rate", 0.0),
        yaw_accel=kw.get("yaw_accel", 0.0),
        category=category,
        visibility=visibility,
        track_id=track_id,
    )


def make_box(x=10.0, y=0.0, heading=0.0, size=(4.5, 1.9, 1.7), velocity=(5.0, 0.0),
             scores=(0.9, 0.05, 0.05), z=0.85):
    return Box(
        position=np.array([x, y, z]),
        heading=heading,
        size=np.array(size),
        velocity=np.array(velocity),
        scores=np.array(scores),
    )


def make_map(h=24, w=16, resolution=1.0, origin=(-4.0, -8.0), rng=None):
    grid = np.zeros((h, w, 5), dtype=np.uint8)
    grid[:, w // 4: 3 * w // 4, 0] = 1  # a drivable band
    if rng is not None:
        grid[:, :, 1] = (rng.random((h, w)) < 0.05).astype(np.uint8)
    return BEVMap(grid=grid, resolution=resolution, origin=np.array(origin))


def constant_velocity_future(obj, t_plan=T_PLAN, dt=0.5):
    steps = np.arange(1, t_plan + 1)[:, None] * dt
    xy = obj.position[:2] + steps * obj.velocity
    heading = np.full((t_plan, 1), obj.heading)
    return np.concatenate([xy, heading], axis=1)


def make_scene(objects=None, scene_id="s0", ego_speed=6.0, nav_command="go-straight",
               bev_map=None, expert=None):
    objects = list(objects) if objects is not None else [make_object()]
    bev_map = bev_map if bev_map is not None else make_map()
    if expert is None:
        steps = np.arange(1, T_PLAN + 1) * 0.5
        expert = np.stack([steps * ego_speed, np.zeros(T_PLAN), np.zeros(T_PLAN)], axis=1)
    futures = tuple(constant_velocity_future(o) for o in objects)
    return Scene(
        objects=tuple(objects),
        map=bev_map,
        future_tracks=futures,
        ego_speed=ego_speed,
        nav_command=nav_command,
        expert_trajectory=Trajectory(expert),
        scene_id=scene_id,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
