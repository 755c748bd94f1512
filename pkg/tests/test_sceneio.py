import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pemprobe import sceneio
from pemprobe.sceneio import (
    SchemaError, deserialize_scene, rle_decode, rle_encode, serialize_scene,
)
from pemprobe.types import BoxSet

from conftest import make_box, make_map, make_object, make_scene


def scenes_equal(a, b):
    if a.scene_id != b.scene_id or a.ego_speed != b.ego_speed:
        return False
    if a.nav_command != b.nav_command:
        return False
    if not np.array_equal(a.expert_trajectory.waypoints, b.expert_trajectory.waypoints):
        return False
    if not np.array_equal(a.map.grid, b.map.grid):
        return False
    if a.map.resolution != b.map.resolution or not np.array_equal(a.map.origin, b.map.origin):
        return False
    if len(a.objects) != len(b.objects):
        return False
    for oa, ob, fa, fb in zip(a.objects, b.objects, a.future_tracks, b.future_tracks):
        if oa != ob or not np.array_equal(fa, fb):
            return False
    return True


def test_round_trip_identity(rng):
    objects = [
        make_object(x=12.0, y=-1.5, heading=0.2, track_id="v0"),
        make_object(x=30.0, y=3.5, heading=-2.9, category=1,
                    size=(0.7, 0.7, 1.8), velocity=(0.0, 1.2), visibility=1, track_id="p0"),
    ]
    scene = make_scene(objects, bev_map=make_map(rng=rng))
    assert scenes_equal(scene, deserialize_scene(serialize_scene(scene)))


def test_round_trip_empty_scene():
    scene = make_scene(objects=[])
    restored = deserialize_scene(serialize_scene(scene))
    assert restored.n_objects == 0
    assert scenes_equal(scene, restored)


def test_missing_map_field_names_field():
    record = json.loads(serialize_scene(make_scene()))
    del record["map"]
    with pytest.raises(SchemaError) as exc:
        sceneio.record_to_scene(record)
    assert exc.value.field_path == "map"


def test_nested_field_errors_are_precise():
    record = json.loads(serialize_scene(make_scene()))
    del record["objects"][0]["size"]
    with pytest.raises(SchemaError, match=r"objects\[0\].size"):
        sceneio.record_to_scene(record)

    record = json.loads(serialize_scene(make_scene()))
    record["objects"][0]["visibility"] = 7
    with pytest.raises(SchemaError, match=r"objects\[0\].visibility"):
        sceneio.record_to_scene(record)

    record = json.loads(serialize_scene(make_scene()))
    record["map"]["channels"] = record["map"]["channels"][:4]
    with pytest.raises(SchemaError, match=r"map.channels"):
        sceneio.record_to_scene(record)


def test_serialization_is_deterministic():
    scene = make_scene()
    assert serialize_scene(scene) == serialize_scene(scene)


@given(st.lists(st.integers(min_value=0, max_value=1), min_size=0, max_size=200))
def test_rle_round_trip(bits):
    arr = np.array(bits, dtype=np.uint8)
    runs = rle_encode(arr)
    assert np.array_equal(rle_decode(runs, len(arr)), arr)
    # runs alternate starting with value 0
    if len(arr) and arr[0] == 1:
        assert runs[0] == 0


def test_rle_length_mismatch_raises():
    with pytest.raises(SchemaError, match="channels"):
        rle_decode([3, 2], 10)


def test_detection_log_round_trip():
    boxes = BoxSet.from_boxes([make_box(x=5.0), make_box(x=9.0, scores=(0.2, 0.6, 0.1))])
    record = sceneio.detections_to_record("s0", boxes)
    scene_id, restored = sceneio.record_to_detections(record, n_categories=3)
    assert scene_id == "s0"
    assert restored == boxes


def test_detection_log_empty_boxes_accepted():
    record = {"scene_id": "s1", "boxes": []}
    scene_id, restored = sceneio.record_to_detections(record, n_categories=3)
    assert scene_id == "s1" and len(restored) == 0


def test_detection_score_length_checked():
    record = sceneio.detections_to_record(
        "s0", BoxSet.from_boxes([make_box()]))
    with pytest.raises(SchemaError, match=r"boxes\[0\].scores"):
        sceneio.record_to_detections(record, n_categories=5)


def test_file_round_trip(tmp_path, rng):
    scenes = [make_scene([make_object(track_id=f"o{i}")], scene_id=f"s{i}",
                         bev_map=make_map(rng=rng)) for i in range(3)]
    path = tmp_path / "scenes.jsonl"
    sceneio.write_scenes(path, scenes)
    restored = sceneio.read_scenes(path)
    assert len(restored) == 3
    assert all(scenes_equal(a, b) for a, b in zip(scenes, restored))

    logs = [(s.scene_id, BoxSet.from_boxes([make_box()])) for s in scenes]
    det_path = tmp_path / "det.jsonl"
    sceneio.write_detections(det_path, logs)
    back = sceneio.read_detections(det_path, n_categories=3)
    assert set(back) == {"s0", "s1", "s2"}
