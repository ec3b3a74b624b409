import io

import numpy as np
import pytest

from evdrive.recording import StreamId, VehicleChannel, stream_stats, write_recording
from evdrive.scene import (
    EXPOSURE_MAX_US,
    EXPOSURE_MIN_US,
    STEERING_GAIN_DEG_M,
    ScenarioParams,
    SimulatedScene,
    exposure_for_lighting,
    generate_scene,
    parse_scenario,
)
from evdrive.simulator import SensorParams

SMALL = SensorParams(width=80, height=60)


def test_zero_duration_scenario_rejected():
    with pytest.raises(ValueError, match="duration"):
        ScenarioParams(duration_s=0.0)


def test_straight_road_gives_zero_steering():
    scenario = ScenarioParams(duration_s=1.0, curvature_points=((0.0, 0.0),))
    scene = generate_scene(scenario, SMALL)
    angles = [
        p.payload.value
        for p in scene.vehicle_packets
        if p.payload.channel is VehicleChannel.STEERING_WHEEL_ANGLE
    ]
    assert angles and all(a == 0.0 for a in angles)


def test_constant_curvature_gives_constant_gain_steering():
    c = 0.004
    scenario = ScenarioParams(duration_s=1.0, curvature_points=((0.0, c),))
    scene = generate_scene(scenario, SMALL)
    angles = [
        p.payload.value
        for p in scene.vehicle_packets
        if p.payload.channel is VehicleChannel.STEERING_WHEEL_ANGLE
    ]
    assert angles == pytest.approx([STEERING_GAIN_DEG_M * c] * len(angles))


def test_stream_arithmetic_for_two_seconds():
    scenario = ScenarioParams(duration_s=2.0)
    scene = generate_scene(scenario, SMALL)
    assert len(scene.aps_frames) == 40  # 20 fps
    per_channel = {}
    for p in scene.vehicle_packets:
        per_channel[p.payload.channel] = per_channel.get(p.payload.channel, 0) + 1
    assert per_channel[VehicleChannel.STEERING_WHEEL_ANGLE] == 20  # 10 Hz
    assert per_channel[VehicleChannel.SPEED] == 20


def test_same_seed_is_byte_identical():
    scenario = ScenarioParams(
        duration_s=1.0,
        seed=77,
        curvature_points=((0.0, 0.0), (0.5, 0.005), (1.0, -0.005)),
        curvature_noise_amp=0.001,
    )
    blobs = []
    for _ in range(2):
        scene = generate_scene(scenario, SMALL)
        buf = io.BytesIO()
        write_recording(scene.meta, scene.packets(), buf)
        blobs.append(buf.getvalue())
    assert blobs[0] == blobs[1]

    other = generate_scene(
        ScenarioParams(**{**scenario.__dict__, "seed": 78}), SMALL
    )
    buf = io.BytesIO()
    write_recording(other.meta, other.packets(), buf)
    assert buf.getvalue() != blobs[0]


def test_events_move_with_the_road():
    scenario = ScenarioParams(duration_s=1.0, speed_points=((0.0, 90.0),))
    scene = generate_scene(scenario, SMALL)
    assert len(scene.events) > 1000
    ts = scene.events["device_ts_us"]
    assert np.all(ts[1:] >= ts[:-1])


def test_container_stats_match_scene_counts():
    scenario = ScenarioParams(duration_s=1.5, seed=5)
    scene = generate_scene(scenario, SMALL)
    buf = io.BytesIO()
    write_recording(scene.meta, scene.packets(), buf)
    buf.seek(0)
    from evdrive.recording import open_recording

    _, packets = open_recording(buf)
    stats = stream_stats(packets)
    assert stats["DVS"]["events"] == len(scene.events)
    assert stats["APS"]["count"] == len(scene.aps_frames)
    assert stats["VEHICLE"]["count"] == len(scene.vehicle_packets)


def test_exposure_tracks_lighting_within_sensor_limits():
    assert exposure_for_lighting(1.0) == 5000
    assert exposure_for_lighting(0.5) == 10000
    assert exposure_for_lighting(1e-6) == EXPOSURE_MAX_US
    assert exposure_for_lighting(200.0) == EXPOSURE_MIN_US


def test_night_frames_are_underexposed():
    day = generate_scene(ScenarioParams(duration_s=0.2, lighting=0.9), SMALL)
    night = generate_scene(ScenarioParams(duration_s=0.2, lighting=0.01), SMALL)
    assert night.aps_frames[0].exposure_us == EXPOSURE_MAX_US
    assert night.aps_frames[0].pixels.max() < day.aps_frames[0].pixels.max() / 2
    for scene in (day, night):
        for frame in scene.aps_frames:
            assert EXPOSURE_MIN_US <= frame.exposure_us <= EXPOSURE_MAX_US
            assert frame.pixels.max() <= 1023


def test_parse_scenario_full_config():
    text = """
# demo scenario
duration_s = 12.5
seed = 9
lighting = 0.4
curvature = 0:0.0, 5:0.004, 10:-0.002
speed = 0:40, 12.5:80
tag = night
id = rec_demo
wobble_amp_m = 0.02
curvature_noise_amp = 0.0005
"""
    s = parse_scenario(text)
    assert s.duration_s == 12.5
    assert s.seed == 9
    assert s.lighting == 0.4
    assert s.curvature_points == ((0.0, 0.0), (5.0, 0.004), (10.0, -0.002))
    assert s.speed_points == ((0.0, 40.0), (12.5, 80.0))
    assert s.tag == "night"
    assert s.recording_id == "rec_demo"


def test_parse_scenario_scalar_profiles_and_errors():
    s = parse_scenario("duration_s=1\ncurvature=0.002\nspeed=55\n")
    assert s.curvature_points == ((0.0, 0.002),)
    assert s.speed_points == ((0.0, 55.0),)
    with pytest.raises(ValueError, match="duration_s"):
        parse_scenario("speed=50\n")
    with pytest.raises(ValueError, match="unknown"):
        parse_scenario("duration_s=1\nbogus=3\n")


def test_scenario_validation_limits():
    with pytest.raises(ValueError, match="speed"):
        ScenarioParams(duration_s=1.0, speed_points=((0.0, 170.0),))
    with pytest.raises(ValueError, match="lighting"):
        ScenarioParams(duration_s=1.0, lighting=0.0)
    with pytest.raises(ValueError, match="720"):
        ScenarioParams(duration_s=1.0, curvature_points=((0.0, 0.5),))
