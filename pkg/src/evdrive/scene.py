"""Synthetic curved-road driving scenes with ground-truth steering.

The renderer draws a flat-ground perspective road (two edge lines, a dashed
center line, roadside posts) whose lateral geometry follows a time-varying
curvature profile.  A scene yields the three streams a real recording rig
would produce: intensity frames for the DVS model at the internal frame
rate, auto-exposed APS frames at 20 fps, and 10 Hz vehicle telemetry whose
steering label is STEERING_GAIN_DEG_M times the instantaneous curvature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .recording import (
    ApsFrame,
    RecordingMeta,
    StampedPacket,
    StreamId,
    VehicleChannel,
    VehicleSample,
    aps_packet,
    dvs_packet,
    vehicle_packet,
)
from .simulator import ADC_FULL_SCALE, SensorParams, events_from_frames

INTERNAL_FPS = 50
APS_FPS = 20
VEHICLE_HZ = 10

# Steering label in degrees per unit road curvature (1/m).
STEERING_GAIN_DEG_M = 2000.0

# Auto-exposure aims for lighting * exposure_us == EXPOSURE_TARGET_US, then
# clamps to the sensor's physical exposure range; below the clamp point the
# APS image comes out underexposed and coarsely quantized.
EXPOSURE_TARGET_US = 5000.0
EXPOSURE_MIN_US = 50
EXPOSURE_MAX_US = 200_000

_CAM_HEIGHT_M = 1.5
_ROAD_HALF_WIDTH_M = 1.85
_LINE_WIDTH_M = 0.15
_DASH_PERIOD_M = 12.0
_DASH_DUTY = 0.5
_POST_SPACING_M = 30.0
_POST_LATERAL_M = 4.0
_POST_HEIGHT_M = 1.2
_POST_WIDTH_M = 0.12
_MAX_DRAW_DISTANCE_M = 400.0

_SKY = 0.55
_GROUND = 0.22
_ROAD = 0.40
_LINE = 0.90
_POST = 0.75


def _parse_profile(text: str) -> tuple[tuple[float, float], ...]:
    """Parse 't:v,t:v,...' breakpoints; a bare scalar means a constant."""
    text = text.strip()
    if ":" not in text:
        return ((0.0, float(text)),)
    points = []
    for part in text.split(","):
        t_str, _, v_str = part.partition(":")
        points.append((float(t_str), float(v_str)))
    if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
        raise ValueError("profile breakpoints must have increasing times")
    return tuple(points)


@dataclass(frozen=True)
class ScenarioParams:
    duration_s: float
    seed: int = 0
    lighting: float = 0.85
    curvature_points: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    speed_points: tuple[tuple[float, float], ...] = ((0.0, 60.0),)
    tag: str = "day"
    recording_id: str = "scene"
    wobble_amp_m: float = 0.05
    curvature_noise_amp: float = 0.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("scenario duration must be positive")
        if not 0.0 < self.lighting <= 1.0:
            raise ValueError("lighting must be in (0, 1]")
        speeds = [v for _, v in self.speed_points]
        if min(speeds) < 0 or max(speeds) > 160:
            raise ValueError("speed profile must stay within [0, 160] km/h")
        worst = max(abs(c) for _, c in self.curvature_points) + self.curvature_noise_amp
        if worst * STEERING_GAIN_DEG_M > 720:
            raise ValueError("curvature profile exceeds the +-720 deg steering range")


_SCENARIO_KEYS = {
    "duration_s",
    "seed",
    "lighting",
    "curvature",
    "speed",
    "tag",
    "id",
    "wobble_amp_m",
    "curvature_noise_amp",
}


def parse_scenario(text: str) -> ScenarioParams:
    """Parse a UTF-8 key=value scenario config."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _SCENARIO_KEYS:
            raise ValueError(f"scenario line {lineno}: unknown or malformed entry {line!r}")
        raw[key] = value.strip()
    if "duration_s" not in raw:
        raise ValueError("scenario config missing duration_s")
    return ScenarioParams(
        duration_s=float(raw["duration_s"]),
        seed=int(raw.get("seed", "0")),
        lighting=float(raw.get("lighting", "0.85")),
        curvature_points=_parse_profile(raw.get("curvature", "0")),
        speed_points=_parse_profile(raw.get("speed", "60")),
        tag=raw.get("tag", "day"),
        recording_id=raw.get("id", "scene"),
        wobble_amp_m=float(raw.get("wobble_amp_m", "0.05")),
        curvature_noise_amp=float(raw.get("curvature_noise_amp", "0")),
    )


def _piecewise(points: Sequence[tuple[float, float]], t: np.ndarray) -> np.ndarray:
    ts = np.array([p[0] for p in points])
    vs = np.array([p[1] for p in points])
    return np.interp(t, ts, vs)


class _SceneModel:
    """Deterministic time-parametric scene state derived from a scenario."""

    def __init__(self, scenario: ScenarioParams, sensor: SensorParams):
        self.scenario = scenario
        self.sensor = sensor
        rng = np.random.default_rng(scenario.seed)
        self.dash_phase = rng.uniform(0.0, _DASH_PERIOD_M)
        self.post_phase = rng.uniform(0.0, _POST_SPACING_M)

        # Smooth per-scene wobble of the camera's lateral lane position and
        # optional curvature noise, both piecewise-linear over coarse knots.
        knots_t = np.arange(0.0, scenario.duration_s + 0.5, 0.5)
        self.wobble_knots = (knots_t, rng.normal(0.0, 1.0, len(knots_t)) * scenario.wobble_amp_m)
        cn_t = np.arange(0.0, scenario.duration_s + 2.0, 2.0)
        self.cnoise_knots = (cn_t, rng.normal(0.0, 1.0, len(cn_t)) * scenario.curvature_noise_amp)

        grid = np.arange(0.0, scenario.duration_s + 0.01, 0.01)
        speed_ms = _piecewise(scenario.speed_points, grid) / 3.6
        dist = np.concatenate([[0.0], np.cumsum((speed_ms[1:] + speed_ms[:-1]) * 0.5 * 0.01)])
        self._odo_grid = (grid, dist)

        h, w = sensor.height, sensor.width
        self.focal_px = float(w)
        self.y_horizon = int(round(0.42 * h))
        rows = np.arange(self.y_horizon + 1, h)
        self.rows = rows
        self.row_depth = self.focal_px * _CAM_HEIGHT_M / (rows - self.y_horizon)
        self.cols = np.arange(w, dtype=np.float64)

    def curvature(self, t_s: float) -> float:
        base = float(_piecewise(self.scenario.curvature_points, np.array([t_s]))[0])
        noise = float(np.interp(t_s, *self.cnoise_knots))
        return base + noise

    def speed_kmh(self, t_s: float) -> float:
        return float(_piecewise(self.scenario.speed_points, np.array([t_s]))[0])

    def odometer_m(self, t_s: float) -> float:
        return float(np.interp(t_s, *self._odo_grid))

    def wobble_m(self, t_s: float) -> float:
        return float(np.interp(t_s, *self.wobble_knots))

    def steering_deg(self, t_s: float) -> float:
        return STEERING_GAIN_DEG_M * self.curvature(t_s)

    def luminance(self, t_s: float) -> np.ndarray:
        """Render the unit-range luminance image for time t_s."""
        h, w = self.sensor.height, self.sensor.width
        img = np.full((h, w), _SKY)
        img[self.y_horizon + 1 :, :] = _GROUND

        c = self.curvature(t_s)
        cam_lat = self.wobble_m(t_s)
        odo = self.odometer_m(t_s)
        f = self.focal_px
        d = self.row_depth
        visible = d <= _MAX_DRAW_DISTANCE_M
        cx = w / 2.0

        # Screen-space road center and half width per row (circular-arc
        # approximation: lateral offset = curvature * d^2 / 2).
        center = cx + f * (0.5 * c * d * d - cam_lat) / d
        halfw = f * _ROAD_HALF_WIDTH_M / d
        left = center - halfw
        right = center + halfw

        cols = self.cols[None, :]
        region = img[self.y_horizon + 1 :, :]

        cover = np.clip(
            np.minimum(cols + 0.5, right[:, None]) - np.maximum(cols - 0.5, left[:, None]),
            0.0,
            1.0,
        )
        cover *= visible[:, None]
        region += (_ROAD - _GROUND) * cover

        line_halfw = np.clip(0.5 * f * _LINE_WIDTH_M / d, 0.5, 3.0)

        def stroke(x0: np.ndarray, on: np.ndarray) -> None:
            cov = np.clip(line_halfw[:, None] + 0.5 - np.abs(cols - x0[:, None]), 0.0, 1.0)
            cov *= (on & visible)[:, None]
            np.maximum(region, _GROUND + (_LINE - _GROUND) * cov, out=region)

        always = np.ones(len(d), dtype=bool)
        stroke(left, always)
        stroke(right, always)
        dash_on = ((odo + d + self.dash_phase) % _DASH_PERIOD_M) < _DASH_PERIOD_M * _DASH_DUTY
        stroke(center, dash_on)

        self._draw_posts(img, c, cam_lat, odo)
        return img

    def _draw_posts(self, img: np.ndarray, c: float, cam_lat: float, odo: float) -> None:
        h, w = img.shape
        f = self.focal_px
        first = math.floor((odo + 4.0 - self.post_phase) / _POST_SPACING_M) + 1
        last = math.floor((odo + _MAX_DRAW_DISTANCE_M - self.post_phase) / _POST_SPACING_M)
        for k in range(first, last + 1):
            dist = k * _POST_SPACING_M + self.post_phase - odo
            if dist < 4.0:
                continue
            y_base = self.y_horizon + f * _CAM_HEIGHT_M / dist
            y_top = y_base - f * _POST_HEIGHT_M / dist
            r0 = max(int(math.ceil(y_top)), 0)
            r1 = min(int(math.floor(y_base)), h - 1)
            if r1 < r0:
                continue
            half_wpx = max(0.5 * f * _POST_WIDTH_M / dist, 0.6)
            lat_center = 0.5 * c * dist * dist - cam_lat
            for side in (-1.0, 1.0):
                x0 = w / 2.0 + f * (lat_center + side * _POST_LATERAL_M) / dist
                c0 = max(int(math.floor(x0 - half_wpx - 1)), 0)
                c1 = min(int(math.ceil(x0 + half_wpx + 1)), w - 1)
                if c1 < c0:
                    continue
                cols = np.arange(c0, c1 + 1, dtype=np.float64)
                cov = np.clip(half_wpx + 0.5 - np.abs(cols - x0), 0.0, 1.0)
                patch = img[r0 : r1 + 1, c0 : c1 + 1]
                np.maximum(patch, _GROUND + (_POST - _GROUND) * cov[None, :], out=patch)


def exposure_for_lighting(lighting: float) -> int:
    return int(np.clip(round(EXPOSURE_TARGET_US / lighting), EXPOSURE_MIN_US, EXPOSURE_MAX_US))


@dataclass
class SimulatedScene:
    meta: RecordingMeta
    aps_frames: list[ApsFrame]
    vehicle_packets: list[StampedPacket]
    events: np.ndarray
    internal_frame_times_us: np.ndarray

    def event_packets(self) -> list[StampedPacket]:
        """Batch events per internal frame interval, stamped at interval end."""
        packets = []
        ts = self.events["device_ts_us"]
        bounds = np.searchsorted(ts, self.internal_frame_times_us, side="right")
        for k in range(len(self.internal_frame_times_us) - 1):
            chunk = self.events[bounds[k] : bounds[k + 1]]
            if len(chunk):
                packets.append(dvs_packet(int(self.internal_frame_times_us[k + 1]) // 1000, chunk))
        return packets

    def packets(self) -> list[StampedPacket]:
        """All packets of the scene, ordered by (host_ts_ms, stream_id)."""
        allp = self.event_packets() + [
            aps_packet(f.device_ts_us // 1000, f) for f in self.aps_frames
        ]
        allp += self.vehicle_packets
        allp.sort(key=lambda p: (p.host_ts_ms, p.stream_id))
        return allp


def generate_scene(
    scenario: ScenarioParams, sensor: SensorParams = SensorParams()
) -> SimulatedScene:
    """Render a scenario into APS frames, vehicle telemetry, and DVS events.

    Deterministic for a given (scenario, sensor) pair: the seed fixes dash
    and post phases, lane wobble, and curvature noise.
    """
    model = _SceneModel(scenario, sensor)
    dur_us = int(round(scenario.duration_s * 1e6))
    internal_dt = 1_000_000 // INTERNAL_FPS
    internal_times = np.arange(0, dur_us, internal_dt, dtype=np.int64)
    if len(internal_times) < 2:
        raise ValueError("scenario too short for the internal frame rate")

    adc_scale = scenario.lighting * ADC_FULL_SCALE

    def internal_frames() -> Iterator[tuple[int, np.ndarray]]:
        for t_us in internal_times:
            yield int(t_us), model.luminance(t_us / 1e6) * adc_scale

    events = events_from_frames(internal_frames(), sensor)

    exposure_us = exposure_for_lighting(scenario.lighting)
    aps_gain = scenario.lighting * exposure_us * (ADC_FULL_SCALE / EXPOSURE_TARGET_US)
    aps_frames = []
    for t_us in range(0, dur_us, 1_000_000 // APS_FPS):
        lum = model.luminance(t_us / 1e6)
        codes = np.clip(np.rint(lum * aps_gain), 0, int(ADC_FULL_SCALE)).astype(np.uint16)
        aps_frames.append(
            ApsFrame(sensor.width, sensor.height, exposure_us, t_us, codes)
        )

    vehicle_packets = []
    for t_ms in range(0, dur_us // 1000, 1000 // VEHICLE_HZ):
        t_s = t_ms / 1000.0
        vehicle_packets.append(
            vehicle_packet(
                t_ms,
                VehicleSample(VehicleChannel.STEERING_WHEEL_ANGLE, model.steering_deg(t_s)),
            )
        )
        vehicle_packets.append(
            vehicle_packet(t_ms, VehicleSample(VehicleChannel.SPEED, model.speed_kmh(t_s)))
        )

    meta = RecordingMeta(
        width=sensor.width,
        height=sensor.height,
        id=scenario.recording_id,
        scenario=scenario.tag,
        created_ms=0,
    )
    return SimulatedScene(meta, aps_frames, vehicle_packets, events, internal_times)
