"""Synthetic driving scenarios with a controllable source/target domain shift.

Two presets produce structurally similar but distributionally different data:

* ``source_like`` ~ a large, messy domain: mixed agent types (70/7/23
  vehicle/cyclist/pedestrian), moderate speeds, tighter curves, busier maps
  with edges and crosswalks, more agents per scene.
* ``target_like`` ~ a small simulated domain: vehicles only, faster and more
  uniform speeds, gentler curves, sparse maps, fewer agents.

Scenarios are deterministic per (seed, preset, index) so datasets are
reproducible byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scene import AgentTrack, AgentType, MapKind, MapPolyline, Scenario, wrap_angle

PRESET_CODES = {"source_like": 1, "target_like": 2}


@dataclass
class PresetParams:
    layouts: tuple[str, ...]
    layout_probs: tuple[float, ...]
    agents_range: tuple[int, int]  # inclusive
    type_probs: tuple[float, float, float]  # vehicle, cyclist, pedestrian
    vehicle_speed: tuple[float, float, float, float]  # mean, std, lo, hi
    cyclist_speed: tuple[float, float, float, float]
    pedestrian_speed: tuple[float, float, float, float]
    curve_radius: tuple[float, float]
    lane_width: float
    point_spacing: float
    road_length: tuple[float, float]
    crosswalks: bool
    double_edges: bool
    accel_noise: float
    appear_prob: float  # chance a neighbor enters mid-history


PRESETS: dict[str, PresetParams] = {
    "source_like": PresetParams(
        layouts=("straight", "curve", "intersection"),
        layout_probs=(0.40, 0.30, 0.30),
        agents_range=(4, 8),
        type_probs=(0.70, 0.07, 0.23),
        vehicle_speed=(9.0, 2.5, 2.0, 16.0),
        cyclist_speed=(4.0, 1.0, 1.0, 7.0),
        pedestrian_speed=(1.3, 0.3, 0.4, 2.2),
        curve_radius=(40.0, 120.0),
        lane_width=3.7,
        point_spacing=3.0,
        road_length=(150.0, 220.0),
        crosswalks=True,
        double_edges=True,
        accel_noise=0.30,
        appear_prob=0.15,
    ),
    "target_like": PresetParams(
        layouts=("straight", "curve", "intersection"),
        layout_probs=(0.25, 0.45, 0.30),
        agents_range=(2, 4),
        type_probs=(1.0, 0.0, 0.0),
        vehicle_speed=(13.5, 1.8, 6.0, 20.0),
        cyclist_speed=(4.0, 1.0, 1.0, 7.0),
        pedestrian_speed=(1.3, 0.3, 0.4, 2.2),
        curve_radius=(80.0, 250.0),
        lane_width=3.25,
        point_spacing=5.0,
        road_length=(120.0, 180.0),
        crosswalks=False,
        double_edges=False,
        accel_noise=0.15,
        appear_prob=0.10,
    ),
}


def _sample_speed(rng, dist):
    mean, std, lo, hi = dist
    return float(np.clip(rng.normal(mean, std), lo, hi))


def _dims_for(rng, agent_type: AgentType) -> np.ndarray:
    if agent_type == AgentType.VEHICLE:
        base = np.array([4.8, 1.9, 1.6])
    elif agent_type == AgentType.CYCLIST:
        base = np.array([1.8, 0.6, 1.7])
    else:
        base = np.array([0.6, 0.6, 1.8])
    return base * rng.uniform(0.9, 1.1, size=3)


def _line(p0, heading, length, spacing) -> np.ndarray:
    n = max(2, int(length / spacing) + 1)
    s = np.linspace(0.0, length, n)
    d = np.array([np.cos(heading), np.sin(heading)])
    pts = np.zeros((n, 3))
    pts[:, :2] = np.asarray(p0)[None, :] + s[:, None] * d[None, :]
    return pts


def _arc(center, radius, a0, a1, spacing) -> np.ndarray:
    length = abs(a1 - a0) * radius
    n = max(2, int(length / spacing) + 1)
    ang = np.linspace(a0, a1, n)
    pts = np.zeros((n, 3))
    pts[:, 0] = center[0] + radius * np.cos(ang)
    pts[:, 1] = center[1] + radius * np.sin(ang)
    return pts


def _rollout(rng, p0, heading0, speeds, turn_rates, dt):
    """Explicit kinematic integration; returns centers/velocities/headings."""
    n = len(speeds)
    headings = np.empty(n)
    centers = np.zeros((n, 3))
    headings[0] = heading0
    centers[0, :2] = p0
    for i in range(1, n):
        omega = turn_rates[i - 1] if speeds[i - 1] > 0.05 else 0.0
        headings[i] = headings[i - 1] + omega * dt
        step = speeds[i - 1] * dt
        centers[i, :2] = centers[i - 1, :2] + step * np.array(
            [np.cos(headings[i - 1]), np.sin(headings[i - 1])]
        )
    velocities = speeds[:, None] * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    return centers, velocities, wrap_angle(headings)


def _speed_profile(rng, params, v, n, dt):
    """Cruise with small smooth acceleration noise, never below zero."""
    accel = rng.normal(0.0, params.accel_noise, size=n) * dt
    return np.clip(v + np.cumsum(accel), 0.0, None)


def _stop_turn_profiles(rng, v, n, dt, direction):
    """Approach, brake to a stop, wait, then pull away turning 90 degrees."""
    t_brake_end = rng.uniform(0.8, 1.6)
    t_wait = rng.uniform(0.3, 0.9)
    t_turn = rng.uniform(1.6, 2.4)
    v_turn = max(2.0, 0.45 * v)
    speeds = np.zeros(n)
    turns = np.zeros(n)
    for i in range(n):
        t = i * dt
        if t < t_brake_end:
            speeds[i] = v * (1.0 - t / t_brake_end)
        elif t < t_brake_end + t_wait:
            speeds[i] = 0.0
        else:
            u = t - t_brake_end - t_wait
            speeds[i] = min(v_turn, v_turn * u / 0.8 + 0.3)
            if u < t_turn:
                turns[i] = direction * (np.pi / 2.0) / t_turn
    return speeds, turns


def _build_map(rng, params: PresetParams, layout: str):
    """Road polylines in a local frame plus lane anchors for placing agents.

    Anchors are (point, heading, tag) tuples; tags mark intersection
    approaches so agents there can stop and turn.
    """
    w = params.lane_width
    sp = params.point_spacing
    length = rng.uniform(*params.road_length)
    polylines: list[MapPolyline] = []
    anchors: list[tuple[np.ndarray, float, str]] = []

    if layout == "straight":
        half = length / 2.0
        for side, head in ((-w / 2.0, 0.0), (w / 2.0, np.pi)):
            start = np.array([-half, side]) if head == 0.0 else np.array([half, side])
            polylines.append(MapPolyline(MapKind.LANE, _line(start, head, length, sp)))
            for frac in (0.25, 0.45, 0.65):
                s = frac * length
                d = np.array([np.cos(head), np.sin(head)])
                anchors.append((start + s * d, head, "cruise"))
        edge_offsets = [-(w + 1.0), w + 1.0] if params.double_edges else [-(w + 1.0)]
        for off in edge_offsets:
            polylines.append(MapPolyline(MapKind.EDGE, _line(np.array([-half, off]), 0.0, length, sp)))

    elif layout == "curve":
        radius = rng.uniform(*params.curve_radius)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        span = min(np.pi * 0.9, length / radius)
        center = np.array([0.0, sign * radius])
        a0 = -sign * np.pi / 2.0
        for lane_off, direction in ((-w / 2.0, 1.0), (w / 2.0, -1.0)):
            r = radius - sign * lane_off
            a_end = a0 + sign * span
            pts = _arc(center, r, a0, a_end, sp) if direction > 0 else _arc(center, r, a_end, a0, sp)
            polylines.append(MapPolyline(MapKind.LANE, pts))
            for frac in (0.2, 0.4):
                ang = a0 + sign * span * frac if direction > 0 else a0 + sign * span * (1.0 - frac)
                p = center + r * np.array([np.cos(ang), np.sin(ang)])
                head = ang + direction * sign * np.pi / 2.0
                anchors.append((p, wrap_angle(head), f"arc:{direction * sign * 1.0 / r:.6f}"))
        edge_offsets = [-(w + 1.0), w + 1.0] if params.double_edges else [-(w + 1.0)]
        for off in edge_offsets:
            r = radius - sign * off
            polylines.append(MapPolyline(MapKind.EDGE, _arc(center, r, a0, a0 + sign * span, sp)))

    else:  # intersection: two perpendicular roads crossing at the origin
        arm = length / 2.0
        box = w + 2.0
        for axis_heading in (0.0, np.pi / 2.0):
            d = np.array([np.cos(axis_heading), np.sin(axis_heading)])
            left = np.array([-d[1], d[0]])
            for side_sign, head in ((-1.0, axis_heading), (1.0, axis_heading + np.pi)):
                off = side_sign * w / 2.0 * left
                start = -d * arm + off if side_sign < 0 else d * arm + off
                polylines.append(
                    MapPolyline(MapKind.LANE, _line(start, wrap_angle(head), 2.0 * arm, sp))
                )
                approach = -np.array([np.cos(head), np.sin(head)]) * rng.uniform(10.0, 22.0) + off
                anchors.append((approach, wrap_angle(head), "approach"))
                far = -np.array([np.cos(head), np.sin(head)]) * rng.uniform(0.45, 0.8) * arm + off
                anchors.append((far, wrap_angle(head), "cruise"))
            if params.double_edges:
                for off in (-(w + 1.0), w + 1.0):
                    for seg_sign in (-1.0, 1.0):
                        start = (seg_sign * box) * d + off * left
                        end_len = arm - box
                        polylines.append(
                            MapPolyline(
                                MapKind.EDGE,
                                _line(start, axis_heading if seg_sign > 0 else axis_heading + np.pi, end_len, sp),
                            )
                        )
        if params.crosswalks:
            for sign in (-1.0, 1.0):
                start = np.array([sign * box, -(w + 1.0)])
                polylines.append(MapPolyline(MapKind.CROSSWALK, _line(start, np.pi / 2.0, 2.0 * (w + 1.0), 1.5)))

    return polylines, anchors


def _agent_track(rng, params, agent_id, agent_type, anchor, n_steps, dt):
    point, heading, tag = anchor
    if agent_type == AgentType.VEHICLE:
        v = _sample_speed(rng, params.vehicle_speed)
    elif agent_type == AgentType.CYCLIST:
        v = _sample_speed(rng, params.cyclist_speed)
    else:
        v = _sample_speed(rng, params.pedestrian_speed)

    jitter = rng.normal(0.0, 0.4, size=2)
    p0 = np.asarray(point) + jitter
    h0 = heading + rng.normal(0.0, 0.03)

    if tag == "approach" and agent_type == AgentType.VEHICLE and rng.random() < 0.65:
        direction = 1.0 if rng.random() < 0.5 else -1.0
        speeds, turns = _stop_turn_profiles(rng, v, n_steps, dt, direction)
    elif tag.startswith("arc:") and agent_type == AgentType.VEHICLE:
        curvature = float(tag.split(":")[1])
        speeds = _speed_profile(rng, params, v, n_steps, dt)
        turns = speeds * curvature
    else:
        if agent_type == AgentType.PEDESTRIAN and rng.random() < 0.5:
            h0 = heading + rng.choice([np.pi / 2.0, -np.pi / 2.0]) + rng.normal(0.0, 0.1)
        speeds = _speed_profile(rng, params, v, n_steps, dt)
        turns = np.full(n_steps, rng.normal(0.0, 0.01))

    centers, velocities, headings = _rollout(rng, p0, wrap_angle(h0), speeds, turns, dt)
    dims = np.tile(_dims_for(rng, agent_type), (n_steps, 1))
    return AgentTrack(
        agent_id,
        agent_type,
        np.arange(n_steps) * dt,
        centers,
        velocities,
        headings,
        dims,
        np.ones(n_steps, dtype=bool),
    )


def generate_scenario(seed: int, preset: str, index: int, rate: float = 10.0,
                      history_len: int = 11, future_len: int = 30) -> Scenario:
    """One deterministic scenario for (seed, preset, index)."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; valid: {sorted(PRESETS)}")
    params = PRESETS[preset]
    rng = np.random.default_rng([seed, PRESET_CODES[preset], index])
    n_steps = history_len + future_len
    dt = 1.0 / rate
    duration = (n_steps - 1) * dt
    current = history_len - 1

    layout = str(rng.choice(params.layouts, p=params.layout_probs))
    polylines, anchors = _build_map(rng, params, layout)

    n_agents = int(rng.integers(params.agents_range[0], params.agents_range[1] + 1))
    anchor_order = rng.permutation(len(anchors))
    tracks = []
    for i in range(n_agents):
        agent_type = AgentType(int(rng.choice([1, 2, 3], p=params.type_probs)))
        anchor = anchors[anchor_order[i % len(anchors)]]
        track = _agent_track(rng, params, i, agent_type, anchor, n_steps, dt)
        if i > 0 and rng.random() < params.appear_prob:
            appear = int(rng.integers(1, max(2, history_len - 1)))
            track.valid[:appear] = False
            track.centers[:appear] = 0.0
            track.velocities[:appear] = 0.0
            track.headings[:appear] = 0.0
            track.dims[:appear] = 1.0
        tracks.append(track)

    # random world pose so ego normalization has real work to do
    theta = rng.uniform(0.0, 2.0 * np.pi)
    offset = rng.uniform(-200.0, 200.0, size=2)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    for tr in tracks:
        tr.centers[:, :2] = tr.centers[:, :2] @ rot.T + offset
        tr.velocities[:] = tr.velocities @ rot.T
        tr.headings[:] = wrap_angle(tr.headings + theta)
    for pl in polylines:
        pl.points[:, :2] = pl.points[:, :2] @ rot.T + offset

    return Scenario(
        scenario_id=f"{preset}-{seed}-{index}",
        duration=duration,
        rate=rate,
        polylines=polylines,
        tracks=tracks,
        focal_id=0,
        current_index=current,
    )


def generate_synthetic(seed: int, preset: str, count: int, rate: float = 10.0,
                       history_len: int = 11, future_len: int = 30) -> list[Scenario]:
    """Deterministic batch of scenarios; element i depends only on (seed, preset, i)."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    return [
        generate_scenario(seed, preset, i, rate=rate, history_len=history_len, future_len=future_len)
        for i in range(count)
    ]
