"""Scenario representation: typed map polylines, timestamped agent tracks,
ego-reference normalization and vectorization into padded polyline batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import DegenerateInputError, InputError

AGENT_CHANNELS = 14  # xyz(3) + vel(2) + heading sin/cos(2) + dims(3) + type(3) + time(1)
MAP_CHANNELS = 8  # xyz(3) + direction(2) + kind one-hot(3)


class AgentType(IntEnum):
    VEHICLE = 1
    CYCLIST = 2
    PEDESTRIAN = 3


class MapKind(IntEnum):
    LANE = 0
    EDGE = 1
    CROSSWALK = 2


def wrap_angle(h):
    """Normalize angles to (-pi, pi]."""
    h = np.asarray(h, dtype=np.float64)
    out = np.mod(h + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if out.ndim == 0 else out


@dataclass
class AgentState:
    """One observation of one agent: the unit the ingest wire format carries."""

    t: float
    center: np.ndarray  # (3,) meters
    velocity: np.ndarray  # (2,) m/s
    heading: float  # radians, (-pi, pi]
    dims: np.ndarray  # (3,) length/width/height, meters
    valid: bool = True


@dataclass
class AgentTrack:
    """A full state sequence for one agent on the scenario time base."""

    agent_id: int
    agent_type: AgentType
    t: np.ndarray  # (S,)
    centers: np.ndarray  # (S, 3)
    velocities: np.ndarray  # (S, 2)
    headings: np.ndarray  # (S,)
    dims: np.ndarray  # (S, 3)
    valid: np.ndarray  # (S,) bool

    @staticmethod
    def from_states(agent_id: int, agent_type: AgentType, states: list[AgentState]) -> "AgentTrack":
        return AgentTrack(
            agent_id,
            AgentType(agent_type),
            np.array([s.t for s in states]),
            np.stack([s.center for s in states]).astype(np.float64),
            np.stack([s.velocity for s in states]).astype(np.float64),
            np.array([s.heading for s in states]),
            np.stack([s.dims for s in states]).astype(np.float64),
            np.array([s.valid for s in states], dtype=bool),
        )

    def state(self, i: int) -> AgentState:
        return AgentState(
            float(self.t[i]),
            self.centers[i].copy(),
            self.velocities[i].copy(),
            float(self.headings[i]),
            self.dims[i].copy(),
            bool(self.valid[i]),
        )

    def __len__(self):
        return len(self.t)


@dataclass
class MapPolyline:
    kind: MapKind
    points: np.ndarray  # (P, 3)


@dataclass
class Scenario:
    """Map + agent tracks + the focal-agent designation; the unit of data."""

    scenario_id: str
    duration: float  # seconds
    rate: float  # Hz
    polylines: list[MapPolyline]
    tracks: list[AgentTrack]
    focal_id: int
    current_index: int  # history/future split: states up to here are observed

    def __post_init__(self):
        self.validate()

    def validate(self):
        n_states = int(round(self.duration * self.rate)) + 1
        ids = [tr.agent_id for tr in self.tracks]
        if len(set(ids)) != len(ids):
            raise InputError(f"{self.scenario_id}: duplicate agent ids")
        if self.focal_id not in ids:
            raise InputError(f"{self.scenario_id}: focal agent {self.focal_id} not present")
        for tr in self.tracks:
            if len(tr) != n_states:
                raise InputError(
                    f"{self.scenario_id}: agent {tr.agent_id} has {len(tr)} states, "
                    f"expected duration*rate+1 = {n_states}"
                )
            h = tr.headings[tr.valid]
            if h.size and (h.min() <= -np.pi or h.max() > np.pi):
                raise InputError(f"{self.scenario_id}: agent {tr.agent_id} headings not normalized")
            if tr.valid.any() and (tr.dims[tr.valid] <= 0.0).any():
                raise InputError(f"{self.scenario_id}: agent {tr.agent_id} has non-positive dims")
        if not 0 <= self.current_index < n_states:
            raise InputError(f"{self.scenario_id}: current index {self.current_index} out of range")

    @property
    def times(self) -> np.ndarray:
        return self.tracks[0].t

    @property
    def num_states(self) -> int:
        return int(round(self.duration * self.rate)) + 1

    def focal_track(self) -> AgentTrack:
        for tr in self.tracks:
            if tr.agent_id == self.focal_id:
                return tr
        raise InputError(f"{self.scenario_id}: focal agent missing")


# -- ego-reference frame -------------------------------------------------------


def ego_frame_of(s: Scenario):
    """The focal agent's pose at the current step: (xy origin, heading)."""
    focal = s.focal_track()
    if not focal.valid[s.current_index]:
        raise DegenerateInputError(f"{s.scenario_id}: focal agent invalid at current step")
    return focal.centers[s.current_index, :2].copy(), float(focal.headings[s.current_index])


def _rotation(theta: float) -> np.ndarray:
    c, si = np.cos(theta), np.sin(theta)
    return np.array([[c, -si], [si, c]])


def transform_scenario(s: Scenario, origin_xy: np.ndarray, heading: float) -> Scenario:
    """Express ``s`` in the frame anchored at ``origin_xy`` with ``heading``
    along +x. Positions translate and rotate, velocities and headings rotate."""
    rot = _rotation(-heading)
    tracks = []
    for tr in s.tracks:
        centers = tr.centers.copy()
        centers[:, :2] = (centers[:, :2] - origin_xy) @ rot.T
        tracks.append(
            AgentTrack(
                tr.agent_id,
                tr.agent_type,
                tr.t.copy(),
                centers,
                tr.velocities @ rot.T,
                wrap_angle(tr.headings - heading),
                tr.dims.copy(),
                tr.valid.copy(),
            )
        )
    polylines = []
    for pl in s.polylines:
        pts = pl.points.copy()
        pts[:, :2] = (pts[:, :2] - origin_xy) @ rot.T
        polylines.append(MapPolyline(pl.kind, pts))
    return Scenario(s.scenario_id, s.duration, s.rate, polylines, tracks, s.focal_id, s.current_index)


def untransform_scenario(s: Scenario, origin_xy: np.ndarray, heading: float) -> Scenario:
    """Inverse of :func:`transform_scenario` for the same frame."""
    rot = _rotation(heading)
    tracks = []
    for tr in s.tracks:
        centers = tr.centers.copy()
        centers[:, :2] = centers[:, :2] @ rot.T + origin_xy
        tracks.append(
            AgentTrack(
                tr.agent_id,
                tr.agent_type,
                tr.t.copy(),
                centers,
                tr.velocities @ rot.T,
                wrap_angle(tr.headings + heading),
                tr.dims.copy(),
                tr.valid.copy(),
            )
        )
    polylines = []
    for pl in s.polylines:
        pts = pl.points.copy()
        pts[:, :2] = pts[:, :2] @ rot.T + origin_xy
        polylines.append(MapPolyline(pl.kind, pts))
    return Scenario(s.scenario_id, s.duration, s.rate, polylines, tracks, s.focal_id, s.current_index)


def to_ego_frame(s: Scenario) -> Scenario:
    """Recenter on the focal agent: its current pose becomes origin/heading 0."""
    origin, heading = ego_frame_of(s)
    return transform_scenario(s, origin, heading)


# -- vectorization --------------------------------------------------------------


@dataclass
class VectorizeConfig:
    history_len: int = 11  # steps, current included
    future_len: int = 30  # steps after the current one
    map_segment_len: int = 20  # points per map token


@dataclass
class PolylineBatch:
    """Padded (N, P, C) features with a per-entry validity mask."""

    data: np.ndarray
    mask: np.ndarray
    kind: str  # "agents" or "map"


@dataclass
class SceneInputs:
    """Everything the model consumes for one scenario, in the ego frame."""

    agents: PolylineBatch  # (N_a, history, AGENT_CHANNELS)
    map: PolylineBatch  # (N_m, segment, MAP_CHANNELS)
    agent_positions: np.ndarray  # (N_a, 2) current centers
    map_positions: np.ndarray  # (N_m, 2) segment centroids
    gt_future: np.ndarray  # (T, 2) focal future positions
    gt_headings: np.ndarray  # (T,) focal future headings
    gt_dense: np.ndarray  # (N_a, T, 4) future position+velocity, all agents
    gt_dense_mask: np.ndarray  # (N_a, T)
    focal_speed: float  # |v| at the current step
    scenario_id: str = ""
    cache: dict = field(default_factory=dict, repr=False, compare=False)  # derived constants


def _one_hot(index: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[index] = 1.0
    return v


def vectorize(s: Scenario, config: VectorizeConfig) -> SceneInputs:
    """Turn an ego-frame scenario into padded agent/map batches plus targets.

    The focal agent occupies row 0 of the agent batch. Map polylines are cut
    into fixed-length segments, each becoming one map token.
    """
    if not s.tracks:
        raise InputError(f"{s.scenario_id}: no agents to vectorize")
    h, fut = config.history_len, config.future_len
    cur = s.current_index
    if cur + fut > s.num_states - 1:
        raise InputError(
            f"{s.scenario_id}: needs {fut} future steps after index {cur}, "
            f"but only {s.num_states - 1 - cur} available"
        )

    tracks = [s.focal_track()] + [tr for tr in s.tracks if tr.agent_id != s.focal_id]
    n_a = len(tracks)
    rate = s.rate

    agents = np.zeros((n_a, h, AGENT_CHANNELS))
    mask_a = np.zeros((n_a, h), dtype=bool)
    positions_a = np.zeros((n_a, 2))
    dense = np.zeros((n_a, fut, 4))
    dense_mask = np.zeros((n_a, fut), dtype=bool)

    for row, tr in enumerate(tracks):
        type_hot = _one_hot(int(tr.agent_type) - 1, 3)
        for p in range(h):
            idx = cur - h + 1 + p
            if idx < 0 or not tr.valid[idx]:
                continue
            mask_a[row, p] = True
            agents[row, p, 0:3] = tr.centers[idx]
            agents[row, p, 3:5] = tr.velocities[idx]
            agents[row, p, 5] = np.sin(tr.headings[idx])
            agents[row, p, 6] = np.cos(tr.headings[idx])
            agents[row, p, 7:10] = tr.dims[idx]
            agents[row, p, 10:13] = type_hot
            agents[row, p, 13] = (idx - cur) / rate
        positions_a[row] = tr.centers[cur, :2]
        fsl = slice(cur + 1, cur + 1 + fut)
        dense[row, :, 0:2] = tr.centers[fsl, :2]
        dense[row, :, 2:4] = tr.velocities[fsl]
        dense_mask[row] = tr.valid[fsl]

    if not mask_a.any(axis=1).all():
        bad = [tracks[i].agent_id for i in np.flatnonzero(~mask_a.any(axis=1))]
        raise DegenerateInputError(f"{s.scenario_id}: agents {bad} have no valid history")

    focal = tracks[0]
    if not focal.valid[cur + 1 : cur + 1 + fut].all():
        raise DegenerateInputError(f"{s.scenario_id}: focal agent future is not fully observed")
    gt_future = focal.centers[cur + 1 : cur + 1 + fut, :2].copy()
    gt_headings = focal.headings[cur + 1 : cur + 1 + fut].copy()
    focal_speed = float(np.linalg.norm(focal.velocities[cur]))

    seg = config.map_segment_len
    seg_rows = []
    for pl in s.polylines:
        pts = pl.points
        dirs = np.zeros((len(pts), 2))
        if len(pts) > 1:
            diffs = np.diff(pts[:, :2], axis=0)
            norms = np.linalg.norm(diffs, axis=1, keepdims=True)
            diffs = np.divide(diffs, norms, out=np.zeros_like(diffs), where=norms > 0)
            dirs[:-1] = diffs
            dirs[-1] = diffs[-1]
        kind_hot = _one_hot(int(pl.kind), 3)
        for start in range(0, len(pts), seg):
            chunk = pts[start : start + seg]
            cdirs = dirs[start : start + seg]
            row = np.zeros((seg, MAP_CHANNELS))
            row[: len(chunk), 0:3] = chunk
            row[: len(chunk), 3:5] = cdirs
            row[: len(chunk), 5:8] = kind_hot
            m = np.zeros(seg, dtype=bool)
            m[: len(chunk)] = True
            seg_rows.append((row, m, chunk[:, :2].mean(axis=0)))

    n_m = len(seg_rows)
    map_data = np.zeros((n_m, seg, MAP_CHANNELS))
    mask_m = np.zeros((n_m, seg), dtype=bool)
    positions_m = np.zeros((n_m, 2))
    for i, (row, m, centroid) in enumerate(seg_rows):
        map_data[i], mask_m[i], positions_m[i] = row, m, centroid

    return SceneInputs(
        agents=PolylineBatch(agents, mask_a, "agents"),
        map=PolylineBatch(map_data, mask_m, "map"),
        agent_positions=positions_a,
        map_positions=positions_m,
        gt_future=gt_future,
        gt_headings=gt_headings,
        gt_dense=dense,
        gt_dense_mask=dense_mask,
        focal_speed=focal_speed,
        scenario_id=s.scenario_id,
    )


def prepare(s: Scenario, config: VectorizeConfig) -> SceneInputs:
    """Ego-normalize then vectorize; the standard path from dataset to model."""
    return vectorize(to_ego_frame(s), config)
