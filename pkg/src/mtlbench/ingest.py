"""Datagram ingestion: pipe-delimited telemetry records assembled into scenarios.

Wire format, one record per datagram, UTF-8, no newline:

    <agent id>|<t>|<x>|<y>|<z>|<vx>|<vy>|<heading>|<length>|<width>|<height>|<type>

with type 1=vehicle, 2=cyclist, 3=pedestrian, and a scenario-end marker
``END|<scenario id>``. Records may arrive out of order; they are reordered by
timestamp before the scenario is finalized and resampled onto the standard
k/rate grid with PCHIP.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, StateError
from .resample import resample_states
from .scene import AgentState, AgentTrack, AgentType, Scenario, wrap_angle

END_MARKER = "END"


@dataclass
class IngestStats:
    records: int = 0
    malformed: int = 0
    dropped_agents: int = 0
    scenarios: int = 0


def parse_record(text: str):
    """Decode one datagram. Returns ('end', scenario_id) or
    ('state', agent_id, agent_type, AgentState). Raises DataFormatError."""
    parts = text.strip().split("|")
    if parts and parts[0] == END_MARKER:
        if len(parts) != 2 or not parts[1]:
            raise DataFormatError(f"bad end marker: {text!r}")
        return ("end", parts[1])
    if len(parts) != 12:
        raise DataFormatError(f"expected 12 fields, got {len(parts)}: {text!r}")
    try:
        agent_id = int(parts[0])
        vals = [float(p) for p in parts[1:11]]
        type_code = int(parts[11])
    except ValueError as exc:
        raise DataFormatError(f"non-numeric field in {text!r}") from exc
    try:
        agent_type = AgentType(type_code)
    except ValueError as exc:
        raise DataFormatError(f"unknown agent type {type_code}") from exc
    t, x, y, z, vx, vy, heading, length, width, height = vals
    state = AgentState(
        t=t,
        center=np.array([x, y, z]),
        velocity=np.array([vx, vy]),
        heading=wrap_angle(heading),
        dims=np.array([length, width, height]),
        valid=True,
    )
    return ("state", agent_id, agent_type, state)


@dataclass
class ScenarioAssembler:
    """Buffers telemetry records and emits a Scenario per end marker.

    All buffered observations are sorted by timestamp at finalize, which
    covers any bounded reordering window on the wire. The focal agent is the
    smallest agent id observed.
    """

    rate: float = 10.0
    history_len: int = 11
    stats: IngestStats = field(default_factory=IngestStats)
    _buffers: dict = field(default_factory=dict)
    _types: dict = field(default_factory=dict)

    def feed(self, datagram: bytes | str):
        """Consume one datagram; returns a Scenario when an end marker lands,
        otherwise None. Malformed records are counted and skipped."""
        text = datagram.decode("utf-8", errors="replace") if isinstance(datagram, bytes) else datagram
        try:
            parsed = parse_record(text)
        except DataFormatError:
            self.stats.malformed += 1
            return None
        if parsed[0] == "end":
            return self._finalize(parsed[1])
        _, agent_id, agent_type, state = parsed
        self.stats.records += 1
        self._buffers.setdefault(agent_id, []).append(state)
        self._types[agent_id] = agent_type
        return None

    def _finalize(self, scenario_id: str):
        buffers, types = self._buffers, self._types
        self._buffers, self._types = {}, {}
        if not buffers:
            return None

        cleaned = {}
        for agent_id, states in buffers.items():
            states.sort(key=lambda s: s.t)
            dedup = {}
            for s in states:  # duplicate timestamps: last record wins
                dedup[s.t] = s
            states = [dedup[t] for t in sorted(dedup)]
            if len(states) < 2:
                self.stats.dropped_agents += 1
                continue
            cleaned[agent_id] = states
        if not cleaned:
            return None

        t_lo = min(states[0].t for states in cleaned.values())
        t_hi = max(states[-1].t for states in cleaned.values())
        k0 = int(np.ceil(t_lo * self.rate - 1e-9))
        k1 = int(np.floor(t_hi * self.rate + 1e-9))
        if k1 - k0 < 1:
            self.stats.dropped_agents += len(cleaned)
            return None
        grid = np.arange(k0, k1 + 1) / self.rate

        tracks = []
        for agent_id in sorted(cleaned):
            states = cleaned[agent_id]
            inside = (grid >= states[0].t - 1e-9) & (grid <= states[-1].t + 1e-9)
            grid_in = np.clip(grid[inside], states[0].t, states[-1].t)
            resampled = resample_states(states, grid_in)
            track = AgentTrack(
                agent_id,
                types[agent_id],
                grid.copy(),
                np.zeros((len(grid), 3)),
                np.zeros((len(grid), 2)),
                np.zeros(len(grid)),
                np.ones((len(grid), 3)),
                np.zeros(len(grid), dtype=bool),
            )
            rows = np.flatnonzero(inside)
            for row, st in zip(rows, resampled):
                track.centers[row] = st.center
                track.velocities[row] = st.velocity
                track.headings[row] = st.heading
                track.dims[row] = st.dims
                track.valid[row] = True
            tracks.append(track)

        duration = (len(grid) - 1) / self.rate
        current = min(self.history_len - 1, len(grid) - 1)
        scenario = Scenario(
            scenario_id=scenario_id,
            duration=duration,
            rate=self.rate,
            polylines=[],
            tracks=tracks,
            focal_id=tracks[0].agent_id,
            current_index=current,
        )
        self.stats.scenarios += 1
        return scenario


class UdpIngestor:
    """Listener that feeds a :class:`ScenarioAssembler` from a local UDP port."""

    def __init__(self, port: int, host: str = "127.0.0.1", rate: float = 10.0, history_len: int = 11):
        self.assembler = ScenarioAssembler(rate=rate, history_len=history_len)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            self._sock.close()
            raise StateError(f"cannot bind UDP {host}:{port}: {exc}") from exc
        self.address = self._sock.getsockname()

    def run(self, max_scenarios: int | None = None, idle_timeout: float | None = None) -> list[Scenario]:
        """Receive until ``max_scenarios`` end markers (or idle timeout)."""
        scenarios = []
        self._sock.settimeout(idle_timeout)
        try:
            while max_scenarios is None or len(scenarios) < max_scenarios:
                try:
                    data, _ = self._sock.recvfrom(65536)
                except socket.timeout:
                    break
                except KeyboardInterrupt:
                    break
                s = self.assembler.feed(data)
                if s is not None:
                    scenarios.append(s)
        finally:
            self._sock.close()
        return scenarios

    @property
    def stats(self) -> IngestStats:
        return self.assembler.stats
