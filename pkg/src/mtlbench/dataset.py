"""Dataset files: scenario serialization plus persisted, seeded split assignment."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import DATASET_VERSION, Cursor, read_container, write_container
from .errors import ConfigError, DataFormatError
from .scene import AgentTrack, AgentType, MapKind, MapPolyline, Scenario

ROLES = ("source", "target")
DEFAULT_FRACS = {"source": (0.0767, 0.0767), "target": (0.15, 0.15)}


@dataclass
class DatasetHandle:
    role: str
    count: int
    seed: int
    splits: dict[str, list[int]]  # train/val/test -> scenario indices

    def split_sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.splits.items()}


def make_splits(count: int, role: str, seed: int) -> dict[str, list[int]]:
    """Seeded disjoint-and-exhaustive train/val/test assignment."""
    if role not in ROLES:
        raise ConfigError(f"unknown dataset role {role!r}; valid: {ROLES}")
    val_frac, test_frac = DEFAULT_FRACS[role]
    n_val = int(round(count * val_frac))
    n_test = int(round(count * test_frac))
    if n_val + n_test >= count:
        raise ConfigError(f"dataset of {count} too small for validation/test fractions")
    perm = np.random.default_rng(seed).permutation(count)
    return {
        "val": sorted(int(i) for i in perm[:n_val]),
        "test": sorted(int(i) for i in perm[n_val : n_val + n_test]),
        "train": sorted(int(i) for i in perm[n_val + n_test :]),
    }


# -- scenario codec -------------------------------------------------------------


def _pack_scenario(s: Scenario) -> bytes:
    out = bytearray()
    sid = s.scenario_id.encode("utf-8")
    out += struct.pack("<H", len(sid)) + sid
    out += struct.pack("<ddIq", s.duration, s.rate, s.current_index, s.focal_id)
    out += struct.pack("<I", len(s.polylines))
    for pl in s.polylines:
        out += struct.pack("<BI", int(pl.kind), len(pl.points))
        out += np.ascontiguousarray(pl.points, dtype=np.float64).tobytes()
    out += struct.pack("<I", len(s.tracks))
    for tr in s.tracks:
        out += struct.pack("<qBI", tr.agent_id, int(tr.agent_type), len(tr))
        for arr in (tr.t, tr.centers, tr.velocities, tr.headings, tr.dims):
            out += np.ascontiguousarray(arr, dtype=np.float64).tobytes()
        out += np.ascontiguousarray(tr.valid, dtype=np.uint8).tobytes()
    return bytes(out)


def _unpack_scenario(buf: bytes) -> Scenario:
    cur = Cursor(buf)
    (id_len,) = cur.unpack("<H")
    sid = cur.take(id_len).decode("utf-8")
    duration, rate, current_index, focal_id = cur.unpack("<ddIq")
    (n_poly,) = cur.unpack("<I")
    polylines = []
    for _ in range(n_poly):
        kind, n_pts = cur.unpack("<BI")
        pts = np.frombuffer(cur.take(n_pts * 3 * 8), dtype=np.float64).reshape(n_pts, 3).copy()
        polylines.append(MapPolyline(MapKind(kind), pts))
    (n_tracks,) = cur.unpack("<I")
    tracks = []
    for _ in range(n_tracks):
        agent_id, agent_type, n = cur.unpack("<qBI")
        t = np.frombuffer(cur.take(n * 8), dtype=np.float64).copy()
        centers = np.frombuffer(cur.take(n * 3 * 8), dtype=np.float64).reshape(n, 3).copy()
        velocities = np.frombuffer(cur.take(n * 2 * 8), dtype=np.float64).reshape(n, 2).copy()
        headings = np.frombuffer(cur.take(n * 8), dtype=np.float64).copy()
        dims = np.frombuffer(cur.take(n * 3 * 8), dtype=np.float64).reshape(n, 3).copy()
        valid = np.frombuffer(cur.take(n), dtype=np.uint8).astype(bool)
        tracks.append(AgentTrack(agent_id, AgentType(agent_type), t, centers, velocities, headings, dims, valid))
    if not cur.done():
        raise DataFormatError(f"scenario {sid}: trailing bytes")
    return Scenario(sid, duration, rate, polylines, tracks, focal_id, current_index)


# -- dataset files ---------------------------------------------------------------


def save_dataset(path, scenarios: list[Scenario], role: str, seed: int,
                 splits: dict[str, list[int]] | None = None) -> DatasetHandle:
    """Write scenarios plus their (seeded, persisted) split assignment."""
    if splits is None:
        splits = make_splits(len(scenarios), role, seed)
    meta = bytearray()
    meta += struct.pack("<BQ", ROLES.index(role), seed)
    for key in ("train", "val", "test"):
        idx = splits[key]
        meta += struct.pack("<I", len(idx))
        meta += np.asarray(idx, dtype=np.int64).tobytes()
    records = [bytes(meta)] + [_pack_scenario(s) for s in scenarios]
    write_container(path, DATASET_VERSION, records)
    return DatasetHandle(role, len(scenarios), seed, splits)


def load_dataset(path) -> tuple[list[Scenario], DatasetHandle]:
    records = read_container(path, DATASET_VERSION)
    if not records:
        raise DataFormatError(f"{path}: missing dataset metadata record")
    cur = Cursor(records[0])
    role_idx, seed = cur.unpack("<BQ")
    splits = {}
    for key in ("train", "val", "test"):
        (n,) = cur.unpack("<I")
        splits[key] = np.frombuffer(cur.take(n * 8), dtype=np.int64).tolist()
    scenarios = [_unpack_scenario(rec) for rec in records[1:]]
    handle = DatasetHandle(ROLES[role_idx], len(scenarios), seed, splits)
    all_idx = sorted(splits["train"] + splits["val"] + splits["test"])
    if all_idx != list(range(len(scenarios))):
        raise DataFormatError(f"{path}: splits are not a partition of the scenarios")
    return scenarios, handle


def split_scenarios(scenarios: list[Scenario], handle: DatasetHandle, split: str) -> list[Scenario]:
    if split not in handle.splits:
        raise ConfigError(f"unknown split {split!r}")
    return [scenarios[i] for i in handle.splits[split]]
