"""Shared test utilities: finite-difference gradient checking and tiny scenes."""

from __future__ import annotations

import numpy as np

from mtlbench.scene import AgentTrack, AgentType, MapKind, MapPolyline, Scenario
from mtlbench.tensor import Tensor, no_grad


def straight_track(agent_id, n, heading=0.0, speed=5.0, start=(0.0, 0.0),
                   agent_type=AgentType.VEHICLE, rate=10.0):
    t = np.arange(n) / rate
    d = np.array([np.cos(heading), np.sin(heading)])
    centers = np.zeros((n, 3))
    centers[:, :2] = np.asarray(start, dtype=float) + speed * t[:, None] * d[None, :]
    return AgentTrack(
        agent_id,
        agent_type,
        t,
        centers,
        np.tile(speed * d, (n, 1)),
        np.full(n, heading),
        np.tile([4.5, 1.8, 1.5], (n, 1)),
        np.ones(n, dtype=bool),
    )


def tiny_scenario(n_agents=3, n_polylines=5, n_steps=15, current=4, seed=0):
    """Small deterministic scenario for model-level tests."""
    rng = np.random.default_rng(seed)
    tracks = [
        straight_track(
            i,
            n_steps,
            heading=float(rng.uniform(-np.pi, np.pi)),
            speed=float(rng.uniform(2.0, 9.0)),
            start=tuple(rng.uniform(-12.0, 12.0, size=2)),
        )
        for i in range(n_agents)
    ]
    polylines = []
    for k in range(n_polylines):
        base = rng.uniform(-25.0, 25.0, size=2)
        heading = rng.uniform(0.0, 2 * np.pi)
        d = np.array([np.cos(heading), np.sin(heading)])
        pts = np.zeros((12, 3))
        pts[:, :2] = base + np.linspace(0.0, 40.0, 12)[:, None] * d
        polylines.append(MapPolyline(MapKind(k % 3), pts))
    return Scenario("tiny", (n_steps - 1) / 10.0, 10.0, polylines, tracks, 0, current)


def numerical_grad(fn, t: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. every entry of ``t``.

    ``fn`` must re-evaluate the full forward pass reading ``t.data``.
    """
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(fn().data)
            flat[i] = orig - h
            lo = float(fn().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise relative error with an absolute floor for tiny values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def check_gradients(build_loss, params: list[Tensor], h: float = 1e-6, tol: float = 1e-6, floor: float = 1e-3):
    """Compare analytic gradients of ``build_loss()`` against central differences.

    ``build_loss`` runs a fresh forward pass and returns the scalar loss.
    Returns the worst relative error seen.
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_grad(build_loss, p, h=h)
        err = rel_err(analytic, numeric, floor=floor)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch on tensor of shape {p.shape}: rel err {err:.3e}"
    return worst
