"""Monotone cubic Hermite (PCHIP) resampling of sampled channels.

Backed by scipy's shape-preserving PCHIP. Knot queries return the knot value
bit-exactly, and every output is clamped to the range spanned by its two
bracketing knots, making the no-overshoot contract structural.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InputError
from .scene import AgentState, wrap_angle


def pchip_resample(times: np.ndarray, values: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Evaluate the monotone cubic interpolant of (times, values) at ``query``.

    ``times`` must be strictly increasing and every query must lie inside
    [times[0], times[-1]]; this is a resampler, not an extrapolator.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if times.ndim != 1 or times.size != values.shape[0]:
        raise InputError(f"times {times.shape} incompatible with values {values.shape}")
    if times.size < 2:
        raise InputError("need at least two samples to interpolate")
    dt = np.diff(times)
    if (dt == 0).any():
        raise InputError("duplicate sample times")
    if (dt < 0).any():
        raise InputError("sample times must be strictly increasing")
    if query.size and (query.min() < times[0] or query.max() > times[-1]):
        raise InputError(
            f"query range [{query.min():.6g}, {query.max():.6g}] outside "
            f"sample range [{times[0]:.6g}, {times[-1]:.6g}]"
        )

    out = PchipInterpolator(times, values, axis=0)(query)

    # clamp to the bracketing-knot range, channel by channel
    hi_idx = np.clip(np.searchsorted(times, query, side="left"), 1, times.size - 1)
    lo_idx = hi_idx - 1
    lo = np.minimum(values[lo_idx], values[hi_idx])
    hi = np.maximum(values[lo_idx], values[hi_idx])
    out = np.clip(out, lo, hi)

    # exact knot reproduction
    knot_pos = np.searchsorted(times, query)
    knot_pos = np.clip(knot_pos, 0, times.size - 1)
    exact = times[knot_pos] == query
    if exact.any():
        out[exact] = values[knot_pos[exact]]
    return out


def resample_states(states: list[AgentState], query_times: np.ndarray) -> list[AgentState]:
    """Resample an observation sequence onto ``query_times``.

    Position and velocity channels interpolate directly; heading is unwrapped
    first and renormalized after, so tracks crossing the +-pi seam stay smooth.
    Dims are carried from the nearest-from-below sample.
    """
    if len(states) < 2:
        raise InputError("need at least two observations to resample")
    times = np.array([s.t for s in states])
    channels = np.stack([np.concatenate([s.center, s.velocity]) for s in states])
    headings = np.unwrap(np.array([s.heading for s in states]))
    query_times = np.asarray(query_times, dtype=np.float64)

    smooth = pchip_resample(times, channels, query_times)
    new_heading = wrap_angle(pchip_resample(times, headings, query_times))

    dim_idx = np.clip(np.searchsorted(times, query_times, side="right") - 1, 0, len(states) - 1)
    out = []
    for i, t in enumerate(query_times):
        out.append(
            AgentState(
                t=float(t),
                center=smooth[i, 0:3].copy(),
                velocity=smooth[i, 3:5].copy(),
                heading=float(new_heading[i]),
                dims=states[int(dim_idx[i])].dims.copy(),
                valid=True,
            )
        )
    return out
