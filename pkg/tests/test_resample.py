"""Monotone-interpolation contracts: knot reproduction, linearity, no-overshoot."""

import numpy as np
import pytest

from mtlbench.errors import InputError
from mtlbench.resample import pchip_resample, resample_states
from mtlbench.scene import AgentState


def test_knot_values_reproduced_exactly():
    times = np.array([0.0, 0.3, 0.7, 1.0, 1.5])
    values = np.array([1.0, -2.0, 0.5, 3.0, 2.5])
    out = pchip_resample(times, values, times)
    np.testing.assert_array_equal(out, values)


def test_linear_data_reproduced():
    times = np.linspace(0.0, 1.0, 6)
    values = 2.0 * times
    assert pchip_resample(times, values, np.array([0.5]))[0] == pytest.approx(1.0, abs=1e-12)


def test_monotone_preserved_on_dense_grid():
    rng = np.random.default_rng(0)
    times = np.cumsum(rng.uniform(0.1, 1.0, size=12))
    values = np.cumsum(rng.uniform(0.0, 2.0, size=12))
    q = np.linspace(times[0], times[-1], 1000)
    out = pchip_resample(times, values, q)
    assert (np.diff(out) >= -1e-12).all()


def test_never_overshoots_bracketing_knots():
    rng = np.random.default_rng(1)
    for trial in range(200):
        n = int(rng.integers(4, 12))
        times = np.cumsum(rng.uniform(0.05, 1.0, size=n))
        values = rng.normal(size=n) * 10.0
        q = np.linspace(times[0], times[-1], 500)
        out = pchip_resample(times, values, q)
        hi = np.clip(np.searchsorted(times, q, side="left"), 1, n - 1)
        lo = hi - 1
        assert (out >= np.minimum(values[lo], values[hi])).all()
        assert (out <= np.maximum(values[lo], values[hi])).all()


def test_multichannel():
    times = np.array([0.0, 1.0, 2.0])
    values = np.array([[0.0, 10.0], [1.0, 20.0], [2.0, 30.0]])
    out = pchip_resample(times, values, np.array([0.5, 1.5]))
    np.testing.assert_allclose(out[:, 0], [0.5, 1.5], atol=1e-12)
    np.testing.assert_allclose(out[:, 1], [15.0, 25.0], atol=1e-12)


def test_query_outside_range_rejected():
    times = np.array([0.0, 1.0])
    values = np.array([0.0, 1.0])
    with pytest.raises(InputError):
        pchip_resample(times, values, np.array([1.1]))
    with pytest.raises(InputError):
        pchip_resample(times, values, np.array([-0.1]))


def test_duplicate_times_rejected():
    with pytest.raises(InputError):
        pchip_resample(np.array([0.0, 0.0, 1.0]), np.zeros(3), np.array([0.5]))


def test_decreasing_times_rejected():
    with pytest.raises(InputError):
        pchip_resample(np.array([0.0, 1.0, 0.5]), np.zeros(3), np.array([0.2]))


def make_state(t, x, heading):
    return AgentState(t, np.array([x, 0.0, 0.0]), np.array([1.0, 0.0]), heading, np.array([4.0, 2.0, 1.5]))


def test_resample_states_heading_crosses_seam():
    # headings walk through +pi; naive interpolation would cut across zero
    headings = [3.0, 3.1, -3.1, -3.0]
    states = [make_state(0.1 * i, float(i), h) for i, h in enumerate(headings)]
    out = resample_states(states, np.array([0.15]))
    h = out[0].heading
    assert abs(h) > 3.0  # stayed near the seam
    assert -np.pi < h <= np.pi


def test_resample_states_grid_values():
    states = [make_state(0.0, 0.0, 0.0), make_state(1.0, 10.0, 0.0)]
    out = resample_states(states, np.array([0.0, 0.5, 1.0]))
    assert [s.center[0] for s in out] == pytest.approx([0.0, 5.0, 10.0], abs=1e-12)
