"""Fast-sweeping travel times against geometric oracles.

For constant c the solution is sqrt(c) times the Euclidean distance; for a
laterally uniform layered medium the vertical ray through the source is a
symmetry geodesic, so on-axis travel times are the layer sums — both are
closed forms the sweeps must hit.  The first-order scheme's global error is
O(h) off-axis (the asserts pin the measured level with headroom).
"""

import numpy as np
import pytest

from convexwave.eikonal import SOURCE_RADIUS_IN_H, TravelTime, fast_sweep
from convexwave.errors import EikonalError
from convexwave.grid import Grid3, ScalarField

SRC = (0.0, 0.0, -1.0)


def tall_grid(h):
    n = int(round(2.0 / h)) + 1
    m = int(round(3.0 / h)) + 1
    return Grid3((-1.0, -1.0, -1.0), h, (n, n, m))


def test_constant_speed_distance():
    g = tall_grid(1 / 16)
    tt = fast_sweep(ScalarField(g, np.ones(g.dims)), SRC)
    x, y, z = g.meshgrid()
    dist = np.sqrt(x**2 + y**2 + (z + 1.0) ** 2)
    err = np.abs(tt.tau.values - dist)
    # axis-aligned rays are exact; the worst diagonal error is O(h)
    assert err[g.index_of((0, 0, 1.0))] < 1e-9
    assert err[g.index_of((0, 0, -1.0))] < 1e-9
    assert err.max() < 0.11
    assert tt.residual < 1e-8 and tt.cycles <= 5


def test_constant_speed_error_shrinks_with_h():
    errs = []
    for h in (1 / 8, 1 / 16):
        g = tall_grid(h)
        tt = fast_sweep(ScalarField(g, np.ones(g.dims)), SRC)
        x, y, z = g.meshgrid()
        errs.append(np.abs(tt.tau.values
                           - np.sqrt(x**2 + y**2 + (z + 1.0) ** 2)).max())
    assert errs[1] < 0.8 * errs[0]


def test_constant_speed_scaling():
    # |grad tau|^2 = c: scaling c by 4 doubles every travel time
    g = tall_grid(1 / 8)
    t1 = fast_sweep(ScalarField(g, np.ones(g.dims)), SRC)
    t4 = fast_sweep(ScalarField(g, np.full(g.dims, 4.0)), SRC)
    assert np.abs(t4.tau.values - 2.0 * t1.tau.values).max() < 1e-9


def test_layered_medium_on_axis():
    g = tall_grid(1 / 16)
    z = g.meshgrid()[2]
    c = np.ones(g.dims)
    c[:, :, z[0, 0, :] > 1e-9] = 4.0  # slower half-space above z = 0
    tt = fast_sweep(ScalarField(g, c), SRC)
    # vertical ray: 1 time unit to z=0, then slowness 2 above
    for zq, exact in [(0.0, 1.0), (0.5, 2.0), (1.0, 3.0), (2.0, 5.0)]:
        got = tt.tau.values[g.index_of((0.0, 0.0, zq))]
        assert abs(got - exact) < 1e-6, (zq, got)
    # slower region only ever delays arrivals
    ref = fast_sweep(ScalarField(g, np.ones(g.dims)), SRC)
    assert np.all(tt.tau.values >= ref.tau.values - 1e-12)


def test_source_ball_frozen_exactly():
    g = tall_grid(1 / 8)
    tt = fast_sweep(ScalarField(g, np.ones(g.dims)), SRC)
    x, y, z = g.meshgrid()
    dist = np.sqrt(x**2 + y**2 + (z + 1.0) ** 2)
    near = dist <= SOURCE_RADIUS_IN_H * g.h
    assert np.array_equal(tt.tau.values[near], dist[near])


def test_error_paths():
    g = tall_grid(1 / 8)
    bad = np.ones(g.dims)
    bad[0, 0, 0] = 0.0
    with pytest.raises(EikonalError):
        fast_sweep(ScalarField(g, bad), SRC)
    with pytest.raises(EikonalError):
        fast_sweep(ScalarField(g, np.ones(g.dims)), (50.0, 0.0, 0.0))


def test_traveltime_carries_grid():
    g = tall_grid(1 / 8)
    tt = fast_sweep(ScalarField(g, np.ones(g.dims)), SRC)
    assert isinstance(tt, TravelTime)
    assert tt.grid == g and tt.source == SRC
