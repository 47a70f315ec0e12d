"""Descent loop mechanics, level chaining, and the two start constructions.

gd_level exposes evaluate/gradient injection, so the optimizer mechanics
are tested against a hand-made convex quadratic with a known minimizer —
no physics in the loop.  The physics-facing contracts (J decreases, the
trace is monotone, margins stay honest) run on tiny synthetic grids.
"""

import numpy as np
import pytest

from convexwave.acquire import CauchyProjection
from convexwave.basis import build_time_basis
from convexwave.errors import ConfigError, NumericalError, StallError
from convexwave.grid import BoundaryMask, Grid3, VecField
from convexwave.objective import DofMap, ObjectiveConfig
from convexwave.optimize import (MultilevelPlan, RunTrace, _project_floor,
                                 baseline_start, gd_level, model_start,
                                 multilevel)
from convexwave.system import SystemCoeffs, amplitude


def small_grid(n=7, h=None):
    h = h if h is not None else 1.0 / (n - 1)
    return Grid3((-0.5, -0.5, 0.0), h, (n, n, n))


def feasible_field(grid, N, seed=0):
    rng = np.random.default_rng(seed)
    x, y, z = grid.meshgrid()
    vals = np.empty((N + 1,) + grid.dims)
    vals[0] = np.sqrt(x * x + y * y + (z + 1.0) ** 2)
    vals[1] = 1.0 + 0.2 * np.sin(3 * x) * np.cos(2 * y) + 0.1 * z * z
    for n in range(2, N + 1):
        vals[n] = 0.0
    vals += 0.02 * rng.standard_normal(vals.shape)
    return VecField(grid, vals)


def data_from_field(W):
    grid = W.grid
    mask = BoundaryMask(grid)
    bn = mask.boundary_nodes()
    q0 = W.values[:, bn[:, 0], bn[:, 1], bn[:, 2]].copy()
    top = mask.top_nodes()
    k = grid.dims[2] - 1
    v = W.values
    q1 = (3.0 * v[:, top[:, 0], top[:, 1], k]
          - 4.0 * v[:, top[:, 0], top[:, 1], k - 1]
          + v[:, top[:, 0], top[:, 1], k - 2]) / (2.0 * grid.h)
    return CauchyProjection(grid=grid, T1=0.1, source=(0.0, 0.0, -1.0),
                            q0=q0, q1=q1,
                            meta={"route": "synthetic", "pulse_eps": 0.1})


def coeffs_for(N, m_floor=0.01):
    return SystemCoeffs(build_time_basis(0.1, N), m_floor=m_floor)


# ------------------------------------------------------------------- plans

def test_plan_validation():
    MultilevelPlan()  # defaults are consistent
    with pytest.raises(ConfigError):
        MultilevelPlan(spacings=())
    with pytest.raises(ConfigError):
        MultilevelPlan(spacings=(1 / 8, 1 / 24))
    with pytest.raises(ConfigError):
        MultilevelPlan(step0=0.0)
    with pytest.raises(ConfigError):
        MultilevelPlan(grad_tol=-1.0)
    with pytest.raises(ConfigError):
        MultilevelPlan(max_iter=0)


def test_trace_monotonicity_guard_and_csv(tmp_path):
    tr = RunTrace(level_h=0.125)
    tr.append(0, 3.0, 1.0, 0.1, 0.5)
    tr.append(1, 2.0, 0.8, 0.1, 0.5)
    with pytest.raises(NumericalError):
        tr.append(2, 2.5, 0.7, 0.1, 0.5)
    p = tmp_path / "trace.csv"
    tr.write_csv(p)
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "iteration,J,grad_norm,step,margin"
    assert len(lines) == 3
    assert [float(v) for v in lines[2].split(",")] == [1.0, 2.0, 0.8, 0.1, 0.5]
    s = tr.summary()
    assert s["iterations"] == 2 and s["final_J"] == 2.0
    assert s["level_h"] == 0.125 and s["converged"] is False


# --------------------------------------------------------------- gd_level

def test_gd_on_injected_quadratic_finds_minimizer():
    N = 1
    grid = small_grid(7)
    W0 = feasible_field(grid, N, seed=1)
    data = data_from_field(W0)
    coeffs = coeffs_for(N)
    dofs = DofMap(grid)

    target = feasible_field(grid, N, seed=2).values

    def evaluate(W):
        d = W.values - target
        d = d.copy()
        dofs.zero_fixed(d)
        return float((d * d).sum())

    def gradient(W):
        d = 2.0 * (W.values - target)
        dofs.zero_fixed(d)
        return VecField(grid, d)

    plan = MultilevelPlan(spacings=(grid.h,), grad_tol=1e-10,
                          max_iter=200, step0=0.4)
    W, tr = gd_level(W0, data, ObjectiveConfig(), coeffs, plan,
                     evaluate=evaluate, gradient=gradient)
    assert tr.converged
    # free dofs reach the quadratic's minimizer; the hull stays put
    diff = W.values - target
    assert np.abs(diff[:, 1:-1, 1:-1, 1:-1]).max() < 1e-5
    bn = dofs.bnodes
    assert np.array_equal(W.values[:, bn[:, 0], bn[:, 1], bn[:, 2]],
                          W0.values[:, bn[:, 0], bn[:, 1], bn[:, 2]])
    js = [r[1] for r in tr.rows]
    assert all(b < a for a, b in zip(js, js[1:]))
    assert tr.rows[-1][3] == 0.0  # closing row records the stop, not a step


def test_gd_on_real_objective_descends():
    N = 1
    grid = small_grid(7)
    W0 = feasible_field(grid, N, seed=3)
    data = data_from_field(W0)
    coeffs = coeffs_for(N)
    plan = MultilevelPlan(spacings=(grid.h,), grad_tol=1e-9,
                          max_iter=15, step0=0.1)
    W, tr = gd_level(W0, data, ObjectiveConfig(lam=1.0), coeffs, plan)
    assert not tr.converged and tr.iterations == 16
    js = [r[1] for r in tr.rows]
    assert js[-1] < js[0]
    assert all(b < a for a, b in zip(js, js[1:]))
    margins = [r[4] for r in tr.rows]
    assert min(margins) > 0.0
    steps = [r[3] for r in tr.rows[:-1]]
    assert all(s > 0 for s in steps)
    assert tr.wall_time > 0.0


def test_gd_stall_raises_with_trace():
    N = 1
    grid = small_grid(5)
    W0 = feasible_field(grid, N, seed=4)
    data = data_from_field(W0)
    coeffs = coeffs_for(N)

    def evaluate(W):
        return 1.0  # no step can ever descend

    def gradient(W):
        g = np.ones_like(W.values)
        DofMap(grid).zero_fixed(g)
        return VecField(grid, g)

    plan = MultilevelPlan(spacings=(grid.h,), grad_tol=1e-12,
                          max_iter=10, step0=1.0, max_halvings=4)
    with pytest.raises(StallError) as exc:
        gd_level(W0, data, ObjectiveConfig(), coeffs, plan,
                 evaluate=evaluate, gradient=gradient)
    assert "halvings" in str(exc.value)
    assert isinstance(exc.value.trace, RunTrace)


def test_project_floor_minimal_nudge():
    N = 2
    grid = small_grid(5)
    coeffs = coeffs_for(N, m_floor=0.5)
    W = feasible_field(grid, N, seed=5)
    W.values[1, 2, 2, 2] = 0.0
    W.values[2, 2, 2, 2] = 0.0  # amplitude 0 < floor at this node
    before = W.values[1:, 2, 2, 2].copy()
    _project_floor(W, coeffs)
    S = amplitude(W.values[1:, 1:-1, 1:-1, 1:-1], coeffs)
    assert S.min() >= coeffs.m_floor - 1e-12
    assert amplitude(W.values[1:, 2, 2, 2], coeffs) == pytest.approx(0.5)
    # the nudge is along the slope vector (the minimal-norm direction)
    moved = W.values[1:, 2, 2, 2] - before
    cosang = moved @ coeffs.s / (np.linalg.norm(moved)
                                 * np.linalg.norm(coeffs.s))
    assert cosang == pytest.approx(1.0, abs=1e-12)


# -------------------------------------------------------------- multilevel

def test_multilevel_chains_and_reimposes_data():
    N = 1
    coarse = small_grid(5, 0.25)
    fine = coarse.refined()
    Wc = feasible_field(coarse, N, seed=6)

    # consistent data: the same analytic field sampled on both grids
    Wf = feasible_field(fine, N, seed=7)
    d_coarse = data_from_field(Wc)
    d_fine = data_from_field(Wf)

    plan = MultilevelPlan(spacings=(0.25, 0.125), grad_tol=1e-9,
                          max_iter=3, step0=0.05)
    W, traces = multilevel(Wc, [d_coarse, d_fine], ObjectiveConfig(),
                           coeffs_for(N), plan)
    assert W.grid == fine
    assert [t.level_h for t in traces] == [0.25, 0.125]
    DofMap(fine).check_dirichlet(W, d_fine)


def test_multilevel_input_validation():
    N = 1
    coarse = small_grid(5, 0.25)
    fine = coarse.refined()
    Wc = feasible_field(coarse, N, seed=8)
    dc = data_from_field(Wc)
    df = data_from_field(feasible_field(fine, N, seed=8))
    cfg = ObjectiveConfig()
    coeffs = coeffs_for(N)

    plan = MultilevelPlan(spacings=(0.25, 0.125), max_iter=1)
    with pytest.raises(ConfigError, match="datasets"):
        multilevel(Wc, [dc], cfg, coeffs, plan)
    with pytest.raises(ConfigError, match="spacing"):
        multilevel(Wc, [df, dc], cfg, coeffs, plan)
    shifted = Grid3((0.0, 0.0, 0.0), 0.125, fine.dims)
    d_shift = data_from_field(feasible_field(shifted, N, seed=9))
    with pytest.raises(ConfigError, match="nested"):
        multilevel(Wc, [dc, d_shift], cfg, coeffs, plan)
    with pytest.raises(ConfigError, match="wrong grid"):
        multilevel(feasible_field(fine, N, seed=9), [dc, df], cfg,
                   coeffs, plan)


# ------------------------------------------------------------------ starts

def test_baseline_start_contract():
    N = 2
    grid = small_grid(9, 0.125)
    Wtrue = feasible_field(grid, N, seed=10)
    data = data_from_field(Wtrue)
    W = baseline_start(data)
    DofMap(grid).check_dirichlet(W, data)

    # tau component: |x - source| plus the mean clock offset over the hull
    x, y, z = grid.meshgrid()
    dist = np.sqrt(x * x + y * y + (z + 1.0) ** 2)
    bn = DofMap(grid).bnodes
    shift = float((data.q0[0]
                   - dist[bn[:, 0], bn[:, 1], bn[:, 2]]).mean())
    assert W.values[0, 4, 4, 4] == pytest.approx(dist[4, 4, 4] + shift,
                                                 abs=1e-12)

    # amplitude components are discrete-harmonic in the interior
    h = grid.h
    for n in (1, 2):
        v = W.values[n]
        lap = (v[2:, 1:-1, 1:-1] + v[:-2, 1:-1, 1:-1]
               + v[1:-1, 2:, 1:-1] + v[1:-1, :-2, 1:-1]
               + v[1:-1, 1:-1, 2:] + v[1:-1, 1:-1, :-2]
               - 6.0 * v[1:-1, 1:-1, 1:-1]) / (h * h)
        assert np.abs(lap).max() < 1e-6 * max(1.0, np.abs(v).max() / h / h)


def test_model_start_contract():
    N = 1
    grid = small_grid(7)
    tb = build_time_basis(0.1, N)
    Wtrue = feasible_field(grid, N, seed=11)
    data = data_from_field(Wtrue)
    W = model_start(data, tb)
    DofMap(grid).check_dirichlet(W, data)
    assert np.isfinite(W.values).all()
    # interior amplitude inherits the hull normalization scale
    S = amplitude(W.values[1:, 1:-1, 1:-1, 1:-1],
                  SystemCoeffs(tb, m_floor=1e-6))
    assert 0.0 < S.mean() < 10.0

    bare = CauchyProjection(grid=grid, T1=0.1, source=(0.0, 0.0, -1.0),
                            q0=data.q0, q1=data.q1, meta={})
    with pytest.raises(ConfigError, match="pulse_eps"):
        model_start(bare, tb)
