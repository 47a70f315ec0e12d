"""Elliptic system residual, amplitude handling, and the weighted objective.

The residual test re-derives r on a small grid with plain python loops —
node by node, stencil by stencil — so the vectorised einsum assembly in
the package is checked against an implementation that shares none of its
code.  The gradient test compares grad_J against central finite
differences of eval_J at randomly chosen free dofs; the gradient is exact
for the discrete J, so the agreement is limited only by FD truncation.
"""

import numpy as np
import pytest

from convexwave.acquire import CauchyProjection
from convexwave.basis import build_time_basis
from convexwave.errors import ConfigError, InfeasibleError
from convexwave.grid import BoundaryMask, Grid3, VecField
from convexwave.objective import (DofMap, ObjectiveConfig, carleman_weight,
                                  eval_J, eval_J_parts, grad_J)
from convexwave.system import (SystemCoeffs, _clamped, amplitude, auto_floor,
                               residual)


def small_grid(n=9, h=0.125):
    return Grid3((-0.5, -0.5, 0.0), h, (n, n, n))


def feasible_field(grid, N, seed=0, rough=0.05):
    """Smooth-ish random field whose amplitude stays far above any floor."""
    rng = np.random.default_rng(seed)
    x, y, z = np.meshgrid(*(grid.axis(a) for a in range(3)), indexing="ij")
    vals = np.empty((N + 1,) + grid.dims)
    vals[0] = 1.0 + 0.3 * x * x + 0.2 * y * y + z
    vals[1] = 1.0 + 0.2 * np.sin(3 * x) * np.cos(2 * y) + 0.1 * z * z
    for n in range(2, N + 1):
        vals[n] = 0.0
    vals += rough * rng.standard_normal(vals.shape)
    return VecField(grid, vals)


def coeffs_for(N, m_floor=0.01):
    return SystemCoeffs(build_time_basis(0.1, N), m_floor=m_floor)


def data_from_field(W, neumann="match"):
    """Cauchy data read straight off a field, so W itself is admissible."""
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
    if neumann == "perturbed":
        q1 = q1 + 0.1 * np.cos(np.arange(q1.size)).reshape(q1.shape)
    return CauchyProjection(grid=grid, T1=0.1, source=(0.0, 0.0, -1.0),
                            q0=q0, q1=q1, meta={"route": "synthetic"})


# ---------------------------------------------------------------- residual

def test_residual_matches_loop_rederivation():
    """r_0 and r_m recomputed per node with scalar arithmetic only."""
    N = 2
    grid = small_grid(7, 0.2)
    coeffs = coeffs_for(N)
    W = feasible_field(grid, N, seed=3)
    got = residual(W, coeffs, mode="strict").values

    v = W.values
    h = grid.h
    s = coeffs.s
    D = coeffs.D
    exp = np.zeros_like(v)
    for i in range(1, 6):
        for j in range(1, 6):
            for k in range(1, 6):
                lap = []
                gx, gy, gz = [], [], []
                for c in range(N + 1):
                    lap.append((v[c, i - 1, j, k] + v[c, i + 1, j, k]
                                + v[c, i, j - 1, k] + v[c, i, j + 1, k]
                                + v[c, i, j, k - 1] + v[c, i, j, k + 1]
                                - 6 * v[c, i, j, k]) / h**2)
                    gx.append((v[c, i + 1, j, k] - v[c, i - 1, j, k]) / (2 * h))
                    gy.append((v[c, i, j + 1, k] - v[c, i, j - 1, k]) / (2 * h))
                    gz.append((v[c, i, j, k + 1] - v[c, i, j, k - 1]) / (2 * h))
                S = sum(s[n] * v[1 + n, i, j, k] for n in range(N))
                dot = sum(s[n] * (gx[0] * gx[1 + n] + gy[0] * gy[1 + n]
                                  + gz[0] * gz[1 + n]) for n in range(N))
                f1 = -2.0 * dot / S
                exp[0, i, j, k] = lap[0] - f1
                for m in range(N):
                    cross = sum(D[m, n] * (gx[0] * gx[1 + n] + gy[0] * gy[1 + n]
                                           + gz[0] * gz[1 + n]) for n in range(N))
                    acc = sum(D[m, n] * v[1 + n, i, j, k] for n in range(N))
                    exp[1 + m, i, j, k] = lap[1 + m] - 2.0 * cross - f1 * acc
    scale = np.abs(exp).max()
    assert np.abs(got - exp).max() < 1e-12 * scale


def test_residual_zero_on_hull():
    grid = small_grid()
    coeffs = coeffs_for(2)
    r = residual(feasible_field(grid, 2), coeffs).values
    mask = BoundaryMask(grid)
    bn = mask.boundary_nodes()
    assert np.all(r[:, bn[:, 0], bn[:, 1], bn[:, 2]] == 0.0)
    assert np.abs(r[:, 1:-1, 1:-1, 1:-1]).max() > 0.0


def test_residual_rejects_component_mismatch():
    grid = small_grid()
    with pytest.raises(ValueError, match="components"):
        residual(feasible_field(grid, 3), coeffs_for(2))


# ------------------------------------------------- amplitude and the floor

def test_amplitude_accepts_both_stack_shapes():
    coeffs = coeffs_for(3)
    rng = np.random.default_rng(1)
    full = rng.standard_normal((4, 5, 5))
    S_full = amplitude(full, coeffs)
    S_part = amplitude(full[1:], coeffs)
    assert np.array_equal(S_full, S_part)
    # and it is literally the slope-weighted sum
    manual = sum(coeffs.s[n] * full[1 + n] for n in range(3))
    assert np.allclose(S_full, manual, rtol=0, atol=1e-13)


def test_auto_floor_from_constructed_data():
    basis = build_time_basis(0.1, 2)
    nb = 6
    q0 = np.zeros((3, nb))
    targets = np.array([0.4, -0.8, 1.2, 2.0, -0.5, 0.9])
    q0[1] = targets / basis.slope0[0]  # S_b == targets exactly
    assert auto_floor(q0, basis) == pytest.approx(0.25 * 0.4, rel=1e-12)
    assert auto_floor(q0, basis, fraction=0.5) == pytest.approx(0.2, rel=1e-12)
    q0[1, 3] = 0.0
    with pytest.raises(InfeasibleError):
        auto_floor(q0, basis)


def test_clamped_strict_raises_with_location():
    S = np.ones((3, 3, 3))
    S[1, 2, 0] = 1e-5
    with pytest.raises(InfeasibleError, match=r"\(1, 2, 0\)"):
        _clamped(S, 0.01, "strict")


def test_clamped_permissive_preserves_sign():
    S = np.array([0.5, 1e-5, -1e-5, -0.5, 0.0])
    out, bad = _clamped(S, 0.01, "permissive")
    assert np.array_equal(bad, [False, True, True, False, True])
    assert np.array_equal(out, [0.5, 0.01, -0.01, -0.5, 0.01])
    with pytest.raises(ValueError):
        _clamped(S, 0.01, "sloppy")


def test_coeffs_validation():
    with pytest.raises(ValueError):
        SystemCoeffs(build_time_basis(0.1, 2), m_floor=0.0)
    c = coeffs_for(4, m_floor=0.5)
    assert c.N == 4 and c.m_floor == 0.5
    assert c.s.shape == (4,) and c.D.shape == (4, 4)


# ------------------------------------------------------------- the weight

def test_carleman_weight_values_and_guard():
    cfg = ObjectiveConfig(lam=1.0, b=0.0)
    assert carleman_weight(0.5, cfg) == pytest.approx(np.exp(0.5), rel=1e-14)
    z = np.array([0.0, 1.0])
    assert np.allclose(carleman_weight(z, cfg), np.exp(2.0 * (z) ** 2))
    cfg2 = ObjectiveConfig(lam=2.0, b=0.3)
    assert carleman_weight(0.2, cfg2) == pytest.approx(np.exp(4.0 * 0.25))

    with pytest.raises(ConfigError):
        ObjectiveConfig(lam=-1.0)
    big = ObjectiveConfig(lam=400.0)
    with pytest.raises(ConfigError, match="overflow"):
        big.check_weight(small_grid())  # 2*400*(1+0)^2 = 800 > 700


# ---------------------------------------------------------------- dof map

def test_dofmap_roundtrip_and_zeroing():
    grid = small_grid()
    N = 2
    W = feasible_field(grid, N, seed=5)
    data = data_from_field(W)
    dofs = DofMap(grid)

    W2 = feasible_field(grid, N, seed=6)
    with pytest.raises(ConfigError):
        dofs.check_dirichlet(W2, data)
    dofs.apply_dirichlet(W2, data)
    dofs.check_dirichlet(W2, data)  # no raise

    g = np.ones((N + 1,) + grid.dims)
    dofs.zero_fixed(g)
    assert np.all(g[:, 1:-1, 1:-1, 1:-1] == 1.0)
    assert float(g.sum()) == (N + 1) * 7**3  # only interior survives


# -------------------------------------------------------------- objective

def test_eval_J_parts_against_direct_assembly():
    N = 2
    grid = small_grid(9, 0.125)
    coeffs = coeffs_for(N)
    W = feasible_field(grid, N, seed=11)
    data = data_from_field(W, neumann="perturbed")
    cfg = ObjectiveConfig(lam=1.0, b=0.1, beta=0.0, neumann_penalty=7.0)

    J, j_res, j_neu, j_smooth = eval_J_parts(W, data, cfg, coeffs)
    assert J == pytest.approx(j_res + j_neu + j_smooth, rel=1e-14)
    assert j_smooth == 0.0

    # residual part straight from the public residual() and the weight
    r = residual(W, coeffs).values
    z = grid.axis(2)
    wz = np.exp(2.0 * cfg.lam * (z + cfg.b) ** 2)
    dens = (r**2).sum(axis=0) * wz[None, None, :]
    assert j_res == pytest.approx(grid.h**3 * dens.sum(), rel=1e-12)

    # penalty part from the raw one-sided stencil mismatch
    mask = BoundaryMask(grid)
    top = mask.top_nodes()
    k = grid.dims[2] - 1
    v = W.values
    st = (3.0 * v[:, top[:, 0], top[:, 1], k]
          - 4.0 * v[:, top[:, 0], top[:, 1], k - 1]
          + v[:, top[:, 0], top[:, 1], k - 2]) / (2.0 * grid.h)
    mism = ((st - data.q1) ** 2).sum()
    w_top = np.exp(2.0 * cfg.lam * (grid.upper[2] + cfg.b) ** 2)
    assert j_neu == pytest.approx(7.0 * grid.h**2 * w_top * mism, rel=1e-12)
    assert j_neu > 0.0


def test_eval_J_neumann_vanishes_on_matching_data():
    grid = small_grid()
    W = feasible_field(grid, 2, seed=2)
    data = data_from_field(W, neumann="match")
    _, _, j_neu, _ = eval_J_parts(W, data, ObjectiveConfig(), coeffs_for(2))
    assert j_neu == pytest.approx(0.0, abs=1e-18)


def test_eval_J_smoothness_term():
    grid = small_grid()
    N = 1
    W = feasible_field(grid, N, seed=7)
    data = data_from_field(W)
    coeffs = coeffs_for(N)
    cfg0 = ObjectiveConfig(beta=0.0)
    cfg1 = ObjectiveConfig(beta=0.25)
    J0, _, _, s0 = eval_J_parts(W, data, cfg0, coeffs)
    J1, _, _, s1 = eval_J_parts(W, data, cfg1, coeffs)
    assert s0 == 0.0 and s1 > 0.0
    assert J1 - J0 == pytest.approx(s1, rel=1e-12)
    # manual second-difference energy along one axis of one component
    h = grid.h
    v = W.values
    total = 0.0
    for ax in (1, 2, 3):
        d = (np.diff(v, n=2, axis=ax) / h**2)
        total += (d * d).sum()
    assert s1 == pytest.approx(0.25 * h**3 * total, rel=1e-12)


def test_eval_J_guards():
    grid = small_grid()
    W = feasible_field(grid, 2, seed=4)
    data = data_from_field(W)
    coeffs = coeffs_for(2)
    W.values[0, 0, 0, 0] += 1.0  # touch a fixed dof
    with pytest.raises(ConfigError):
        eval_J(W, data, ObjectiveConfig(), coeffs)


def test_eval_J_strict_vs_permissive_on_thin_amplitude():
    grid = small_grid()
    N = 2
    W = feasible_field(grid, N, seed=9)
    W.values[1] *= 1e-4  # push S below the floor almost everywhere
    W.values[2] *= 1e-4
    data = data_from_field(W)
    coeffs = coeffs_for(N)
    with pytest.raises(InfeasibleError):
        eval_J(W, data, ObjectiveConfig(), coeffs, mode="strict")
    J = eval_J(W, data, ObjectiveConfig(), coeffs, mode="permissive")
    assert np.isfinite(J)


# ---------------------------------------------------------------- gradient

def _fd_check(cfg, seed, n_probe=12, mode="strict"):
    N = 2
    grid = Grid3((-0.5, -0.5, 0.0), 1.0 / 6.0, (7, 7, 7))
    coeffs = coeffs_for(N)
    W = feasible_field(grid, N, seed=seed)
    data = data_from_field(W, neumann="perturbed")
    g = grad_J(W, data, cfg, coeffs, mode=mode).values

    dofs = DofMap(grid)
    bn = dofs.bnodes
    assert np.all(g[:, bn[:, 0], bn[:, 1], bn[:, 2]] == 0.0)

    rng = np.random.default_rng(seed + 100)
    eps = 1e-6
    worst = 0.0
    for _ in range(n_probe):
        c = int(rng.integers(0, N + 1))
        i, j, k = (int(rng.integers(1, d - 1)) for d in grid.dims)
        Wp = VecField(grid, W.values.copy())
        Wm = VecField(grid, W.values.copy())
        Wp.values[c, i, j, k] += eps
        Wm.values[c, i, j, k] -= eps
        fd = (eval_J(Wp, data, cfg, coeffs, mode=mode)
              - eval_J(Wm, data, cfg, coeffs, mode=mode)) / (2 * eps)
        an = g[c, i, j, k]
        worst = max(worst, abs(fd - an) / max(1e-12, abs(fd), abs(an)))
    return worst


def test_grad_matches_fd_plain():
    assert _fd_check(ObjectiveConfig(lam=1.0, b=0.1), seed=21) < 1e-6


def test_grad_matches_fd_with_smoothness_and_penalty():
    cfg = ObjectiveConfig(lam=0.5, b=0.0, beta=0.1, neumann_penalty=25.0)
    assert _fd_check(cfg, seed=22) < 1e-6


def test_grad_matches_fd_zero_weight():
    # lam = 0 degenerates the weight to 1; the algebra must still hold
    assert _fd_check(ObjectiveConfig(lam=0.0), seed=23) < 1e-6
