"""Empirical probes of the two analytical pillars behind the method.

1. The weighted second-order estimate: for functions vanishing on the hull
   with vanishing one-sided normal derivative on the top face,

       int (lap u)^2 e^{2 lam (z+b)^2}
           >=  rho * [ lam^-1 sum_ij int u_xixj^2 e  +  lam int |grad u|^2 e
                       + lam^3 int u^2 e ]

   should hold with rho bounded away from zero once lam is moderately large.
   The constants in the analysis are existential, so the probe measures the
   empirical rho over a randomized admissible family and asserts positivity
   and non-collapse across a lam sweep.

2. Strict convexity of the weighted objective on the feasible set, probed
   via Bregman gaps J(W2) - J(W1) - <grad J(W1), W2 - W1> and 1-D second
   differences along feasible segments.

Both probes are deterministic under a fixed seed.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .acquire import CauchyProjection
from .errors import ConfigError
from .grid import Grid3, ScalarField, VecField
from .objective import (DofMap, ObjectiveConfig, _lap_transpose,
                        _residual_forward, _top_stencil, carleman_weight,
                        eval_J, grad_J)
from .optimize import baseline_start
from .system import SystemCoeffs, amplitude


def sample_admissible_u(grid: Grid3, seed: int, modes: int = 4) -> ScalarField:
    """Random smooth field with u = 0 on the hull and du/dz = 0 on the top.

    Sine series in (x, y) times z (A - z)^2 (random cubic in z): the sines
    kill the side walls, the z factor the bottom, and the squared factor
    both the value and the slope at the top.  Normalized to unit discrete
    L2 norm.
    """
    rng = np.random.default_rng(seed)
    x, y, z = grid.meshgrid()
    lx = grid.upper[0] - grid.origin[0]
    ly = grid.upper[1] - grid.origin[1]
    xs = (x - grid.origin[0]) / lx
    ys = (y - grid.origin[1]) / ly
    zs = z - grid.origin[2]
    A = grid.upper[2] - grid.origin[2]

    for _ in range(8):
        amp = rng.normal(size=(modes, modes))
        cubic = rng.normal(size=4)
        u = np.zeros(grid.dims)
        for k in range(1, modes + 1):
            for l in range(1, modes + 1):
                u += amp[k - 1, l - 1] * np.sin(k * np.pi * xs) \
                    * np.sin(l * np.pi * ys)
        u *= zs * (A - zs) ** 2 * np.polynomial.polynomial.polyval(zs, cubic)
        norm = np.sqrt(grid.h ** 3 * (u * u).sum())
        if norm > 1e-8:
            return ScalarField(grid, u / norm)
    raise ConfigError("admissible sampler degenerated (all-zero draws)")


def _weighted(arr: np.ndarray, w: np.ndarray, h: float) -> float:
    return h ** 3 * float((arr * w).sum())


def carleman_ratio(u: ScalarField, lam: float, b: float) -> float:
    """Empirical constant of the weighted estimate for one field.

    All integrals are interior-node sums (every stencil fits there); the
    mixed second derivatives use the cross difference over the four diagonal
    neighbours, and the sum over index pairs counts off-diagonal pairs twice.
    """
    if lam < 1.0:
        raise ConfigError("the weighted estimate is probed for lam >= 1")
    grid = u.grid
    cfg = ObjectiveConfig(lam=lam, b=b)
    cfg.check_weight(grid)
    h = grid.h
    v = u.values
    I = (slice(1, -1),) * 3
    w = carleman_weight(grid.axis(2)[1:-1], cfg)[None, None, :]

    lap = (v[2:, 1:-1, 1:-1] + v[:-2, 1:-1, 1:-1]
           + v[1:-1, 2:, 1:-1] + v[1:-1, :-2, 1:-1]
           + v[1:-1, 1:-1, 2:] + v[1:-1, 1:-1, :-2]
           - 6.0 * v[I]) / (h * h)
    num = _weighted(lap * lap, w, h)

    second = 0.0
    sl = {-1: slice(0, -2), 0: slice(1, -1), 1: slice(2, None)}
    for i in range(3):
        shift_p = [sl[0]] * 3
        shift_m = [sl[0]] * 3
        shift_p[i] = sl[1]
        shift_m[i] = sl[-1]
        dii = (v[tuple(shift_p)] - 2.0 * v[I] + v[tuple(shift_m)]) / (h * h)
        second += _weighted(dii * dii, w, h)
        for j in range(i + 1, 3):
            pp = [sl[0]] * 3
            pm = [sl[0]] * 3
            mp = [sl[0]] * 3
            mm = [sl[0]] * 3
            pp[i] = pm[i] = sl[1]
            mp[i] = mm[i] = sl[-1]
            pp[j] = mp[j] = sl[1]
            pm[j] = mm[j] = sl[-1]
            dij = (v[tuple(pp)] - v[tuple(pm)] - v[tuple(mp)]
                   + v[tuple(mm)]) / (4.0 * h * h)
            second += 2.0 * _weighted(dij * dij, w, h)

    grad2 = np.zeros_like(v[I])
    for i in range(3):
        shift_p = [sl[0]] * 3
        shift_m = [sl[0]] * 3
        shift_p[i] = sl[1]
        shift_m[i] = sl[-1]
        di = (v[tuple(shift_p)] - v[tuple(shift_m)]) / (2.0 * h)
        grad2 += di * di

    den = (second / lam + lam * _weighted(grad2, w, h)
           + lam ** 3 * _weighted(v[I] * v[I], w, h))
    if den == 0.0:
        raise ConfigError("degenerate sample: zero on all interior nodes")
    return num / den


@dataclasses.dataclass(frozen=True)
class CarlemanReport:
    lambdas: tuple
    b: float
    samples: int
    seed: int
    min_rho: tuple          # per lambda
    worst_sample: tuple     # per lambda: index of the minimizing draw
    rho_floor: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def render(self) -> str:
        lines = [f"weighted-estimate probe: {self.samples} samples, "
                 f"b={self.b}, floor={self.rho_floor:g}"]
        for lam, rho, worst in zip(self.lambdas, self.min_rho,
                                   self.worst_sample):
            lines.append(f"  lam={lam:<6g} min rho={rho:.6g}  "
                         f"(worst draw #{worst})")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def carleman_sweep(grid: Grid3, lambdas, samples: int, seed: int,
                   b: float = 0.1, rho_floor: float = 1e-3) -> CarlemanReport:
    """Minimum empirical rho per lambda over a shared randomized family.

    Passes when every per-lambda minimum clears rho_floor and the minimum at
    the largest lambda retains at least half of the minimum at the smallest.
    """
    lambdas = tuple(float(v) for v in lambdas)
    if not lambdas:
        raise ConfigError("need at least one lambda")
    if samples < 100:
        raise ConfigError("the probe is only meaningful with >= 100 samples")
    fields = [sample_admissible_u(grid, seed + i) for i in range(samples)]
    min_rho = []
    worst = []
    for lam in lambdas:
        rhos = np.array([carleman_ratio(u, lam, b) for u in fields])
        k = int(rhos.argmin())
        min_rho.append(float(rhos[k]))
        worst.append(k)
    lo = min_rho[int(np.argmin(lambdas))]
    hi = min_rho[int(np.argmax(lambdas))]
    passed = all(r >= rho_floor for r in min_rho) and hi >= 0.5 * lo
    return CarlemanReport(lambdas, b, samples, seed, tuple(min_rho),
                          tuple(worst), rho_floor, passed)


@dataclasses.dataclass(frozen=True)
class ConvexityReport:
    pairs: int
    seed: int
    lam: float
    min_gap: float
    min_second_diff: float
    fraction_above_floor: float
    gap_floor: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def render(self) -> str:
        return (f"convexity probe: {self.pairs} pairs, lam={self.lam:g}\n"
                f"  min Bregman gap      {self.min_gap: .6e}\n"
                f"  min 2nd difference   {self.min_second_diff: .6e}\n"
                f"  gaps above {self.gap_floor:g}: "
                f"{100.0 * self.fraction_above_floor:.1f}%\n"
                + ("PASS" if self.passed else "FAIL"))


def _feasible_perturbation(base: VecField, coeffs: SystemCoeffs, rng,
                           rel: float = 0.25, tries: int = 30) -> VecField:
    """base + admissible perturbation, rescaled until strictly feasible."""
    grid = base.grid
    comps = base.values.shape[0]
    delta = np.stack([
        sample_admissible_u(grid, int(rng.integers(2 ** 31))).values
        for _ in range(comps)
    ])
    interior = base.values[1:, 1:-1, 1:-1, 1:-1]
    scale = rel * float(np.abs(amplitude(interior, coeffs)).min()) \
        / max(float(np.abs(delta).max()), 1e-30)
    for _ in range(tries):
        vals = base.values + scale * delta
        margin = amplitude(vals[1:, 1:-1, 1:-1, 1:-1], coeffs).min()
        if margin > coeffs.m_floor:
            return VecField(grid, vals)
        scale *= 0.5
    raise ConfigError("could not scale a perturbation into the feasible set")


def convexity_probe(data: CauchyProjection, cfg: ObjectiveConfig,
                    coeffs: SystemCoeffs, pairs: int, seed: int,
                    gap_floor: float = -1e-10) -> ConvexityReport:
    """Bregman gaps and segment second differences around the baseline start.

    Feasible pairs are convex-combination safe (the amplitude is linear in
    the perturbed components), so strict evaluation is valid along the whole
    segment.
    """
    if pairs < 1:
        raise ConfigError("need at least one pair")
    rng = np.random.default_rng(seed)
    base = baseline_start(data)
    min_gap = np.inf
    min_dd = np.inf
    above = 0
    for _ in range(pairs):
        W1 = _feasible_perturbation(base, coeffs, rng)
        W2 = _feasible_perturbation(base, coeffs, rng)
        J1 = eval_J(W1, data, cfg, coeffs)
        J2 = eval_J(W2, data, cfg, coeffs)
        G1 = grad_J(W1, data, cfg, coeffs)
        gap = J2 - J1 - float((G1.values * (W2.values - W1.values)).sum())
        min_gap = min(min_gap, gap)
        if gap >= gap_floor:
            above += 1
        ts = (0.0, 0.25, 0.5, 0.75, 1.0)
        js = [J1]
        for t in ts[1:-1]:
            Wt = VecField(W1.grid,
                          (1.0 - t) * W1.values + t * W2.values)
            js.append(eval_J(Wt, data, cfg, coeffs))
        js.append(J2)
        for a in range(1, len(ts) - 1):
            min_dd = min(min_dd, js[a - 1] - 2.0 * js[a] + js[a + 1])
    frac = above / pairs
    passed = min_gap >= gap_floor and min_dd >= gap_floor and frac == 1.0
    return ConvexityReport(pairs, seed, cfg.lam, float(min_gap),
                           float(min_dd), frac, gap_floor, passed)


def frozen_residual_objective(Wref: VecField, data: CauchyProjection,
                              cfg: ObjectiveConfig, coeffs: SystemCoeffs):
    """Quadratic surrogate: the nonlinear coupling terms are evaluated once
    at Wref and held fixed, leaving J(W) = sum w |lap W - fbar|^2 + penalty.

    Returns (evaluate, gradient) closures with the same conventions as the
    real objective — a seam for convexity/contraction tests, where Bregman
    gaps of the surrogate admit closed forms.
    """
    cfg.check_weight(Wref.grid)
    grid = Wref.grid
    h = grid.h
    fwd = _residual_forward(Wref, cfg, coeffs, "strict")
    fbar = np.concatenate([
        fwd["f1"][None],
        2.0 * np.einsum("i...,mi...->m...", fwd["gt"], fwd["U"])
        + fwd["f1"][None] * fwd["V"],
    ])
    w_int = carleman_weight(grid.axis(2)[1:-1], cfg)[None, None, None, :]
    w_top = float(carleman_weight(grid.upper[2], cfg))
    dofs = DofMap(grid)
    top = dofs.mask.top_nodes()
    ii, jj = top[:, 0], top[:, 1]
    k = grid.dims[2] - 1

    def _lap_all(values):
        I = (slice(1, -1),) * 3
        out = (values[:, 2:, 1:-1, 1:-1] + values[:, :-2, 1:-1, 1:-1]
               + values[:, 1:-1, 2:, 1:-1] + values[:, 1:-1, :-2, 1:-1]
               + values[:, 1:-1, 1:-1, 2:] + values[:, 1:-1, 1:-1, :-2]
               - 6.0 * values[(slice(None),) + I]) / (h * h)
        return out

    def evaluate(W: VecField) -> float:
        r = _lap_all(W.values) - fbar
        j = h ** 3 * float((w_int * r * r).sum())
        diff = _top_stencil(W, top) - data.q1
        return j + cfg.neumann_penalty * h ** 2 * w_top * float(
            (diff * diff).sum())

    def gradient(W: VecField) -> VecField:
        r = _lap_all(W.values) - fbar
        g = 2.0 * h ** 3 * w_int * r
        out = np.stack([_lap_transpose(g[c], grid)
                        for c in range(g.shape[0])])
        diff = _top_stencil(W, top) - data.q1
        gpen = 2.0 * cfg.neumann_penalty * h ** 2 * w_top * diff
        out[:, ii, jj, k] += 3.0 / (2.0 * h) * gpen
        out[:, ii, jj, k - 1] += -4.0 / (2.0 * h) * gpen
        out[:, ii, jj, k - 2] += 1.0 / (2.0 * h) * gpen
        dofs.zero_fixed(out)
        return VecField(grid, out)

    return evaluate, gradient
