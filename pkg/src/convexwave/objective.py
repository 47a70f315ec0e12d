"""Weighted least-squares objective over the elliptic system and its gradient.

    J(W) = h^3 sum_int  e^{2 lam (z+b)^2} |r(W)|^2
         + sigma h^2 sum_topface e^{2 lam (z_top+b)^2} |dz W - q1|^2
         + beta * (discrete smoothness surrogate)

r is the interior system residual, dz the one-sided top-face normal stencil,
q1 the measured Neumann data.  The exponential weight grows toward the
measurement face, which is what makes the problem convex on the admissible
set for sufficiently strong weights; the working choice lam = 1, b = 0 is
kept as the default.

grad_J differentiates this discrete J exactly: pointwise chain rule through
the residual algebra, then transposed stencils (the adjoints of the 7-point
Laplacian, central first differences, and the one-sided face stencil) push
interior multipliers back onto node values.  Hull nodes carry Dirichlet data
and are not degrees of freedom; their gradient entries are zeroed.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .acquire import CauchyProjection
from .errors import ConfigError
from .grid import BoundaryMask, Grid3, VecField
from .system import SystemCoeffs, _clamped, _interior_parts, amplitude

MAX_EXPONENT = 700.0  # exp overflow guard for the full exponent 2 lam (z+b)^2


@dataclasses.dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = 1.0
    b: float = 0.0
    beta: float = 0.0
    neumann_penalty: float = 10.0

    def __post_init__(self):
        if self.lam < 0 or self.b < 0 or self.beta < 0 or self.neumann_penalty < 0:
            raise ConfigError("objective parameters must be non-negative")

    def check_weight(self, grid: Grid3) -> None:
        zmax = grid.upper[2]
        if 2.0 * self.lam * (zmax + self.b) ** 2 > MAX_EXPONENT:
            raise ConfigError(
                f"weight exponent 2*{self.lam}*({zmax}+{self.b})^2 overflows")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def carleman_weight(z, cfg: ObjectiveConfig):
    """exp(2 lam (z + b)^2), scalar or array in z."""
    return np.exp(2.0 * cfg.lam * (np.asarray(z, dtype=np.float64) + cfg.b) ** 2)


class DofMap:
    """Free/fixed classification: hull nodes fixed in every component."""

    def __init__(self, grid: Grid3):
        self.grid = grid
        self.mask = BoundaryMask(grid)
        self.bnodes = self.mask.boundary_nodes()
        self.free = self.mask.interior

    def apply_dirichlet(self, W: VecField, data: CauchyProjection) -> None:
        ii, jj, kk = self.bnodes.T
        W.values[:, ii, jj, kk] = data.q0

    def check_dirichlet(self, W: VecField, data: CauchyProjection,
                        tol: float = 1e-8) -> None:
        ii, jj, kk = self.bnodes.T
        got = W.values[:, ii, jj, kk]
        scale = 1.0 + np.abs(data.q0).max()
        if np.abs(got - data.q0).max() > tol * scale:
            raise ConfigError("field does not carry the Dirichlet data "
                              "on the hull (fixed dofs altered)")

    def zero_fixed(self, values: np.ndarray) -> None:
        ii, jj, kk = self.bnodes.T
        values[:, ii, jj, kk] = 0.0


def _residual_forward(W: VecField, cfg: ObjectiveConfig, coeffs: SystemCoeffs,
                      mode: str):
    """Shared forward pass: residual pieces and every reusable intermediate."""
    lap, grad, centre = _interior_parts(W)
    gt = grad[0]
    gw = grad[1:]
    wv = centre[1:]
    S0 = amplitude(wv, coeffs)
    Sc, clamped = _clamped(S0, coeffs.m_floor, mode)
    T = np.einsum("n,ni...->i...", coeffs.s, gw)
    P = np.einsum("i...,i...->...", gt, T)
    f1 = -2.0 * P / Sc
    D = coeffs.D
    U = np.einsum("mn,ni...->mi...", D, gw)
    V = np.einsum("mn,n...->m...", D, wv)
    cross = np.einsum("i...,mi...->m...", gt, U)
    r0 = lap[0] - f1
    rm = lap[1:] - 2.0 * cross - f1[None] * V
    return dict(gt=gt, gw=gw, wv=wv, Sc=Sc, clamped=clamped, T=T, P=P,
                f1=f1, U=U, V=V, r0=r0, rm=rm)


def _top_stencil(W: VecField, top: np.ndarray):
    v = W.values
    k = v.shape[3] - 1
    ii, jj = top[:, 0], top[:, 1]
    h = W.grid.h
    return (3.0 * v[:, ii, jj, k] - 4.0 * v[:, ii, jj, k - 1]
            + v[:, ii, jj, k - 2]) / (2.0 * h)


def _second_diff_sq(values: np.ndarray, h: float):
    """Per component and axis: squared second differences where the stencil fits."""
    total = 0.0
    pieces = []
    for ax in range(1, 4):
        lo = [slice(None)] * 4
        mid = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[ax], mid[ax], hi[ax] = slice(0, -2), slice(1, -1), slice(2, None)
        d = (values[tuple(lo)] - 2.0 * values[tuple(mid)] + values[tuple(hi)]) / (h * h)
        pieces.append(d)
        total += float((d * d).sum())
    return total, pieces


def eval_J_parts(W: VecField, data: CauchyProjection, cfg: ObjectiveConfig,
                 coeffs: SystemCoeffs, mode: str = "strict"):
    """Returns (J, residual part, Neumann part, smoothness part)."""
    cfg.check_weight(W.grid)
    dofs = DofMap(W.grid)
    dofs.check_dirichlet(W, data)
    h = W.grid.h
    fwd = _residual_forward(W, cfg, coeffs, mode)
    z_int = W.grid.axis(2)[1:-1]
    w_int = carleman_weight(z_int, cfg)[None, None, :]
    dens = fwd["r0"] ** 2 + np.einsum("m...,m...->...", fwd["rm"], fwd["rm"])
    j_res = h ** 3 * float((dens * w_int).sum())

    top = dofs.mask.top_nodes()
    w_top = float(carleman_weight(W.grid.upper[2], cfg))
    diff = _top_stencil(W, top) - data.q1
    j_neu = cfg.neumann_penalty * h ** 2 * w_top * float((diff * diff).sum())

    j_smooth = 0.0
    if cfg.beta > 0.0:
        total, _ = _second_diff_sq(W.values, h)
        j_smooth = cfg.beta * h ** 3 * total
    return j_res + j_neu + j_smooth, j_res, j_neu, j_smooth


def eval_J(W: VecField, data: CauchyProjection, cfg: ObjectiveConfig,
           coeffs: SystemCoeffs, mode: str = "strict") -> float:
    return eval_J_parts(W, data, cfg, coeffs, mode)[0]


def _embed_pad(a_int: np.ndarray, dims) -> np.ndarray:
    """Interior array -> full grid with a zero halo (for transposed stencils)."""
    A = np.zeros((dims[0] + 2, dims[1] + 2, dims[2] + 2))
    A[2:-2, 2:-2, 2:-2] = a_int
    return A


def _lap_transpose(a_int: np.ndarray, grid: Grid3) -> np.ndarray:
    A = _embed_pad(a_int, grid.dims)
    s = A[:-2, 1:-1, 1:-1] + A[2:, 1:-1, 1:-1]
    s = s + A[1:-1, :-2, 1:-1]
    s = s + A[1:-1, 2:, 1:-1]
    s = s + A[1:-1, 1:-1, :-2]
    s = s + A[1:-1, 1:-1, 2:]
    return (s - 6.0 * A[1:-1, 1:-1, 1:-1]) / (grid.h * grid.h)


def _grad_transpose(a_int: np.ndarray, axis: int, grid: Grid3) -> np.ndarray:
    A = _embed_pad(a_int, grid.dims)
    minus = [slice(1, -1)] * 3
    plus = [slice(1, -1)] * 3
    minus[axis] = slice(0, -2)
    plus[axis] = slice(2, None)
    return (A[tuple(minus)] - A[tuple(plus)]) / (2.0 * grid.h)


def grad_J(W: VecField, data: CauchyProjection, cfg: ObjectiveConfig,
           coeffs: SystemCoeffs, mode: str = "strict") -> VecField:
    """Exact gradient of eval_J in the free node values; fixed dofs get 0."""
    cfg.check_weight(W.grid)
    dofs = DofMap(W.grid)
    dofs.check_dirichlet(W, data)
    grid = W.grid
    h = grid.h
    fwd = _residual_forward(W, cfg, coeffs, mode)
    z_int = grid.axis(2)[1:-1]
    w_int = carleman_weight(z_int, cfg)[None, None, :]

    g0 = 2.0 * h ** 3 * w_int * fwd["r0"]
    gm = 2.0 * h ** 3 * w_int[None] * fwd["rm"]

    inv = 1.0 / fwd["Sc"]
    chi = np.where(fwd["clamped"], 0.0, 1.0)
    GV = g0 + np.einsum("m...,m...->...", gm, fwd["V"])
    gD = np.einsum("mn,m...->n...", coeffs.D, gm)

    # pointwise adjoints of the residual algebra (interior arrays)
    a_gt = 2.0 * fwd["T"] * (inv * GV)[None] \
        - 2.0 * np.einsum("m...,mi...->i...", gm, fwd["U"])
    a_gw = 2.0 * np.einsum("n,i...->ni...", coeffs.s, fwd["gt"] * (inv * GV)[None]) \
        - 2.0 * np.einsum("i...,n...->ni...", fwd["gt"], gD)
    a_w = -2.0 * np.einsum("n,...->n...", coeffs.s,
                           fwd["P"] * inv * inv * chi * GV) \
        - fwd["f1"][None] * gD

    out = np.zeros_like(W.values)
    out[0] = _lap_transpose(g0, grid)
    for i in range(3):
        out[0] += _grad_transpose(a_gt[i], i, grid)
    for n in range(coeffs.N):
        acc = _lap_transpose(gm[n], grid)
        for i in range(3):
            acc += _grad_transpose(a_gw[n, i], i, grid)
        acc[1:-1, 1:-1, 1:-1] += a_w[n]
        out[1 + n] = acc

    # Neumann penalty: transposed one-sided stencil on the top face
    top = dofs.mask.top_nodes()
    w_top = float(carleman_weight(grid.upper[2], cfg))
    diff = _top_stencil(W, top) - data.q1
    gpen = 2.0 * cfg.neumann_penalty * h ** 2 * w_top * diff
    ii, jj = top[:, 0], top[:, 1]
    k = grid.dims[2] - 1
    out[:, ii, jj, k] += 3.0 / (2.0 * h) * gpen
    out[:, ii, jj, k - 1] += -4.0 / (2.0 * h) * gpen
    out[:, ii, jj, k - 2] += 1.0 / (2.0 * h) * gpen

    if cfg.beta > 0.0:
        _, pieces = _second_diff_sq(W.values, h)
        for ax in range(1, 4):
            d = pieces[ax - 1]
            pad = [(0, 0)] * 4
            pad[ax] = (2, 2)
            A = np.pad(2.0 * cfg.beta * h ** 3 * d, pad)
            lo = [slice(None)] * 4
            mid = [slice(None)] * 4
            hi = [slice(None)] * 4
            lo[ax], mid[ax], hi[ax] = slice(0, -2), slice(1, -1), slice(2, None)
            out += (A[tuple(lo)] - 2.0 * A[tuple(mid)] + A[tuple(hi)]) / (h * h)

    dofs.zero_fixed(out)
    return VecField(grid, out)
