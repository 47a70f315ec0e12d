"""Residual of the coupled quasilinear elliptic system for W = (tau, w_1..w_N).

Eliminating time from the wave problem leaves a system whose unknown couples
the travel time tau with the basis coefficients w_n of the shifted signal.
With s_n = P_n'(0) (so S = sum_n s_n w_n is the wave amplitude, positive on
admissible fields) and D[m, n] = integral of P_n' P_m over the window, the
interior residual evaluated here is

    r_0 = Lap(tau) - F1,          F1 = -2 (sum_i dtau_i sum_n s_n dw_n,i) / S
    r_m = Lap(w_m) - 2 sum_i dtau_i sum_n D[m,n] dw_n,i - F1 sum_n D[m,n] w_n

F1 is homogeneous of degree 0 in (w, grad w) jointly, so an overall rescaling
of the signal components leaves the travel-time equation untouched.

The amplitude S is the denominator of F1; fields with S below the configured
floor are rejected in "strict" mode and evaluated with a sign-preserving
clamped denominator in "permissive" mode (used inside line searches).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .basis import TimeBasis
from .errors import InfeasibleError
from .grid import VecField


@dataclasses.dataclass(frozen=True)
class SystemCoeffs:
    """Immutable coefficient bundle: basis-derived vectors plus the amplitude floor."""

    basis: TimeBasis
    m_floor: float = 0.01

    def __post_init__(self):
        if self.m_floor <= 0.0:
            raise ValueError("amplitude floor must be positive")
        object.__setattr__(self, "s", self.basis.slope0)
        object.__setattr__(self, "D", self.basis.deriv_overlap)
        if not (self.s != 0).any():
            raise ValueError("degenerate basis: all initial slopes vanish")

    @property
    def N(self) -> int:
        return self.basis.N


def auto_floor(q0: np.ndarray, basis: TimeBasis,
               fraction: float = 0.25) -> float:
    """Amplitude floor derived from the measured boundary data.

    The absolute data scale depends on the discretized pulse mass, so a
    fixed floor cannot be right for every run; a quarter of the smallest
    boundary amplitude keeps every measured node feasible with slack while
    still rejecting genuine sign flips of the denominator.
    """
    S = np.einsum("n,nb->b", basis.slope0, q0[1:])
    smallest = float(np.abs(S).min())
    if smallest <= 0.0:
        raise InfeasibleError("boundary data has a vanishing amplitude node")
    return fraction * smallest


def amplitude(wvals: np.ndarray, coeffs: SystemCoeffs) -> np.ndarray:
    """S = sum_n s_n w_n; wvals has the component axis first (length N or N+1)."""
    w = np.asarray(wvals, dtype=np.float64)
    comps = w if w.shape[0] == coeffs.N else w[1:]
    return np.einsum("n,n...->...", coeffs.s, comps)


def _clamped(S: np.ndarray, m_floor: float, mode: str):
    """Denominator with feasibility handling; returns (S_used, was_clamped)."""
    if mode not in ("strict", "permissive"):
        raise ValueError(f"unknown amplitude mode {mode!r}")
    bad = np.abs(S) < m_floor
    if mode == "strict":
        if bad.any():
            flat = int(np.abs(S).argmin())
            idx = np.unravel_index(flat, np.asarray(S).shape)
            raise InfeasibleError(
                f"amplitude {np.asarray(S).flat[flat]:.3e} below floor "
                f"{m_floor:.3e} at interior offset {tuple(int(v) for v in idx)}")
        return S, bad
    sign = np.where(S >= 0.0, 1.0, -1.0)
    return np.where(bad, sign * m_floor, S), bad


def F1(grad_tau: np.ndarray, grad_w: np.ndarray, wvals: np.ndarray,
       coeffs: SystemCoeffs, mode: str = "strict") -> np.ndarray:
    """First coupling term: -2 (grad tau . sum_n s_n grad w_n) / amplitude.

    grad_tau: (3, ...), grad_w: (N, 3, ...), wvals: (N, ...).
    """
    S, _ = _clamped(amplitude(wvals, coeffs), coeffs.m_floor, mode)
    T = np.einsum("n,ni...->i...", coeffs.s, grad_w)
    P = np.einsum("i...,i...->...", grad_tau, T)
    return -2.0 * P / S


def F2_row(m: int, grad_tau: np.ndarray, grad_w: np.ndarray, wvals: np.ndarray,
           lap_wm: np.ndarray, F1_value: np.ndarray,
           coeffs: SystemCoeffs) -> np.ndarray:
    """Residual of signal component m (1-based) given the F1 value."""
    D = coeffs.D
    U = np.einsum("n,ni...->i...", D[m - 1], grad_w)
    V = np.einsum("n,n...->...", D[m - 1], wvals)
    cross = np.einsum("i...,i...->...", grad_tau, U)
    return lap_wm - 2.0 * cross - F1_value * V


def _interior_parts(W: VecField):
    """Interior Laplacians, central gradients and centre values of all components."""
    v = W.values
    h = W.grid.h
    c = v[:, 1:-1, 1:-1, 1:-1]
    s = v[:, :-2, 1:-1, 1:-1] + v[:, 2:, 1:-1, 1:-1]
    s = s + v[:, 1:-1, :-2, 1:-1]
    s = s + v[:, 1:-1, 2:, 1:-1]
    s = s + v[:, 1:-1, 1:-1, :-2]
    s = s + v[:, 1:-1, 1:-1, 2:]
    lap = (s - 6.0 * c) / (h * h)
    gx = (v[:, 2:, 1:-1, 1:-1] - v[:, :-2, 1:-1, 1:-1]) / (2.0 * h)
    gy = (v[:, 1:-1, 2:, 1:-1] - v[:, 1:-1, :-2, 1:-1]) / (2.0 * h)
    gz = (v[:, 1:-1, 1:-1, 2:] - v[:, 1:-1, 1:-1, :-2]) / (2.0 * h)
    grad = np.stack([gx, gy, gz], axis=1)  # (C, 3, ...)
    return lap, grad, c


def residual(W: VecField, coeffs: SystemCoeffs, mode: str = "strict") -> VecField:
    """System residual on interior nodes; boundary entries are zero."""
    if W.ncomp != coeffs.N + 1:
        raise ValueError(f"field has {W.ncomp} components, basis wants {coeffs.N + 1}")
    lap, grad, centre = _interior_parts(W)
    gt = grad[0]
    gw = grad[1:]
    wv = centre[1:]
    f1 = F1(gt, gw, wv, coeffs, mode)
    D = coeffs.D
    U = np.einsum("mn,ni...->mi...", D, gw)
    V = np.einsum("mn,n...->m...", D, wv)
    cross = np.einsum("i...,mi...->m...", gt, U)
    out = np.zeros_like(W.values)
    out[0, 1:-1, 1:-1, 1:-1] = lap[0] - f1
    out[1:, 1:-1, 1:-1, 1:-1] = lap[1:] - 2.0 * cross - f1[None] * V
    return VecField(W.grid, out)
