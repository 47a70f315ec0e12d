"""Orthonormal polynomial basis of L2(0, T1) whose elements vanish at t = 0.

Gram-Schmidt is applied to {t, t^2, ..., t^N}.  Every basis function keeps
P_n(0) = 0 (no constant term enters), so a truncated expansion of the
time-shifted signal automatically satisfies the zero initial condition, while
the slopes P_n'(0) reproduce its initial time derivative -- the wave
amplitude, which the reduced system requires to stay positive.

The orthogonalisation runs in exact rational arithmetic on the reference
interval (0, 1), where monomial inner products are 1/(i + j + 1); only the
final normalisation and the rescaling to (0, T1) leave the rationals.  For
T1 = 0.1, N = 1 this yields the closed forms P_1(t) = sqrt(3000) t,
P_1'(0) = sqrt(3000), and a derivative-overlap integral of 3/(2 T1) = 15.
"""

from __future__ import annotations

import dataclasses
from fractions import Fraction
from math import sqrt

import numpy as np

MAX_ORDER = 8

# When enabled, eval/eval_deriv reject samples outside [0, T1].
DEBUG_RANGE_CHECK = False


class BasisError(ValueError):
    pass


def _inner(c: list[Fraction], d: list[Fraction]) -> Fraction:
    # <s^a, s^b> = 1/(a + b + 1) on (0, 1)
    acc = Fraction(0)
    for a, ca in enumerate(c):
        if ca:
            for b, db in enumerate(d):
                if db:
                    acc += ca * db * Fraction(1, a + b + 1)
    return acc


def _orthogonalise(order: int) -> list[tuple[list[Fraction], Fraction]]:
    done: list[tuple[list[Fraction], Fraction]] = []
    for n in range(1, order + 1):
        c = [Fraction(0)] * (order + 1)
        c[n] = Fraction(1)
        for q, q2 in done:
            w = _inner(c, q) / q2
            c = [a - w * b for a, b in zip(c, q)]
        done.append((c, _inner(c, c)))
    return done


@dataclasses.dataclass(frozen=True)
class TimeBasis:
    """Orthonormal polynomials on (0, T1) with P_n(0) = 0, n = 1..N.

    coeffs[n-1, k] multiplies t^k; column 0 is identically zero.
    """

    T1: float
    N: int
    coeffs: np.ndarray

    def _check_range(self, t):
        if DEBUG_RANGE_CHECK:
            t = np.asarray(t)
            if (t < -1e-12).any() or (t > self.T1 + 1e-12).any():
                raise BasisError("evaluation outside [0, T1]")

    def eval(self, n: int, t):
        """P_n(t), n in 1..N; t scalar or array."""
        self._check_range(t)
        return np.polynomial.polynomial.polyval(t, self.coeffs[n - 1])

    def eval_deriv(self, n: int, t):
        """P_n'(t)."""
        self._check_range(t)
        d = self.coeffs[n - 1][1:] * np.arange(1, self.coeffs.shape[1])
        return np.polynomial.polynomial.polyval(t, d)

    def eval_all(self, t) -> np.ndarray:
        """(N, ...) stack of P_n(t)."""
        return np.stack([self.eval(n, t) for n in range(1, self.N + 1)])

    @property
    def slope0(self) -> np.ndarray:
        """P_n'(0) for n = 1..N; these weight the expansion into the amplitude."""
        return self.coeffs[:, 1].copy()

    @property
    def deriv_overlap(self) -> np.ndarray:
        """Matrix with entry [m-1, n-1] = integral of P_n' P_m over (0, T1)."""
        k = np.arange(self.coeffs.shape[1])
        D = np.zeros((self.N, self.N))
        for m in range(self.N):
            for n in range(self.N):
                acc = 0.0
                for kk in range(1, len(k)):
                    for ll in range(1, len(k)):
                        acc += kk * self.coeffs[n, kk] * self.coeffs[m, ll] \
                            * self.T1 ** (kk + ll) / (kk + ll)
                D[m, n] = acc
        return D

    def gram(self) -> np.ndarray:
        """Analytic Gram matrix; equals the identity up to roundoff."""
        G = np.zeros((self.N, self.N))
        for m in range(self.N):
            for n in range(self.N):
                acc = 0.0
                for kk in range(1, self.coeffs.shape[1]):
                    for ll in range(1, self.coeffs.shape[1]):
                        acc += self.coeffs[m, kk] * self.coeffs[n, ll] \
                            * self.T1 ** (kk + ll + 1) / (kk + ll + 1)
                G[m, n] = acc
        return G

    def end_values(self) -> np.ndarray:
        """P_n(T1)."""
        return np.asarray([self.eval(n, self.T1) for n in range(1, self.N + 1)])

    def to_json(self) -> dict:
        return {"T1": self.T1, "N": self.N, "coefficients": self.coeffs.tolist()}

    @staticmethod
    def from_json(d: dict) -> "TimeBasis":
        return TimeBasis(float(d["T1"]), int(d["N"]), np.asarray(d["coefficients"]))


def build_time_basis(T1: float, N: int) -> TimeBasis:
    """Construct the basis for window length T1 > 0 and order 1 <= N <= 8."""
    if not (T1 > 0.0):
        raise BasisError(f"window length must be positive, got {T1}")
    if not (1 <= int(N) <= MAX_ORDER):
        raise BasisError(f"order must lie in 1..{MAX_ORDER}, got {N}")
    N = int(N)
    raw = _orthogonalise(N)
    coeffs = np.zeros((N, N + 1))
    for n, (c, c2) in enumerate(raw):
        norm = sqrt(float(c2))
        for k in range(1, N + 1):
            # rescale s = t / T1 and renormalise on (0, T1)
            coeffs[n, k] = float(c[k]) / norm * T1 ** (-k - 0.5)
    return TimeBasis(float(T1), N, coeffs)
