"""Time-basis correctness against closed forms and quadrature oracles.

The N = 1 element on (0, T1) is P_1(t) = sqrt(3 / T1^3) t, so for T1 = 0.1
the initial slope is sqrt(3000) and the derivative overlap D_11 equals
3 / (2 T1) = 15.  For general N, integration by parts with P_n(0) = 0 gives
the structural identity D + D^T = P(T1) P(T1)^T, which the implementation
does not use anywhere and therefore makes a good independent check.
"""

import math

import numpy as np
import pytest

from convexwave.basis import MAX_ORDER, BasisError, TimeBasis, build_time_basis

T1 = 0.1


@pytest.mark.parametrize("N", [1, 3, 5])
def test_gram_is_identity(N):
    tb = build_time_basis(T1, N)
    G = tb.gram()
    assert np.abs(G - np.eye(N)).max() < 1e-9


@pytest.mark.parametrize("N", [1, 3, 5])
def test_vanishes_at_zero(N):
    tb = build_time_basis(T1, N)
    p0 = np.array([tb.eval(n, 0.0) for n in range(1, N + 1)])
    assert np.abs(p0).max() < 1e-14
    # structurally: no constant term at all
    assert np.all(tb.coeffs[:, 0] == 0.0)


def test_closed_forms_n1():
    tb = build_time_basis(T1, 1)
    assert abs(tb.slope0[0] - math.sqrt(3000.0)) < 1e-9
    assert abs(tb.deriv_overlap[0, 0] - 15.0) < 1e-9
    # P_1(t) = sqrt(3/T1^3) t everywhere, not just at the endpoints
    t = np.linspace(0.0, T1, 7)
    assert np.allclose(tb.eval(1, t), math.sqrt(3.0 / T1**3) * t, atol=1e-12)


@pytest.mark.parametrize("N", [1, 3, 5])
def test_gram_matches_trapezoid_quadrature(N):
    tb = build_time_basis(T1, N)
    t = np.linspace(0.0, T1, 20001)
    P = tb.eval_all(t)
    G = np.trapezoid(P[:, None, :] * P[None, :, :], t, axis=2)
    assert np.abs(G - np.eye(N)).max() < 1e-6


@pytest.mark.parametrize("N", [1, 3, 5])
def test_deriv_overlap_integration_by_parts(N):
    tb = build_time_basis(T1, N)
    D = tb.deriv_overlap
    end = tb.end_values()
    res = np.abs(D + D.T - np.outer(end, end)).max()
    # the entries grow like T1^-1 with strong cancellation at higher N, so
    # compare relative to the matrix scale
    assert res < 1e-10 * max(1.0, float(np.abs(D).max()))


@pytest.mark.parametrize("N", [1, 3, 5])
def test_slope0_matches_derivative_at_zero(N):
    tb = build_time_basis(T1, N)
    for n in range(1, N + 1):
        assert abs(tb.eval_deriv(n, 0.0) - tb.slope0[n - 1]) < 1e-12


def test_json_roundtrip():
    tb = build_time_basis(T1, 3)
    back = TimeBasis.from_json(tb.to_json())
    assert back.T1 == tb.T1 and back.N == tb.N
    assert np.array_equal(back.coeffs, tb.coeffs)


def test_rejects_bad_arguments():
    with pytest.raises(BasisError):
        build_time_basis(0.0, 1)
    with pytest.raises(BasisError):
        build_time_basis(T1, 0)
    with pytest.raises(BasisError):
        build_time_basis(T1, MAX_ORDER + 1)
