# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: leapfrog wave update and eikonal Gauss-Seidel sweeps.

Kept free of OpenMP and reductions with data races so repeated runs are
bit-identical.  The per-node arithmetic mirrors the numpy fallback operation
for operation.
"""
from libc.math cimport sqrt

DEF BIG = 1e30


def wave_step(double[:, :, ::1] u_next, double[:, :, ::1] u_curr,
              double[:, :, ::1] u_prev, double[:, :, ::1] alpha):
    """In-place interior update  u_next = 2 u - u_old + alpha (sum_nb - 6 u).

    alpha = dt^2 / (c h^2) sampled per node.  Boundary planes of u_next are
    left untouched (the caller keeps them at zero).
    """
    cdef Py_ssize_t nx = u_curr.shape[0]
    cdef Py_ssize_t ny = u_curr.shape[1]
    cdef Py_ssize_t nz = u_curr.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double s
    with nogil:
        for i in range(1, nx - 1):
            for j in range(1, ny - 1):
                for k in range(1, nz - 1):
                    s = u_curr[i - 1, j, k] + u_curr[i + 1, j, k]
                    s = s + u_curr[i, j - 1, k]
                    s = s + u_curr[i, j + 1, k]
                    s = s + u_curr[i, j, k - 1]
                    s = s + u_curr[i, j, k + 1]
                    u_next[i, j, k] = (2.0 * u_curr[i, j, k] - u_prev[i, j, k]) \
                        + alpha[i, j, k] * (s - 6.0 * u_curr[i, j, k])


cdef inline double _solve(double a, double b, double c, double f) nogil:
    # Godunov local solver: smallest t with sum_i max(t - a_i, 0)^2 = f^2,
    # a_i the sorted axis minima.  Missing neighbours carry the BIG sentinel.
    cdef double x, t, ss
    if a > b:
        x = a; a = b; b = x
    if b > c:
        x = b; b = c; c = x
    if a > b:
        x = a; a = b; b = x
    t = a + f
    if t <= b:
        return t
    x = 2.0 * f * f - (a - b) * (a - b)
    t = 0.5 * ((a + b) + sqrt(x))
    if t <= c:
        return t
    ss = (a + b) + c
    x = ss * ss - 3.0 * (((a * a + b * b) + c * c) - f * f)
    if x < 0.0:
        x = 0.0
    return (ss + sqrt(x)) / 3.0


def eikonal_sweep(double[:, :, ::1] tau, double[:, :, ::1] rhs,
                  unsigned char[:, :, ::1] frozen, int ordering):
    """One in-place Gauss-Seidel sweep of the Godunov upwind update.

    rhs = slowness * h per node.  Bits 0/1/2 of `ordering` flip the x/y/z
    traversal direction, giving the 8 sweep orientations.  Returns the
    largest decrease applied to any node.
    """
    cdef Py_ssize_t nx = tau.shape[0]
    cdef Py_ssize_t ny = tau.shape[1]
    cdef Py_ssize_t nz = tau.shape[2]
    cdef Py_ssize_t ii, jj, kk, i, j, k
    cdef int fx = ordering & 1
    cdef int fy = (ordering >> 1) & 1
    cdef int fz = (ordering >> 2) & 1
    cdef double a, b, c, x, told, tnew, maxdiff = 0.0
    with nogil:
        for ii in range(nx):
            i = nx - 1 - ii if fx else ii
            for jj in range(ny):
                j = ny - 1 - jj if fy else jj
                for kk in range(nz):
                    k = nz - 1 - kk if fz else kk
                    if frozen[i, j, k]:
                        continue
                    a = tau[i - 1, j, k] if i > 0 else BIG
                    x = tau[i + 1, j, k] if i < nx - 1 else BIG
                    if x < a:
                        a = x
                    b = tau[i, j - 1, k] if j > 0 else BIG
                    x = tau[i, j + 1, k] if j < ny - 1 else BIG
                    if x < b:
                        b = x
                    c = tau[i, j, k - 1] if k > 0 else BIG
                    x = tau[i, j, k + 1] if k < nz - 1 else BIG
                    if x < c:
                        c = x
                    told = tau[i, j, k]
                    tnew = _solve(a, b, c, rhs[i, j, k])
                    if tnew < told:
                        tau[i, j, k] = tnew
                        if told - tnew > maxdiff:
                            maxdiff = told - tnew
    return maxdiff
