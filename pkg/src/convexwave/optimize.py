"""Gradient descent with backtracking and the coarse-to-fine refinement loop.

The minimization runs plain gradient descent on the free node values.  Each
iteration retries with a halved step until the objective strictly decreases,
which makes the J-sequence monotone by construction regardless of how the
Carleman weight scales the problem.  Objective and gradient evaluations run
the amplitude denominator in permissive (clamping) mode so that a trial
point dipping below the amplitude floor costs a large J instead of raising;
the per-iterate feasibility margin is recorded in the trace.

`multilevel` chains levels on nested grids: optimize, trilinearly refine,
re-impose that level's measured Dirichlet data, repeat.  `baseline_start`
builds the conventional constant-speed initial guess: unit-speed travel
time in the interior and a discrete-harmonic extension of the measured
boundary values for the amplitude components.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .acquire import CauchyProjection
from .errors import ConfigError, NumericalError, StallError
from .grid import VecField, interp_refine_vec
from .objective import DofMap, ObjectiveConfig, eval_J, grad_J
from .system import SystemCoeffs, amplitude


@dataclasses.dataclass(frozen=True)
class MultilevelPlan:
    spacings: tuple[float, ...] = (1 / 8, 1 / 16, 1 / 32)
    grad_tol: float = 2e-2
    max_iter: int = 5000
    step0: float = 0.1
    max_halvings: int = 40
    project: bool = False

    def __post_init__(self):
        if not self.spacings:
            raise ConfigError("plan needs at least one level")
        for a, b in zip(self.spacings, self.spacings[1:]):
            if not np.isclose(b, a / 2.0, rtol=1e-12):
                raise ConfigError(
                    f"level spacings must halve: got {a} -> {b}")
        if self.step0 <= 0 or self.grad_tol <= 0 or self.max_iter < 1:
            raise ConfigError("step0 and grad_tol must be positive, "
                              "max_iter at least 1")


@dataclasses.dataclass
class RunTrace:
    """Per-iteration log of one level: (iteration, J, grad_norm, step, margin)."""
    level_h: float
    rows: list = dataclasses.field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def append(self, k: int, J: float, grad_norm: float, step: float,
               margin: float) -> None:
        if self.rows and J > self.rows[-1][1]:
            raise NumericalError("objective increased across accepted steps")
        self.rows.append((k, float(J), float(grad_norm), float(step),
                          float(margin)))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,J,grad_norm,step,margin\n")
            for row in self.rows:
                fh.write("%d,%.17g,%.17g,%.17g,%.17g\n" % row)

    def summary(self) -> dict:
        last = self.rows[-1] if self.rows else (0, np.nan, np.nan, 0.0, np.nan)
        return {
            "level_h": self.level_h,
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time_s": round(self.wall_time, 3),
            "final_J": last[1],
            "final_grad_norm": last[2],
            "final_margin": last[4],
        }


def _margin(W: VecField, coeffs: SystemCoeffs) -> float:
    """Smallest interior amplitude: the distance to the feasibility floor."""
    interior = W.values[1:, 1:-1, 1:-1, 1:-1]
    return float(amplitude(interior, coeffs).min())


def _project_floor(W: VecField, coeffs: SystemCoeffs) -> None:
    """Minimal-norm nudge of the amplitude components at offending interior
    nodes so the amplitude comes back up to the floor."""
    interior = W.values[1:, 1:-1, 1:-1, 1:-1]
    S = amplitude(interior, coeffs)
    low = S < coeffs.m_floor
    if not low.any():
        return
    scale = coeffs.s / float(np.dot(coeffs.s, coeffs.s))
    deficit = coeffs.m_floor - S[low]
    interior[:, low] += scale[:, None] * deficit[None, :]


def gd_level(W0: VecField, data: CauchyProjection, cfg: ObjectiveConfig,
             coeffs: SystemCoeffs, plan: MultilevelPlan,
             evaluate=None, gradient=None):
    """Backtracking gradient descent on one grid.

    Stops when the Euclidean norm of the gradient over free dofs falls below
    plan.grad_tol.  Returns (W, RunTrace); trace.converged is False when the
    iteration cap was reached first.  Raises StallError (with the trace
    attached) when max_halvings step halvings produce no descent.

    evaluate/gradient are replaceable for testing; the defaults evaluate the
    weighted objective in permissive amplitude mode.
    """
    if evaluate is None:
        def evaluate(W):
            return eval_J(W, data, cfg, coeffs, mode="permissive")
    if gradient is None:
        def gradient(W):
            return grad_J(W, data, cfg, coeffs, mode="permissive")

    trace = RunTrace(level_h=W0.grid.h)
    started = time.perf_counter()
    W = VecField(W0.grid, W0.values.copy())
    if plan.project:
        _project_floor(W, coeffs)
    J = evaluate(W)
    # row k describes W_k before the k-th step; rows[0] is the start
    for k in range(plan.max_iter + 1):
        G = gradient(W)
        gnorm = float(np.sqrt((G.values * G.values).sum()))
        margin = _margin(W, coeffs)
        if gnorm < plan.grad_tol:
            trace.append(k, J, gnorm, 0.0, margin)
            trace.converged = True
            break
        if k == plan.max_iter:
            trace.append(k, J, gnorm, 0.0, margin)
            break
        step = plan.step0
        for _ in range(plan.max_halvings):
            trial = VecField(W.grid, W.values - step * G.values)
            if plan.project:
                _project_floor(trial, coeffs)
            Jt = evaluate(trial)
            if Jt < J:
                break
            step *= 0.5
        else:
            trace.wall_time = time.perf_counter() - started
            err = StallError(
                f"no descent after {plan.max_halvings} step halvings "
                f"(iteration {k}, J={J:.6e}, |grad|={gnorm:.3e})")
            err.trace = trace
            raise err
        trace.append(k, J, gnorm, step, margin)
        W, J = trial, Jt
    trace.wall_time = time.perf_counter() - started
    return W, trace


def multilevel(W0: VecField, datasets, cfg: ObjectiveConfig,
               coeffs: SystemCoeffs, plan: MultilevelPlan):
    """Optimize across nested grids, finest last.

    datasets: one CauchyProjection per plan level, grids nested and matching
    the plan spacings.  The result of each level is trilinearly refined onto
    the next grid and that level's measured boundary values are re-imposed.
    Returns (W on finest grid, [RunTrace per level]).
    """
    if len(datasets) != len(plan.spacings):
        raise ConfigError(
            f"plan has {len(plan.spacings)} levels but {len(datasets)} "
            "datasets were supplied")
    for h, data in zip(plan.spacings, datasets):
        if not np.isclose(data.grid.h, h, rtol=1e-9):
            raise ConfigError(
                f"dataset spacing {data.grid.h} does not match level {h}")
    for a, b in zip(datasets, datasets[1:]):
        if not b.grid.is_refinement_of(a.grid):
            raise ConfigError("level grids must be nested refinements")
    if W0.grid != datasets[0].grid:
        raise ConfigError("start vector lives on the wrong grid")

    W = W0
    traces = []
    for i, data in enumerate(datasets):
        W, trace = gd_level(W, data, cfg, coeffs, plan)
        traces.append(trace)
        if i + 1 < len(datasets):
            W = interp_refine_vec(W, datasets[i + 1].grid)
            DofMap(W.grid).apply_dirichlet(W, datasets[i + 1])
    return W, traces


def _harmonic_extension(grid, bvalues: np.ndarray, bnodes: np.ndarray,
                        rtol: float = 1e-10) -> np.ndarray:
    """Solve the 7-point Laplace equation on interior nodes with the given
    hull values (conjugate gradients, matrix-free)."""
    dims = grid.dims
    full = np.zeros(dims)
    full[bnodes[:, 0], bnodes[:, 1], bnodes[:, 2]] = bvalues
    inner = (dims[0] - 2, dims[1] - 2, dims[2] - 2)
    n = inner[0] * inner[1] * inner[2]

    def neighbour_sum(V):
        s = V[:-2, 1:-1, 1:-1] + V[2:, 1:-1, 1:-1]
        s = s + V[1:-1, :-2, 1:-1]
        s = s + V[1:-1, 2:, 1:-1]
        s = s + V[1:-1, 1:-1, :-2]
        s = s + V[1:-1, 1:-1, 2:]
        return s

    def matvec(v):
        V = np.zeros(dims)
        V[1:-1, 1:-1, 1:-1] = v.reshape(inner)
        return (6.0 * V[1:-1, 1:-1, 1:-1] - neighbour_sum(V)).ravel()

    rhs = neighbour_sum(full).ravel()
    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    sol, info = cg(op, rhs, rtol=rtol, atol=0.0, maxiter=10 * max(dims))
    if info != 0:
        raise NumericalError(f"harmonic extension CG did not converge ({info})")
    full[1:-1, 1:-1, 1:-1] = sol.reshape(inner)
    return full


def baseline_start(data: CauchyProjection) -> VecField:
    """Constant-speed initial guess consistent with the measured data.

    Component 0 is the unit-speed travel time |x - x0| at interior nodes,
    shifted by the mean clock offset between the measured arrivals and that
    distance: picking conventions carry a small uniform delay, a constant
    that cancels in the recovered |grad tau|^2 but would otherwise put the
    start at odds with its own boundary data.  The amplitude components
    solve the discrete Laplace equation with the measured boundary values.
    The hull carries the measured data exactly.
    """
    grid = data.grid
    dofs = DofMap(grid)
    vals = np.empty((data.q0.shape[0],) + grid.dims)
    X, Y, Z = grid.meshgrid()
    x0 = data.source
    dist = np.sqrt((X - x0[0]) ** 2 + (Y - x0[1]) ** 2 + (Z - x0[2]) ** 2)
    bn = dofs.bnodes
    shift = float((data.q0[0] - dist[bn[:, 0], bn[:, 1], bn[:, 2]]).mean())
    vals[0] = dist + shift
    for n in range(1, data.q0.shape[0]):
        vals[n] = _harmonic_extension(grid, data.q0[n], dofs.bnodes)
    W = VecField(grid, vals)
    dofs.apply_dirichlet(W, data)
    return W


def model_start(data: CauchyProjection, tb, pulse_eps: float | None = None,
                dt: float | None = None) -> VecField:
    """Initial guess from the constant-speed model field itself.

    Instead of extending the measured boundary values inward, evaluate the
    unit-speed pulse at every node via the radial reference solution and push
    it through exactly the data reduction the boundary values went through:
    same arrival convention, same window, same basis projection, same mean
    amplitude normalization.  The result is an interior iterate that already
    satisfies the reduced system away from the inclusion, so descent spends
    its budget on the anomaly rather than on re-deriving the background.
    The hull still carries the measured data exactly.
    """
    from .acquire import (_sample_columns, _window_matrix,
                          double_time_integral, pick_arrival)
    from .forward import radial_unit_solution

    if pulse_eps is None:
        pulse_eps = data.meta.get("pulse_eps")
        if pulse_eps is None:
            raise ConfigError("pulse_eps not recorded with this data; "
                              "pass it explicitly")
    pulse_eps = float(pulse_eps)
    if dt is None:
        dt = tb.T1 / 40.0
    grid = data.grid
    dofs = DofMap(grid)
    X, Y, Z = grid.meshgrid()
    x0 = data.source
    dist = np.sqrt((X - x0[0]) ** 2 + (Y - x0[1]) ** 2 + (Z - x0[2]) ** 2)
    bn = dofs.bnodes
    shift = float((data.q0[0] - dist[bn[:, 0], bn[:, 1], bn[:, 2]]).mean())

    # one reference trace per distinct radius; nodes share by symmetry
    flat = dist.ravel()
    uniq, inv = np.unique(np.round(flat, 12), return_inverse=True)
    t_end = float(uniq.max()) + shift + tb.T1 + 0.3
    nt = int(math.ceil(t_end / dt)) + 2
    traces = radial_unit_solution(uniq, pulse_eps, dt, nt)

    # the model's own arrival convention at a mid-range radius sets the
    # window phase, exactly as picking does for the recorded traces
    jref = uniq.size // 2
    offset = pick_arrival(traces[:, jref], dt * np.arange(nt)) - uniq[jref]

    tgrid, proj = _window_matrix(tb, dt)
    P = double_time_integral(traces, dt)
    tmat = (uniq + offset)[:, None] + tgrid[None, :]
    w = _sample_columns(P, tmat, dt)
    w = w - w[:, :1]
    wn = (w @ proj).T  # (N, n_unique)

    # same normalization the measured data received: hull mean amplitude 1
    bflat = np.ravel_multi_index(tuple(bn.T), grid.dims)
    S_hull = np.einsum("n,nb->b", tb.slope0, wn[:, inv[bflat]])
    mean = float(S_hull.mean())
    if not mean > 0.0:
        raise NumericalError("reference field has non-positive mean amplitude")
    target = data.meta.get("amp_target", 1.0)
    wn *= target / mean

    vals = np.empty((data.q0.shape[0],) + grid.dims)
    vals[0] = dist + shift
    for n in range(1, data.q0.shape[0]):
        vals[n] = wn[n - 1, inv].reshape(grid.dims)
    W = VecField(grid, vals)
    dofs.apply_dirichlet(W, data)
    return W
