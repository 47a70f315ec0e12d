"""From boundary recordings to inversion inputs.

The chain per boundary node: pick the arrival of the first strong wave from
the raw trace (the earliest local maximum within PICK_FRACTION of the global
one; picking the outright global maximum instead is equivalent on the hull
for the phantoms shipped here but lets the pick jump between wave branches
on the subsurface planes, which wrecks the derived normal derivatives),
integrate the trace twice in time, shift the result so the local clock
starts at the arrival, force the shifted signal to vanish at t = 0, and
project the window [0, T1] onto the time basis.  Component 0 of the
resulting data vectors is the arrival time itself; components 1..N are the
basis coefficients.

Neumann-side data on the top face are built from the recorded plane stack:
arrival times and shifted signals are computed on three horizontal planes
below the face and combined with the one-sided 3-point stencil at the
inversion spacing ("plane_stack" route).  A simpler route that shifts the
double-integrated raw normal-derivative trace is kept as an option
("shifted_f1"); it ignores the arrival-slope chain-rule contribution.

Multiplicative noise uses one uniform [-1, 1] draw per time sample, shared
across space, applied to the top-face data streams only (trace rows on the
open top face, the normal-derivative block, and the plane stack); lateral
and bottom Dirichlet data stay clean.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .basis import TimeBasis
from .errors import ConfigError, ContaminationError, PickError
from .forward import WaveRecording
from .grid import BoundaryMask, Grid3
from .io import load_blocks, save_blocks

PICK_FRACTION = 0.5  # earliest wave at least this strong relative to the global max


def pick_arrival(trace: np.ndarray, times: np.ndarray,
                 frac: float = PICK_FRACTION) -> float:
    """Arrival time of the first strong pulse in a single trace.

    Finds the global maximum of |trace|, walks back to the earliest local
    maximum at least `frac` of it, and refines with a 3-point parabola.
    Ties break toward the earlier sample.
    """
    a = np.abs(np.asarray(trace, dtype=np.float64))
    if a.size < 3:
        raise PickError("trace too short to pick")
    gmax = float(a.max())
    if gmax == 0.0:
        raise PickError("no arrival: trace is identically zero")
    inner = (a[1:-1] >= a[:-2]) & (a[1:-1] >= a[2:]) & (a[1:-1] >= frac * gmax)
    cand = np.flatnonzero(inner)
    if cand.size == 0:
        i = int(a.argmax())
    else:
        i = int(cand[0]) + 1
    if i == 0 or i == a.size - 1:
        return float(times[i])
    y1, y2, y3 = a[i - 1], a[i], a[i + 1]
    den = y1 - 2.0 * y2 + y3
    delta = 0.0 if den >= 0.0 else float(np.clip(0.5 * (y1 - y3) / den, -1.0, 1.0))
    dt = times[1] - times[0]
    return float(times[i] + delta * dt)


def double_time_integral(trace: np.ndarray, dt: float) -> np.ndarray:
    """Two cumulative trapezoid integrations along axis 0; starts at zero."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.shape[0] < 2:
        raise PickError("need at least two samples to integrate")
    p1 = cumulative_trapezoid(trace, dx=dt, axis=0, initial=0.0)
    return cumulative_trapezoid(p1, dx=dt, axis=0, initial=0.0)


def _sample_columns(P: np.ndarray, t: np.ndarray, dt: float) -> np.ndarray:
    """Linear interpolation of P[:, j] at times t[j, k] -> (n, k)."""
    nt = P.shape[0]
    r = t / dt
    i0 = np.clip(np.floor(r).astype(np.intp), 0, nt - 2)
    fr = r - i0
    cols = np.arange(P.shape[1])[:, None]
    return P[i0, cols] * (1.0 - fr) + P[i0 + 1, cols] * fr


def time_shift(p: np.ndarray, dt: float, tau0: float, T1: float) -> np.ndarray:
    """w(t_j) = p(tau0 + t_j) - p(tau0) on t_j = j dt covering [0, T1]."""
    p = np.asarray(p, dtype=np.float64)
    m = int(round(T1 / dt))
    if m < 2:
        raise ConfigError(f"window T1 = {T1} under-resolved at dt = {dt}")
    t_end = (p.shape[0] - 1) * dt
    if tau0 < 0.0 or tau0 + T1 > t_end + 1e-12:
        raise PickError(f"shift {tau0} + window {T1} exceeds recording {t_end}")
    t = tau0 + dt * np.arange(m + 1)
    w = np.interp(t, dt * np.arange(p.shape[0]), p)
    return w - w[0]


def project_basis(w: np.ndarray, dt: float, tb: TimeBasis) -> np.ndarray:
    """Trapezoid projection of samples on [0, T1] onto each basis function."""
    w = np.asarray(w, dtype=np.float64)
    m = w.shape[-1] - 1
    if abs(m * dt - tb.T1) > 1e-9:
        raise ConfigError("sample window does not match the basis interval")
    t = dt * np.arange(m + 1)
    wts = np.full(m + 1, dt)
    wts[0] = wts[-1] = 0.5 * dt
    P = tb.eval_all(t)  # (N, m+1)
    return w @ (P * wts).T


def add_noise(rec: WaveRecording, eps: float, seed: int) -> WaveRecording:
    """Multiplicative noise g (1 + eps xi_t) on the top-face data streams."""
    if eps == 0.0:
        return rec
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1.0, 1.0, rec.times.shape[0])
    factor = 1.0 + eps * xi
    mask = BoundaryMask(rec.cfg.inner)
    on_top = mask.gamma_top[rec.bnodes[:, 0], rec.bnodes[:, 1], rec.bnodes[:, 2]]
    f0 = rec.f0.copy()
    f0[:, on_top] = f0[:, on_top] * factor[:, None]
    f1 = rec.f1 * factor[:, None, None]
    aux = rec.aux * factor[None, :, None, None]
    return WaveRecording(rec.cfg, rec.times, rec.bnodes, f0, f1, aux,
                         rec.safe_until, rec.safe_until_aux, rec.c_stats,
                         {"eps": eps, "seed": int(seed)}, rec.energy)


# ---------------------------------------------------------------------------
# level-grid acquisition
# ---------------------------------------------------------------------------


def _level_ratio(rec: WaveRecording, level: Grid3) -> int:
    inner = rec.cfg.inner
    r = level.h / inner.h
    ri = int(round(r))
    ok = (
        abs(r - ri) < 1e-9 and ri >= 1
        and all(abs(a - b) < 1e-12 for a, b in zip(level.origin, inner.origin))
        and all((nl - 1) * ri == ni - 1 for nl, ni in zip(level.dims, inner.dims))
    )
    if not ok:
        raise ConfigError(
            f"inversion grid (h={level.h}) is not a node-aligned coarsening "
            f"of the recording grid (h={inner.h})")
    return ri


def _recording_rows(rec: WaveRecording, nodes: np.ndarray, ratio: int) -> np.ndarray:
    dims = rec.cfg.inner.dims
    want = np.ravel_multi_index(tuple((nodes * ratio).T), dims)
    have = np.ravel_multi_index(tuple(rec.bnodes.T), dims)
    rows = np.searchsorted(have, want)
    if (rows >= have.size) .any() or (have[np.minimum(rows, have.size - 1)] != want).any():
        raise ConfigError("level boundary node missing from the recording")
    return rows


@dataclasses.dataclass
class PickedArrivals:
    """Arrival times at one inversion spacing.

    tau0 aligns with BoundaryMask(grid).boundary_nodes(); plane_tau holds the
    full-face arrival times on the three stacked planes (spacing grid.h);
    dz_tau0 aligns with BoundaryMask(grid).top_nodes().
    """

    grid: Grid3
    tau0: np.ndarray
    plane_tau: np.ndarray
    dz_tau0: np.ndarray


def pick_all(rec: WaveRecording, level: Grid3,
             frac: float = PICK_FRACTION) -> PickedArrivals:
    """Pick arrivals for every hull node and the top-face plane stack."""
    ratio = _level_ratio(rec, level)
    if 2 * ratio >= rec.aux.shape[0]:
        raise ConfigError("recorded plane stack too shallow for this spacing")
    mask = BoundaryMask(level)
    bn = mask.boundary_nodes()
    rows = _recording_rows(rec, bn, ratio)
    guard = rec.pulse_halfwidth

    tau0 = np.empty(bn.shape[0])
    for j, row in enumerate(rows):
        tau0[j] = pick_arrival(rec.f0[:, row], rec.times, frac)
    late = tau0 + guard > rec.safe_until[rows] - guard
    if late.any():
        raise ContaminationError(
            f"{int(late.sum())} hull nodes have windows reaching wall "
            "reflections; enlarge the box or shorten the run")

    mxl, myl = level.dims[0], level.dims[1]
    plane_tau = np.empty((3, mxl, myl))
    for ell in range(3):
        block = rec.aux[ell * ratio]
        safe = rec.safe_until_aux[ell * ratio]
        for ix in range(mxl):
            for iy in range(myl):
                t = pick_arrival(block[:, ix * ratio, iy * ratio], rec.times, frac)
                if t + guard > safe[ix * ratio, iy * ratio] - guard:
                    raise ContaminationError(
                        "plane-stack window reaches wall reflections")
                plane_tau[ell, ix, iy] = t

    top = mask.top_nodes()
    dz_tau0 = (3.0 * plane_tau[0, top[:, 0], top[:, 1]]
               - 4.0 * plane_tau[1, top[:, 0], top[:, 1]]
               + plane_tau[2, top[:, 0], top[:, 1]]) / (2.0 * level.h)
    return PickedArrivals(level, tau0, plane_tau, dz_tau0)


@dataclasses.dataclass
class CauchyProjection:
    """Reduced boundary data at one inversion spacing.

    q0[(N+1), nb]: per hull node, component 0 the arrival time, 1..N the
    basis coefficients of the shifted signal.  q1[(N+1), ntop]: the same
    structure for the outward normal derivative on the open top face.
    """

    grid: Grid3
    T1: float
    source: tuple[float, float, float]
    q0: np.ndarray
    q1: np.ndarray
    meta: dict

    @property
    def N(self) -> int:
        return self.q0.shape[0] - 1

    def save(self, directory: str, name: str) -> None:
        meta = {
            "kind": "cauchy-projection",
            "grid": self.grid.to_json(),
            "T1": self.T1,
            "source": list(self.source),
            "extra": self.meta,
        }
        save_blocks(directory, name, meta, {"q0": self.q0, "q1": self.q1})

    @staticmethod
    def load(directory: str, name: str) -> "CauchyProjection":
        meta, arr = load_blocks(directory, name)
        if meta.get("kind") != "cauchy-projection":
            raise ConfigError(f"{directory}/{name} is not reduced boundary data")
        return CauchyProjection(Grid3.from_json(meta["grid"]), float(meta["T1"]),
                                tuple(meta["source"]), arr["q0"], arr["q1"],
                                meta.get("extra", {}))


def _window_matrix(tb: TimeBasis, dt: float) -> tuple[np.ndarray, np.ndarray]:
    m = int(round(tb.T1 / dt))
    if abs(m * dt - tb.T1) > 1e-9:
        raise ConfigError("T1 must be an integer number of recording steps")
    if m < 4:
        raise ConfigError(f"window T1 = {tb.T1} under-resolved at dt = {dt}")
    t = dt * np.arange(m + 1)
    wts = np.full(m + 1, dt)
    wts[0] = wts[-1] = 0.5 * dt
    return t, (tb.eval_all(t) * wts).T  # (m+1, N)


def oracle_arrivals(tau, level: Grid3) -> PickedArrivals:
    """Arrival data taken from a travel-time field instead of trace picks.

    `tau` is a TravelTime (or any object with .tau ScalarField) whose grid
    must contain every node of `level` exactly; typically a fast-sweep
    solution on a grid reaching down to the source.  Useful both as the
    cross-validation driver against picked arrivals and as a clean-data
    route when waveform picking is the suspected weak link.
    """
    field = tau.tau if hasattr(tau, "tau") else tau
    g = field.grid
    ratio = level.h / g.h
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("travel-time grid spacing does not divide level spacing")
    r = int(round(ratio))
    offs = [(level.origin[d] - g.origin[d]) / g.h for d in range(3)]
    for d, o in enumerate(offs):
        if abs(o - round(o)) > 1e-9:
            raise ConfigError("level nodes do not coincide with travel-time nodes")
    off = [int(round(o)) for o in offs]
    idx_axes = [off[d] + r * np.arange(level.dims[d]) for d in range(3)]
    for d in range(3):
        if idx_axes[d][-1] >= g.dims[d] or idx_axes[d][0] < 0:
            raise ConfigError("level grid sticks out of the travel-time grid")
    cube = field.values[np.ix_(idx_axes[0], idx_axes[1], idx_axes[2])]

    mask = BoundaryMask(level)
    bn = mask.boundary_nodes()
    tau0 = cube[bn[:, 0], bn[:, 1], bn[:, 2]]

    ztop_i = off[2] + r * (level.dims[2] - 1)
    plane_tau = np.empty((3, level.dims[0], level.dims[1]))
    for ell in range(3):
        plane_tau[ell] = field.values[np.ix_(
            idx_axes[0], idx_axes[1], [ztop_i - ell * r])][:, :, 0]

    top = mask.top_nodes()
    dz_tau0 = (3.0 * plane_tau[0, top[:, 0], top[:, 1]]
               - 4.0 * plane_tau[1, top[:, 0], top[:, 1]]
               + plane_tau[2, top[:, 0], top[:, 1]]) / (2.0 * level.h)
    return PickedArrivals(level, tau0, plane_tau, dz_tau0)


def build_cauchy(rec: WaveRecording, arrivals: PickedArrivals, tb: TimeBasis,
                 route: str = "plane_stack") -> CauchyProjection:
    """Assemble Dirichlet and Neumann data vectors at the arrival spacing."""
    if route not in ("plane_stack", "shifted_f1"):
        raise ConfigError(f"unknown Neumann route {route!r}")
    level = arrivals.grid
    ratio = _level_ratio(rec, level)
    dt = rec.cfg.dt
    t_end = rec.times[-1]
    if (arrivals.tau0 + tb.T1 > t_end + 1e-12).any():
        raise PickError("an arrival window exceeds the recording duration")
    tgrid, proj = _window_matrix(tb, dt)

    mask = BoundaryMask(level)
    bn = mask.boundary_nodes()
    rows = _recording_rows(rec, bn, ratio)
    P0 = double_time_integral(rec.f0[:, rows], dt)  # (nt, nb)
    tmat = arrivals.tau0[:, None] + tgrid[None, :]
    w = _sample_columns(P0, tmat, dt)  # (nb, m+1)
    w = w - w[:, :1]
    q0 = np.empty((tb.N + 1, bn.shape[0]))
    q0[0] = arrivals.tau0
    q0[1:] = (w @ proj).T

    top = mask.top_nodes()
    ntop = top.shape[0]
    q1 = np.empty((tb.N + 1, ntop))
    q1[0] = arrivals.dz_tau0
    h_l = level.h

    if route == "plane_stack":
        wstack = []
        for ell in range(3):
            block = rec.aux[ell * ratio][:, ::ratio, ::ratio]  # (nt, mxl, myl)
            Pb = double_time_integral(block.reshape(block.shape[0], -1), dt)
            taus = arrivals.plane_tau[ell].reshape(-1)
            tm = taus[:, None] + tgrid[None, :]
            ws = _sample_columns(Pb, tm, dt)
            ws = ws - ws[:, :1]
            wstack.append(ws.reshape(level.dims[0], level.dims[1], -1))
        dzw = (3.0 * wstack[0] - 4.0 * wstack[1] + wstack[2]) / (2.0 * h_l)
        q1[1:] = (dzw[top[:, 0], top[:, 1]] @ proj).T
    else:
        block = rec.f1[:, ::ratio, ::ratio]
        Pb = double_time_integral(block.reshape(block.shape[0], -1), dt)
        face_rows = np.ravel_multi_index((top[:, 0], top[:, 1]),
                                         (level.dims[0], level.dims[1]))
        bflat = np.ravel_multi_index(tuple(bn.T), level.dims)
        tflat = np.ravel_multi_index(
            (top[:, 0], top[:, 1], np.full(ntop, level.dims[2] - 1)), level.dims)
        tau_face = arrivals.tau0[np.searchsorted(bflat, tflat)]
        tm = tau_face[:, None] + tgrid[None, :]
        ws = _sample_columns(Pb[:, face_rows], tm, dt)
        ws = ws - ws[:, :1]
        q1[1:] = (ws @ proj).T

    meta = {
        "route": route,
        "ratio": ratio,
        "noise": rec.noise,
        "phantom": rec.c_stats.get("phantom"),
        "N": tb.N,
        "pulse_eps": rec.cfg.pulse_eps,
    }
    return CauchyProjection(level, tb.T1, tuple(rec.cfg.source), q0, q1, meta)


def normalize_amplitude(data: CauchyProjection, tb: TimeBasis,
                        target: float = 1.0) -> tuple[CauchyProjection, float]:
    """Rescale the signal components so the mean boundary amplitude is `target`.

    The coupling term of the reduced system is homogeneous of degree zero in
    the signal components, so one global factor changes neither the travel
    time equation nor the recovered coefficient — it only moves the problem
    to a numerically sane scale (raw amplitudes inherit the tiny discretized
    pulse mass over 4 pi r).  The factor is recorded in meta["amp_scale"];
    applying the function twice is a no-op beyond float round-off.
    """
    S = np.einsum("n,nb->b", tb.slope0, data.q0[1:])
    mean = float(S.mean())
    if not mean > 0.0:
        raise PickError("boundary amplitudes are not positive on average; "
                        "data too noisy or mis-picked")
    kappa = target / mean
    q0 = data.q0.copy()
    q1 = data.q1.copy()
    q0[1:] *= kappa
    q1[1:] *= kappa
    meta = dict(data.meta)
    meta["amp_scale"] = kappa * meta.get("amp_scale", 1.0)
    meta["amp_target"] = target
    return CauchyProjection(data.grid, data.T1, data.source, q0, q1,
                            meta), kappa
