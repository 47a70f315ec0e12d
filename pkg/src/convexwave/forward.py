"""Explicit FDTD solver for  c(x) u_tt = Laplace(u)  on an enclosing box.

A single compactly mollified point pulse is released below the cube of
interest; the solver time-steps a second-order leapfrog scheme with
homogeneous Dirichlet walls and records, on the hull of the inner cube,
everything the inversion pipeline is allowed to see:

* the trace u(x, t) at every hull node of the inner cube ("Dirichlet side"),
* its one-sided normal derivative on the top face ("Neumann side"),
* u on a short stack of horizontal planes directly below the top face, from
  which arrival times and normal derivatives can be re-derived at coarser
  inversion spacings.

The enclosing box is large enough that wall reflections cannot re-enter the
data windows: a mirror-source bound for each wall is stored with the
recording and re-checked per node during acquisition.

The initial pulse is  (1/eps) exp(-1 / (1 - |x - x0|^2 / eps))  inside the
ball |x - x0|^2 < eps and zero outside; its total mass is of order sqrt(eps),
not 1, so absolute trace amplitudes scale with the discretised pulse mass
(about 0.04 for eps = 0.01) over 4 pi r.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from ._kernels import wave_step
from .errors import BlowupError, CFLError, ConfigError
from .grid import BoundaryMask, Grid3, ScalarField

CFL_SAFETY = 0.9


def mollified_delta(grid: Grid3, x0, eps: float) -> ScalarField:
    """Compactly supported smooth pulse of width sqrt(eps) centred at x0."""
    x, y, z = grid.meshgrid()
    r2 = (x - x0[0]) ** 2 + (y - x0[1]) ** 2 + (z - x0[2]) ** 2
    out = np.zeros(grid.dims)
    inside = r2 < eps
    with np.errstate(divide="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside] / eps)) / eps
    return ScalarField(grid, out)


@dataclasses.dataclass(frozen=True)
class ForwardConfig:
    """Geometry and stepping parameters of one simulation.

    box:    enclosing grid (homogeneous Dirichlet walls)
    inner:  grid over the cube of interest; must be node-aligned with box
    source: pulse centre, inside the box, strictly below the inner cube
    """

    box: Grid3
    inner: Grid3
    source: tuple[float, float, float]
    pulse_eps: float = 0.01
    dt: float = 0.002
    duration: float = 6.5
    aux_planes: int = 9

    def __post_init__(self):
        if abs(self.box.h - self.inner.h) > 1e-12 * self.box.h:
            raise ConfigError("inner and box grids must share one spacing")
        try:
            self.box.index_of(self.inner.origin)
            self.box.index_of(self.inner.upper)
        except Exception as e:
            raise ConfigError(f"inner grid is not node-aligned with the box: {e}")
        sx, sy, sz = self.source
        lo, hi = self.box.origin, self.box.upper
        w = math.sqrt(self.pulse_eps)
        if not all(lo[d] + w < s < hi[d] - w for d, s in enumerate(self.source)):
            raise ConfigError("pulse support must be strictly inside the box")
        if sz + w >= self.inner.origin[2]:
            raise ConfigError("pulse must sit strictly below the inner cube")
        if self.pulse_eps <= 0 or self.dt <= 0 or self.duration <= 0:
            raise ConfigError("pulse_eps, dt and duration must be positive")
        if self.aux_planes < 3:
            raise ConfigError("need at least 3 recorded planes for one-sided stencils")
        if (self.aux_planes - 1) >= self.inner.dims[2]:
            raise ConfigError("recorded plane stack deeper than the inner cube")

    @property
    def n_steps(self) -> int:
        n = int(round(self.duration / self.dt))
        if abs(n * self.dt - self.duration) > 1e-9:
            raise ConfigError("duration must be an integer number of steps")
        return n

    def to_json(self) -> dict:
        return {
            "box": self.box.to_json(),
            "inner": self.inner.to_json(),
            "source": list(self.source),
            "pulse_eps": self.pulse_eps,
            "dt": self.dt,
            "duration": self.duration,
            "aux_planes": self.aux_planes,
        }

    @staticmethod
    def from_json(d: dict) -> "ForwardConfig":
        return ForwardConfig(
            Grid3.from_json(d["box"]), Grid3.from_json(d["inner"]),
            tuple(d["source"]), d["pulse_eps"], d["dt"], d["duration"],
            d["aux_planes"],
        )


def _steps_per_axis(h: float, lo: float, hi: float) -> int:
    n = (hi - lo) / h
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(f"extent {hi - lo} is not a multiple of spacing {h}")
    return int(round(n)) + 1


def standard_config(h: float, dt: float = 0.002, duration: float = 6.5,
                    aux_planes: int = 9) -> ForwardConfig:
    """Production geometry: box (-6.5, 6.5)^2 x (-6, 7), source (0, 0, -5),
    inner cube (-0.5, 0.5)^2 x (0, 1)."""
    box = Grid3(
        (-6.5, -6.5, -6.0), h,
        (_steps_per_axis(h, -6.5, 6.5),) * 2 + (_steps_per_axis(h, -6.0, 7.0),),
    )
    inner = Grid3((-0.5, -0.5, 0.0), h, (_steps_per_axis(h, -0.5, 0.5),) * 3)
    return ForwardConfig(box, inner, (0.0, 0.0, -5.0), 0.01, dt, duration, aux_planes)


def reduced_config(h: float, dt: float = 0.004, duration: float = 2.4,
                   aux_planes: int = 5) -> ForwardConfig:
    """Small test geometry: box (-2, 2)^2 x (-1.5, 2.5), source (0, 0, -1)."""
    box = Grid3(
        (-2.0, -2.0, -1.5), h,
        (_steps_per_axis(h, -2.0, 2.0),) * 2 + (_steps_per_axis(h, -1.5, 2.5),),
    )
    inner = Grid3((-0.5, -0.5, 0.0), h, (_steps_per_axis(h, -0.5, 0.5),) * 3)
    return ForwardConfig(box, inner, (0.0, 0.0, -1.0), 0.01, dt, duration, aux_planes)


def reflection_bound(cfg: ForwardConfig, points: np.ndarray,
                     fast_saving: float = 0.0) -> np.ndarray:
    """Earliest time a wall reflection can reach each point, minus `fast_saving`.

    Mirror-source argument at exterior unit speed: for every wall the
    reflected path from the source to a point is at least as long as the
    straight segment from the mirrored source.  `fast_saving` discounts the
    largest possible shortcut through a region with c < 1 (speed > 1).
    """
    lo, hi = cfg.box.origin, cfg.box.upper
    src = np.asarray(cfg.source)
    best = np.full(points.shape[0], np.inf)
    for d in range(3):
        for wall in (lo[d], hi[d]):
            mirror = src.copy()
            mirror[d] = 2.0 * wall - src[d]
            dist = np.linalg.norm(points - mirror, axis=1)
            best = np.minimum(best, dist)
    return best - fast_saving


def radial_unit_solution(radii: np.ndarray, eps: float, out_dt: float,
                         out_nt: int, dr: float = 1e-3) -> np.ndarray:
    """Unit-speed pulse traces at given distances from the source.

    For c = 1 the field is spherically symmetric about the pulse centre and
    v = r u obeys the plain 1-d wave equation exactly, so a fine 1-d leapfrog
    delivers near-exact reference traces at a tiny fraction of a 3-d run.
    The injection convention matches run_forward (u = 0 at step 0, dt * pulse
    at step 1) so phases line up with box recordings up to their dispersion.

    Returns traces of shape (out_nt, len(radii)); row k is time k * out_dt.
    """
    radii = np.asarray(radii, dtype=np.float64)
    if radii.size == 0 or (radii <= 0.0).any():
        raise ConfigError("radii must be positive and non-empty")
    t_end = out_dt * (out_nt - 1)
    rmax = float(radii.max()) + 0.5 * (t_end + float(radii.max())) + 1.0
    nr = int(math.ceil(rmax / dr)) + 1
    r = dr * np.arange(nr)
    sub = max(1, int(math.ceil(out_dt / (CFL_SAFETY * dr))))
    dt = out_dt / sub

    g = np.zeros(nr)
    inside = r * r < eps
    with np.errstate(divide="ignore"):
        g[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2 / eps)) / eps
    v_prev = np.zeros(nr)
    v_curr = dt * r * g

    # linear interpolation stencil at the requested radii
    pos = radii / dr
    idx = np.minimum(pos.astype(np.intp), nr - 2)
    frac = pos - idx

    out = np.empty((out_nt, radii.size))
    out[0] = 0.0
    a = (dt / dr) ** 2
    step = 1
    for k in range(1, out_nt):
        target = k * sub
        while step < target:
            v_next = 2.0 * v_curr - v_prev
            v_next[1:-1] += a * (v_curr[2:] - 2.0 * v_curr[1:-1] + v_curr[:-2])
            v_next[0] = 0.0
            v_next[-1] = 0.0
            v_prev, v_curr = v_curr, v_next
            step += 1
        out[k] = (v_curr[idx] * (1.0 - frac) + v_curr[idx + 1] * frac) / radii
    return out


@dataclasses.dataclass
class WaveRecording:
    """Everything recorded at the hull of the inner cube during one run.

    f0:   (nt, nb) trace at the hull nodes listed in `bnodes` (indices into
          the inner grid, lexicographic)
    f1:   (nt, nx, ny) one-sided normal derivative on the full top face
    aux:  (np, nt, nx, ny) u on planes z = z_top - j h, j = 0 .. np-1
    safe_until / safe_until_aux: per-node reflection bounds (time units)
    """

    cfg: ForwardConfig
    times: np.ndarray
    bnodes: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    aux: np.ndarray
    safe_until: np.ndarray
    safe_until_aux: np.ndarray
    c_stats: dict
    noise: dict | None = None
    energy: tuple | None = None

    @property
    def pulse_halfwidth(self) -> float:
        return math.sqrt(self.cfg.pulse_eps)

    def save(self, directory: str, name: str = "recording") -> None:
        from .io import save_blocks

        meta = {
            "kind": "wave-recording",
            "cfg": self.cfg.to_json(),
            "c_stats": self.c_stats,
            "noise": self.noise,
        }
        arrays = {
            "times": self.times,
            "bnodes": self.bnodes.astype(np.int64),
            "f0": self.f0,
            "f1": self.f1,
            "aux": self.aux,
            "safe_until": self.safe_until,
            "safe_until_aux": self.safe_until_aux,
        }
        if self.energy is not None:
            arrays["energy_steps"] = np.asarray(self.energy[0], dtype=np.int64)
            arrays["energy_values"] = np.asarray(self.energy[1])
        save_blocks(directory, name, meta, arrays)

    @staticmethod
    def load(directory: str, name: str = "recording") -> "WaveRecording":
        from .io import load_blocks

        meta, arr = load_blocks(directory, name)
        if meta.get("kind") != "wave-recording":
            raise ConfigError(f"{directory}/{name} is not a wave recording")
        energy = None
        if "energy_steps" in arr:
            energy = (arr["energy_steps"], arr["energy_values"])
        return WaveRecording(
            ForwardConfig.from_json(meta["cfg"]), arr["times"],
            arr["bnodes"].astype(np.intp), arr["f0"], arr["f1"], arr["aux"],
            arr["safe_until"], arr["safe_until_aux"], meta["c_stats"],
            meta.get("noise"), energy,
        )


def _energy(u_new, u_old, cvals, dt, h):
    # E = (h^3/2) [ sum c ((u^+ - u^-)/dt)^2 + sum |grad (u^+ + u^-)/2|^2 ]
    v = (u_new - u_old) / dt
    kin = float((cvals * v * v).sum())
    m = 0.5 * (u_new + u_old)
    g = 0.0
    for ax in range(3):
        d = np.diff(m, axis=ax) / h
        g += float((d * d).sum())
    return 0.5 * h ** 3 * (kin + g)


def run_forward(c: ScalarField, cfg: ForwardConfig,
                energy_stride: int = 0) -> WaveRecording:
    """Leapfrog run; returns the boundary recording of the inner cube."""
    if c.grid != cfg.box:
        raise ConfigError("coefficient field must live on the box grid")
    cv = c.values
    c_min = float(cv.min())
    if c_min <= 0.0:
        raise ConfigError("coefficient must be strictly positive")
    h = cfg.box.h
    dt_max = CFL_SAFETY * h * math.sqrt(c_min) / math.sqrt(3.0)
    if cfg.dt > dt_max:
        raise CFLError(
            f"dt = {cfg.dt} exceeds the stability bound {dt_max:.6g} "
            f"(h = {h}, min c = {c_min:.6g})")

    # fast-inclusion shortcut for the reflection bound
    fast_saving = 0.0
    if c_min < 1.0 - 1e-12:
        vol = float((cv < 1.0 - 1e-12).sum()) * h ** 3
        diam = 2.0 * (3.0 * vol / (4.0 * math.pi)) ** (1.0 / 3.0)
        fast_saving = diam * (1.0 - math.sqrt(c_min))

    n_steps = cfg.n_steps
    if n_steps < 2:
        raise ConfigError("duration must cover at least two steps")
    nx, ny, nz = cfg.box.dims
    mask = BoundaryMask(cfg.inner)
    bnodes = mask.boundary_nodes()
    off = np.asarray(cfg.box.index_of(cfg.inner.origin))
    binbox = bnodes + off  # hull node indices in box coordinates
    bflat = np.ravel_multi_index((binbox[:, 0], binbox[:, 1], binbox[:, 2]),
                                 cfg.box.dims)

    ix0, iy0, _ = off
    mx, my, mz = cfg.inner.dims
    ktop = off[2] + mz - 1
    face = (slice(ix0, ix0 + mx), slice(iy0, iy0 + my))

    alpha = (cfg.dt * cfg.dt) / (cv * h * h)
    pulse = mollified_delta(cfg.box, cfg.source, cfg.pulse_eps)

    u_prev = np.zeros(cfg.box.dims)
    u_curr = cfg.dt * pulse.values
    u_next = np.zeros(cfg.box.dims)

    nt = n_steps + 1
    f0 = np.zeros((nt, bnodes.shape[0]))
    f1 = np.zeros((nt, mx, my))
    aux = np.zeros((cfg.aux_planes, nt, mx, my))

    def record(dst_t: int, u: np.ndarray) -> None:
        f0[dst_t] = u.ravel()[bflat]
        f1[dst_t] = (3.0 * u[face[0], face[1], ktop]
                     - 4.0 * u[face[0], face[1], ktop - 1]
                     + u[face[0], face[1], ktop - 2]) / (2.0 * h)
        for j in range(cfg.aux_planes):
            aux[j, dst_t] = u[face[0], face[1], ktop - j]

    record(0, u_prev)
    record(1, u_curr)

    e_steps, e_vals = [], []
    if energy_stride:
        e_steps.append(0)
        e_vals.append(_energy(u_curr, u_prev, cv, cfg.dt, h))

    for k in range(1, n_steps):
        wave_step(u_next, u_curr, u_prev, alpha)
        if k % 50 == 0 and not np.isfinite(u_next[nx // 2, ny // 2, :]).all():
            raise BlowupError(f"non-finite field at step {k}")
        record(k + 1, u_next)
        if energy_stride and (k % energy_stride == 0):
            e_steps.append(k)
            e_vals.append(_energy(u_next, u_curr, cv, cfg.dt, h))
        u_prev, u_curr, u_next = u_curr, u_next, u_prev

    if not np.isfinite(u_curr).all():
        raise BlowupError("non-finite field at the end of the run")

    times = cfg.dt * np.arange(nt)
    bxyz = np.stack([cfg.inner.axis(d)[bnodes[:, d]] for d in range(3)], axis=1)
    safe_until = reflection_bound(cfg, bxyz, fast_saving)
    ztop = cfg.inner.upper[2]
    fxy = np.stack(np.meshgrid(cfg.inner.axis(0), cfg.inner.axis(1),
                               indexing="ij"), axis=-1).reshape(-1, 2)
    safe_aux = np.zeros((cfg.aux_planes, mx, my))
    for j in range(cfg.aux_planes):
        pts = np.column_stack([fxy, np.full(fxy.shape[0], ztop - j * h)])
        safe_aux[j] = reflection_bound(cfg, pts, fast_saving).reshape(mx, my)

    c_stats = {"min": c_min, "max": float(cv.max()),
               "fast_saving": fast_saving}
    energy = (np.asarray(e_steps), np.asarray(e_vals)) if energy_stride else None
    return WaveRecording(cfg, times, bnodes, f0, f1, aux,
                         safe_until, safe_aux, c_stats, None, energy)
