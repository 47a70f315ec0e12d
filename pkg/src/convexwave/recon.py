"""Coefficient extraction, synthetic phantoms, and reconstruction scoring.

The inversion returns the travel-time component tau; the coefficient is
recovered pointwise as c = |grad tau|^2.  This module also defines the
five benchmark phantoms used to generate synthetic data (ball, ellipsoid,
twin balls, a smooth oscillating blob, and a high-contrast ball) and a
scoring routine that reduces a recovered field to the handful of numbers
we actually compare against: relative L2 error, the peak value inside the
detected inclusion, the center-of-mass offset per detected component, and
the recovered range over the true inclusion support.

Phantoms are analytic: each is c = 1 outside its inclusion and transitions
over a C1 ramp two cells wide, so the same phantom object can be sampled
consistently at every grid spacing of a multi-level run.
"""

from __future__ import annotations

import dataclasses
import math
import os
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .grid import Grid3, ScalarField, gradient_c
from .io import write_pgm, write_vtk

C_FLOOR = 0.1
DETECT_RISE = 0.3  # a node is "inside" once it carries 30% of the contrast rise
SUPPORT_TOL = 0.02  # |c* - 1| above this counts as true inclusion support


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclasses.dataclass(frozen=True)
class Phantom:
    """Analytic ground-truth coefficient: 1 outside, `contrast` at the core.

    `profile(x, y, z, ramp)` evaluates c at arbitrary points with the given
    edge-ramp width; `field(grid)` samples it with ramp = 2 h.  `centers`
    lists one reference point per disjoint inclusion component.
    """

    name: str
    contrast: float
    centers: tuple[tuple[float, float, float], ...]
    descriptor: dict
    profile: Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]

    def field(self, grid: Grid3) -> ScalarField:
        x, y, z = grid.meshgrid()
        vals = self.profile(x, y, z, 2.0 * grid.h)
        if vals.min() <= 0.0:
            raise ConfigError(f"phantom {self.name} is not strictly positive")
        return ScalarField(grid, vals)

    def at(self, pts: np.ndarray, ramp: float = 0.125) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self.profile(pts[:, 0], pts[:, 1], pts[:, 2], ramp)


def _ball(center, radius, contrast):
    cx, cy, cz = center

    def profile(x, y, z, ramp):
        d = np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2)
        return 1.0 + (contrast - 1.0) * _smoothstep((radius - d) / ramp)

    return profile


def _ellipsoid(center, semi, contrast):
    cx, cy, cz = center
    ax, ay, az = semi
    scale = min(semi)  # converts the scaled distance to physical units

    def profile(x, y, z, ramp):
        d = np.sqrt(((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2
                    + ((z - cz) / az) ** 2)
        return 1.0 + (contrast - 1.0) * _smoothstep((1.0 - d) * scale / ramp)

    return profile


def _twin(centers, radius, contrast):
    parts = [_ball(c, radius, contrast) for c in centers]

    def profile(x, y, z, ramp):
        return np.maximum(*(p(x, y, z, ramp) for p in parts))

    return profile


def _wavelet(center, radius, amp):
    # c = 1 + amp * cos(2 pi r/R) * envelope(r/R): peaks at the center,
    # dips to 1 - amp half-way out, and rolls off C1-smoothly to 1 at r = R.
    cx, cy, cz = center

    def profile(x, y, z, ramp):
        r = np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) / radius
        envelope = _smoothstep((1.0 - r) / 0.25)
        return 1.0 + amp * np.cos(2.0 * math.pi * r) * envelope

    return profile


_CENTER = (0.0, 0.0, 0.5)


def _catalog() -> dict[str, Phantom]:
    return {
        "test1": Phantom(
            "test1", 2.0, (_CENTER,),
            {"shape": "ball", "center": _CENTER, "radius": 0.2, "contrast": 2.0},
            _ball(_CENTER, 0.2, 2.0)),
        "test2": Phantom(
            "test2", 2.0, (_CENTER,),
            {"shape": "ellipsoid", "center": _CENTER,
             "semi_axes": (0.25, 0.15, 0.15), "contrast": 2.0},
            _ellipsoid(_CENTER, (0.25, 0.15, 0.15), 2.0)),
        "test3": Phantom(
            "test3", 2.0, ((-0.25, 0.0, 0.5), (0.25, 0.0, 0.5)),
            {"shape": "twin-balls", "centers": ((-0.25, 0.0, 0.5), (0.25, 0.0, 0.5)),
             "radius": 0.15, "contrast": 2.0},
            _twin(((-0.25, 0.0, 0.5), (0.25, 0.0, 0.5)), 0.15, 2.0)),
        "test4": Phantom(
            "test4", 1.6, (_CENTER,),
            {"shape": "radial-wavelet", "center": _CENTER, "radius": 0.45,
             "amplitude": 0.6, "span": (0.4, 1.6), "contrast": 1.6},
            _wavelet(_CENTER, 0.45, 0.6)),
        "test5": Phantom(
            "test5", 5.0, (_CENTER,),
            {"shape": "ball", "center": _CENTER, "radius": 0.2, "contrast": 5.0},
            _ball(_CENTER, 0.2, 5.0)),
    }


def make_phantom(name: str) -> Phantom:
    cat = _catalog()
    if name not in cat:
        raise ConfigError(
            f"unknown phantom {name!r}; valid names: {', '.join(sorted(cat))}")
    return cat[name]


def c_from_tau(tau: ScalarField) -> ScalarField:
    """Pointwise coefficient c = |grad tau|^2 (central/one-sided stencils)."""
    g = gradient_c(tau)
    return ScalarField(tau.grid, g[0] ** 2 + g[1] ** 2 + g[2] ** 2)


@dataclasses.dataclass(frozen=True)
class ReconReport:
    """Scored reconstruction.  All metrics are finite by construction."""

    recovered: ScalarField
    phantom_name: str
    rel_l2: float
    clamped: int          # nodes lifted to the floor value
    detected: bool        # did any node clear the detection threshold
    threshold: float
    max_detected: float   # peak over the detected mask (global peak if none)
    com_offsets: tuple[float, ...]  # per detected component, vs nearest center
    com_offset: float     # worst of the above
    in_range: tuple[float, float]   # recovered extremes over true support
    slices: dict

    def summary(self) -> dict:
        return {
            "phantom": self.phantom_name,
            "rel_l2": self.rel_l2,
            "clamped": self.clamped,
            "detected": self.detected,
            "threshold": self.threshold,
            "max_detected": self.max_detected,
            "com_offsets": list(self.com_offsets),
            "com_offset": self.com_offset,
            "in_range": list(self.in_range),
        }

    def render(self) -> str:
        lines = [
            f"phantom          {self.phantom_name}",
            f"relative L2      {self.rel_l2:.4f}",
            f"floor clamps     {self.clamped}",
            f"detected         {'yes' if self.detected else 'NO'} "
            f"(threshold {self.threshold:.3f})",
            f"max in detected  {self.max_detected:.4f}",
            f"COM offset       {self.com_offset:.4f}"
            + (f"  (per component: "
               f"{', '.join(f'{o:.4f}' for o in self.com_offsets)})"
               if len(self.com_offsets) > 1 else ""),
            f"range on support {self.in_range[0]:.4f} .. {self.in_range[1]:.4f}",
        ]
        return "\n".join(lines)

    def export(self, directory: str, stem: str = "recon") -> list[str]:
        """Write mid-plane slices (CSV + PGM) and the volume (VTK)."""
        os.makedirs(directory, exist_ok=True)
        written = []
        for label, img in self.slices.items():
            base = os.path.join(directory, f"{stem}_{label}")
            np.savetxt(base + ".csv", img, fmt="%.9g", delimiter=",")
            write_pgm(base + ".pgm", img)
            written += [base + ".csv", base + ".pgm"]
        vtk = os.path.join(directory, f"{stem}.vtk")
        write_vtk(vtk, self.recovered, name="c_recovered")
        written.append(vtk)
        return written


def _component_coms(mask: np.ndarray, grid: Grid3,
                    centers) -> tuple[float, ...]:
    labels, n = ndimage.label(mask)
    if n == 0:
        return ()
    sizes = ndimage.sum_labels(mask, labels, range(1, n + 1))
    keep = [i + 1 for i in range(n) if sizes[i] >= 0.1 * sizes.max()]
    coms = ndimage.center_of_mass(mask, labels, keep)
    offs = []
    for com in coms:
        xyz = np.array([grid.axis(d)[0] + com[d] * grid.h for d in range(3)])
        offs.append(min(float(np.linalg.norm(xyz - np.asarray(c)))
                        for c in centers))
    return tuple(offs)


def metrics(recovered: ScalarField, phantom: Phantom,
            c_floor: float = C_FLOOR) -> ReconReport:
    grid = recovered.grid
    truth = phantom.field(grid).values

    vals = recovered.values.copy()
    low = vals < c_floor
    clamped = int(low.sum())
    vals[low] = c_floor

    rel_l2 = float(np.linalg.norm(vals - truth) / np.linalg.norm(truth))

    threshold = 1.0 + DETECT_RISE * (phantom.contrast - 1.0)
    mask = vals > threshold
    detected = bool(mask.any())
    max_detected = float(vals[mask].max() if detected else vals.max())

    if detected:
        com_offsets = _component_coms(mask, grid, phantom.centers)
    else:
        # fall back to the excess-mass centroid so the report stays finite
        excess = np.clip(vals - 1.0, 0.0, None)
        if excess.sum() > 0.0:
            x, y, z = grid.meshgrid()
            com = np.array([(excess * a).sum() / excess.sum() for a in (x, y, z)])
            com_offsets = (min(float(np.linalg.norm(com - np.asarray(c)))
                               for c in phantom.centers),)
        else:
            mid = np.asarray(grid.origin) + 0.5 * grid.h * (np.asarray(grid.dims) - 1)
            com_offsets = (float(np.linalg.norm(
                np.asarray(phantom.centers[0]) - mid)),)
    com_offset = float(max(com_offsets))

    support = np.abs(truth - 1.0) > SUPPORT_TOL
    if support.any():
        in_range = (float(vals[support].min()), float(vals[support].max()))
    else:
        in_range = (float(vals.min()), float(vals.max()))

    ij = [int(round((c - grid.axis(d)[0]) / grid.h))
          for d, c in enumerate(phantom.centers[0])]
    slices = {
        "z_mid": vals[:, :, np.clip(ij[2], 0, grid.dims[2] - 1)].copy(),
        "y_mid": vals[:, np.clip(ij[1], 0, grid.dims[1] - 1), :].copy(),
        "x_mid": vals[np.clip(ij[0], 0, grid.dims[0] - 1), :, :].copy(),
    }

    return ReconReport(ScalarField(grid, vals), phantom.name, rel_l2, clamped,
                       detected, threshold, max_detected, com_offsets,
                       com_offset, in_range, slices)
