"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

Two operations dominate runtime: the leapfrog wave update and Gauss-Seidel
eikonal sweeps.  At import time the Cython extension is preferred; if it is
missing (source checkout without a build) the numpy implementation is used.
Set CONVEXWAVE_BACKEND=python or =compiled to force one side.

Both backends expose:

    wave_step(u_next, u_curr, u_prev, alpha)    in-place interior update
    eikonal_sweep(tau, rhs, frozen, ordering)   one directional sweep,
                                                returns the max update

and agree on the order of floating-point operations per node, so results
match across backends to the last few ulps.
"""

import os

_forced = os.environ.get("CONVEXWAVE_BACKEND", "").strip().lower()
if _forced not in ("", "compiled", "python"):
    raise RuntimeError(
        f"CONVEXWAVE_BACKEND must be 'compiled' or 'python', got {_forced!r}"
    )

if _forced == "python":
    from . import _fallback as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        from . import _fallback as _impl

        BACKEND = "python"

wave_step = _impl.wave_step
eikonal_sweep = _impl.eikonal_sweep

__all__ = ["BACKEND", "wave_step", "eikonal_sweep"]
