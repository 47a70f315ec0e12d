"""convexwave: globally convex inversion of single-source acoustic boundary data.

The package recovers the spatially varying coefficient c(x) of the wave
equation  c(x) u_tt = Laplace(u)  on a unit cube of interest from Cauchy data
of a single incident spherical pulse.  The pipeline is

    forward simulation -> arrival picking / data reduction ->
    Carleman-weighted least squares over a coupled elliptic system ->
    multilevel gradient descent -> c = |grad tau|^2.

Subpackages and modules:

* ``grid``      uniform Cartesian meshes and discrete calculus
* ``basis``     orthonormal polynomial basis vanishing at t = 0
* ``forward``   explicit FDTD solver on an enclosing box
* ``eikonal``   fast-sweeping first-arrival solver (oracle route)
* ``acquire``   picking, time integration/shift, projection, noise
* ``system``    the reduced quasilinear elliptic system residual
* ``objective`` weighted objective J and its exact gradient
* ``optimize``  projected gradient descent and the multilevel driver
* ``verify``    numerical checks of the weighted inequality and convexity
* ``recon``     phantoms, c extraction, error metrics, exports
* ``cli``       command-line entry points
"""

from ._kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
__version__ = "0.1.0"
