"""Hot numeric kernels, bound to the backend chosen in domservo.backend."""

from ..backend import BACKEND, using_numba

if BACKEND == "numba":
    from .numba_impl import (
        spring_energy, spring_gradient, spring_hessian, raster_mesh,
        conv2d_same, how_accumulate, lasso_cd, split_gain_scan,
    )
else:
    from .numpy_impl import (
        spring_energy, spring_gradient, spring_hessian, raster_mesh,
        conv2d_same, how_accumulate, lasso_cd, split_gain_scan,
    )

__all__ = [
    "BACKEND", "using_numba",
    "spring_energy", "spring_gradient", "spring_hessian", "raster_mesh",
    "conv2d_same", "how_accumulate", "lasso_cd", "split_gain_scan",
]
