"""Compute-backend selection.

Hot kernels ship in two implementations: a numba @njit version and a
vectorized pure-numpy fallback.  The active backend is chosen once at
import time from the DOMSERVO_BACKEND environment variable:

    DOMSERVO_BACKEND=numba   force numba (ImportError if unavailable)
    DOMSERVO_BACKEND=numpy   force the numpy fallback
    unset / empty            numba when importable, else numpy

Everything downstream imports from domservo.kernels, which binds the
selected implementation.
"""

import logging
import os

log = logging.getLogger("domservo.backend")

_ENV_VAR = "DOMSERVO_BACKEND"


def _resolve() -> str:
    want = os.environ.get(_ENV_VAR, "").strip().lower()
    if want not in ("", "numba", "numpy"):
        raise ValueError(
            f"{_ENV_VAR} must be 'numba', 'numpy' or unset, got {want!r}")
    if want == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        if want == "numba":
            raise
        log.warning("numba unavailable, falling back to numpy kernels")
        return "numpy"


BACKEND = _resolve()


def using_numba() -> bool:
    return BACKEND == "numba"
