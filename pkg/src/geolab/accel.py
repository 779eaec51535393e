"""Numba acceleration switch.

Hot kernels are decorated with :func:`jitted`.  When numba is installed and
the environment variable ``GEOLAB_DISABLE_NUMBA`` is unset, kernels compile
with ``numba.njit(cache=True)``.  Otherwise the undecorated Python function
runs as a pure-numpy fallback.  Either way ``fn.py_func`` exposes the plain
Python implementation so benchmarks can compare both paths.
"""

import os

DISABLED = os.environ.get("GEOLAB_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
    "on",
)

if not DISABLED:
    try:
        import numba

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not DISABLED


def jitted(fn):
    """Compile ``fn`` with numba when enabled, else return it unchanged."""
    if USING_NUMBA:
        return numba.njit(fn, cache=True, nogil=True)
    if not hasattr(fn, "py_func"):
        fn.py_func = fn
    return fn
