"""Kernel backend selection.

The hot per-iteration kernels exist twice: a numba-compiled version and a
pure-numpy fallback. Selection happens once, at first use, driven by the
``NLOSLOC_BACKEND`` environment variable:

* ``auto`` (default): numba when importable, numpy otherwise;
* ``numba``: require numba, raise if missing;
* ``numpy``: force the fallback.

Both paths produce matching results to rounding; within one backend the
solver is fully deterministic.
"""

from __future__ import annotations

import os

from . import kernels_numpy

_kernels = None
_name = None


def _select():
    global _kernels, _name
    choice = os.environ.get("NLOSLOC_BACKEND", "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"NLOSLOC_BACKEND must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        _kernels, _name = kernels_numpy, "numpy"
        return
    try:
        from . import kernels_numba
    except ImportError:
        if choice == "numba":
            raise
        _kernels, _name = kernels_numpy, "numpy"
        return
    _kernels, _name = kernels_numba, "numba"


def get_kernels():
    if _kernels is None:
        _select()
    return _kernels


def current_backend() -> str:
    if _name is None:
        _select()
    return _name
