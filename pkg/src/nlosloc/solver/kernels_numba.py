"""Numba-compiled twins of the kernels in :mod:`kernels_numpy`.

Same signatures, same accumulation order (so results agree with the numpy
path to rounding), explicit loops instead of fancy indexing. ``fastmath``
stays off to keep runs reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def eval_affine(base_flat, off, var, coef, x):
    out = base_flat.copy()
    for k in range(off.shape[0]):
        out[off[k]] += coef[k] * x[var[k]]
    return out


@njit(cache=True)
def adjoint(z_flat, off, var, coef, nvars):
    out = np.zeros(nvars)
    for k in range(off.shape[0]):
        out[var[k]] += coef[k] * z_flat[off[k]]
    return out


@njit(cache=True)
def schur_vals(b_flat, i1, i2, i3, i4, coef):
    n = i1.shape[0]
    out = np.empty(n)
    for k in range(n):
        out[k] = coef[k] * (b_flat[i1[k]] * b_flat[i2[k]] + b_flat[i3[k]] * b_flat[i4[k]])
    return out
