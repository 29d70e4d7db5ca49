"""Pure-numpy implementations of the per-iteration gather/scatter kernels.

All kernels operate on flat views of the stacked block matrices so a single
call covers every PSD block of the problem. Index arrays are precomputed
once per problem; only the value vectors change across iterations.
"""

import numpy as np


def eval_affine(base_flat, off, var, coef, x):
    """base + sum of coef * x[var] scattered at the flat offsets."""
    out = base_flat.copy()
    np.add.at(out, off, coef * x[var])
    return out


def adjoint(z_flat, off, var, coef, nvars):
    """Adjoint of the block map: out[v] = sum of coef * z[off] over entries of v."""
    return np.bincount(var, weights=coef * z_flat[off], minlength=nvars)


def schur_vals(b_flat, i1, i2, i3, i4, coef):
    """Per-pair Schur contributions coef * (B[i1] B[i2] + B[i3] B[i4])."""
    return coef * (b_flat[i1] * b_flat[i2] + b_flat[i3] * b_flat[i4])
