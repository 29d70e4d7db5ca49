"""Independent KKT residual checks for solver output.

Everything here recomputes from the original problem data and the reported
primal/dual values only; no solver internals are consulted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..conic import ConicProblem
from .ipm import Solution, original_adjoint, original_const_inner


@dataclass(frozen=True)
class KktReport:
    equality_residual_inf_norm: float
    min_block_eigenvalue: float
    dual_residual_inf_norm: float
    min_dual_eigenvalue: float
    primal_objective: float
    dual_objective: float
    duality_gap: float           # |pobj - dobj| / (1 + |pobj| + |dobj|)
    complementarity: float       # sum over blocks of <F(x), Z> / (1 + |pobj| + |dobj|)
    primal_scale: float = 1.0    # 1 + inf-norm of the primal data (rhs, block constants)
    dual_scale: float = 1.0      # 1 + inf-norm of the objective

    def passes(self, feas_tol: float, gap_tol: float) -> bool:
        """Residuals within tolerance under the solver's scaling convention."""
        return (
            self.equality_residual_inf_norm <= feas_tol * self.primal_scale
            and self.min_block_eigenvalue >= -feas_tol * self.primal_scale
            and self.dual_residual_inf_norm <= feas_tol * self.dual_scale
            and self.min_dual_eigenvalue >= -feas_tol * self.dual_scale
            and self.duality_gap <= gap_tol
        )


def check_kkt(problem: ConicProblem, solution: Solution) -> KktReport:
    """Recompute equality residuals, eigenvalue floors, and the duality gap."""
    x = np.asarray(solution.primal_values, dtype=np.float64)
    y = np.asarray(solution.dual_equality, dtype=np.float64)
    z_blocks = [np.asarray(z, dtype=np.float64) for z in solution.dual_blocks]

    eq = problem.equality_residuals(x)
    eq_inf = float(np.abs(eq).max()) if eq.size else 0.0

    min_eig = np.inf
    min_dual_eig = np.inf
    comp = 0.0
    for blk, z in zip(problem.blocks, z_blocks):
        s = blk.materialize(x)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(s)[0]))
        min_dual_eig = min(min_dual_eig, float(np.linalg.eigvalsh(z)[0]))
        comp += float(np.sum(s * z))

    stat = problem.objective_dense()
    for r in range(problem.num_equalities):
        np.subtract.at(stat, problem.eq_vars[r], problem.eq_coefs[r] * y[r])
    stat -= original_adjoint(problem, z_blocks)
    dual_inf = float(np.abs(stat).max()) if stat.size else 0.0

    pobj = problem.objective_value(x)
    dobj = float(np.dot(problem.eq_rhs, y)) - original_const_inner(problem, z_blocks)
    norm = 1.0 + abs(pobj) + abs(dobj)
    b_inf = float(np.abs(problem.eq_rhs).max()) if problem.eq_rhs.size else 0.0
    f0_inf = max(
        (float(np.abs(blk.const_vals).max()) for blk in problem.blocks if blk.const_vals.size),
        default=0.0,
    )
    c_inf = float(np.abs(problem.obj_coefs).max()) if problem.obj_coefs.size else 0.0
    return KktReport(
        equality_residual_inf_norm=eq_inf,
        min_block_eigenvalue=float(min_eig),
        dual_residual_inf_norm=dual_inf,
        min_dual_eigenvalue=float(min_dual_eig),
        primal_objective=pobj,
        dual_objective=dobj,
        duality_gap=abs(pobj - dobj) / norm,
        complementarity=comp / norm,
        primal_scale=1.0 + max(b_inf, f0_inf),
        dual_scale=1.0 + c_inf,
    )
