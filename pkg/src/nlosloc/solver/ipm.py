"""Primal-dual path-following interior-point solver for the conic IR.

The compiled problem is

    minimize    c . x
    subject to  A x = b
                F_k(x) := F0_k + sum_i x_i F_ki  PSD   for every block k,

handled in infeasible-start form with an explicit slack S per block
(residual F(x) - S driven to zero) and a dual block variable Z. Search
directions use Nesterov-Todd scaling with a Mehrotra predictor-corrector:
for each block a scaling factor G with G^-1 S G^-T = G^T Z G = diag(lam)
turns the centering condition into a diagonal Lyapunov solve. Eliminating
dS and dZ leaves the saddle system

    [ M   A^T ] [ dx  ]   [ h1 ]           M_ij = <F_i, W^-1 F_j W^-1>
    [ A   0   ] [ -dy ] = [ rp ]

whose sparse factorization is reused for predictor and corrector. M is
assembled from precomputed entry-pair index arrays by the selected kernel
backend (numba or numpy); cone operations run as numpy batches per block
group. The iteration is deterministic for fixed inputs, settings, and
backend; the two backends agree to rounding.

Termination (status ``optimal``) requires the scaled residuals

    pres = max(|Ax-b|_inf, |F(x)-S|_max) / (1 + data scale)
    dres = |c - A^T y - F*(Z)|_inf / (1 + |c|_inf)
    gap  = |pobj - dobj| / (1 + |pobj| + |dobj|)

to fall below feas_tol, feas_tol, and gap_tol respectively.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..conic import ConicProblem
from ..errors import InvalidInputError
from .backend import current_backend, get_kernels
from .compile import Compiled, compile_problem

_SIGMA_MIN, _SIGMA_MAX = 1e-8, 0.9999
_REG_LADDER = (0.0, 1e-12, 1e-9, 1e-6)   # relative KKT regularization retries


@dataclass
class SolverSettings:
    """Tolerances and limits for one solve."""

    gap_tol: float = 1e-7
    feas_tol: float = 1e-7
    max_iters: int = 200
    verbosity: int = 0

    def __post_init__(self) -> None:
        if self.gap_tol <= 0 or self.feas_tol <= 0:
            raise InvalidInputError("tolerances must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be at least 1")


@dataclass
class Solution:
    """Solver outcome, reported in the original problem's coordinates."""

    status: str
    primal_values: np.ndarray
    objective_value: float
    duality_gap: float
    equality_residual_inf_norm: float
    min_block_eigenvalue: float
    iterations: int
    dual_equality: np.ndarray
    dual_blocks: list[np.ndarray]
    mu: float = 0.0
    solve_seconds: float = 0.0
    backend: str = ""
    messages: list[str] = field(default_factory=list)


def original_adjoint(problem: ConicProblem, z_blocks: list[np.ndarray]) -> np.ndarray:
    """F*(Z) over the original problem, one scalar per variable."""
    out = np.zeros(problem.num_vars)
    for blk, z in zip(problem.blocks, z_blocks):
        fac = np.where(blk.term_rows == blk.term_cols, 1.0, 2.0)
        np.add.at(out, blk.term_vars, fac * blk.term_coefs * z[blk.term_rows, blk.term_cols])
    return out


def original_const_inner(problem: ConicProblem, z_blocks: list[np.ndarray]) -> float:
    """<F0, Z> summed over the original blocks."""
    total = 0.0
    for blk, z in zip(problem.blocks, z_blocks):
        fac = np.where(blk.const_rows == blk.const_cols, 1.0, 2.0)
        total += float(np.sum(fac * blk.const_vals * z[blk.const_rows, blk.const_cols]))
    return total


def _sym(mats: np.ndarray) -> np.ndarray:
    return 0.5 * (mats + mats.transpose(0, 2, 1))


def _nt_scaling(s_mats: np.ndarray, z_mats: np.ndarray):
    """Per-block NT factors: G, G^-1, lam with G^-1 S G^-T = G^T Z G = diag(lam)."""
    ls = np.linalg.cholesky(s_mats)
    lz = np.linalg.cholesky(z_mats)
    prod = lz.transpose(0, 2, 1) @ ls
    _, sig, vt = np.linalg.svd(prod)
    sqrt_sig = np.sqrt(sig)
    ls_inv = np.linalg.inv(ls)
    lz_inv = np.linalg.inv(lz)
    g = ls @ vt.transpose(0, 2, 1) / sqrt_sig[:, None, :]
    gi = sqrt_sig[:, :, None] * (vt @ ls_inv)
    return g, gi, sig, ls_inv, lz_inv


def _min_scaled_eig(l_inv: np.ndarray, d_mats: np.ndarray) -> float:
    t = _sym(l_inv @ d_mats @ l_inv.transpose(0, 2, 1))
    return float(np.linalg.eigvalsh(t)[:, 0].min())


def _max_step(l_invs, d_list) -> float:
    worst = 0.0
    for l_inv, d in zip(l_invs, d_list):
        m = _min_scaled_eig(l_inv, d)
        worst = min(worst, m)
    return np.inf if worst >= 0.0 else -1.0 / worst


class _Workspace:
    """Per-solve state tying the compiled arrays to the kernel backend."""

    def __init__(self, comp: Compiled):
        self.comp = comp
        self.kern = get_kernels()
        self.zero_flat = np.zeros(comp.flat_size)
        n, p = comp.nvars, comp.b.size
        self.n, self.p = n, p

        rows = [comp.q_row.astype(np.int64), comp.q_col.astype(np.int64)]
        cols = [comp.q_col.astype(np.int64), comp.q_row.astype(np.int64)]
        self.q_mirror = np.nonzero(comp.q_row != comp.q_col)[0]
        rows[1] = rows[1][self.q_mirror]
        cols[1] = cols[1][self.q_mirror]
        self.db_patterns = []
        for db in comp.dense_blocks:
            iu, ju = np.triu_indices(db.var_ids.size)
            r_ = db.var_ids[iu].astype(np.int64)
            c_ = db.var_ids[ju].astype(np.int64)
            mir = np.nonzero(r_ != c_)[0]
            self.db_patterns.append(mir)
            rows += [r_, c_[mir]]
            cols += [c_, r_[mir]]
            db.adj_coef = db.e_coef * np.where(db.e_r == db.e_c, 1.0, 2.0)
        diag = np.arange(n, dtype=np.int64)
        acoo = comp.A.tocoo()
        self.a_data = acoo.data.copy()
        rows += [diag, acoo.row.astype(np.int64) + n, acoo.col.astype(np.int64),
                 np.arange(p, dtype=np.int64) + n]
        cols += [diag, acoo.col.astype(np.int64), acoo.row.astype(np.int64) + n,
                 np.arange(p, dtype=np.int64) + n]
        self.kkt_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        self.kkt_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)

    # -- block-space operations ------------------------------------------

    def eval_blocks(self, x: np.ndarray, with_const: bool) -> list[np.ndarray]:
        comp = self.comp
        base = comp.f0_flat if with_const else self.zero_flat
        flat = self.kern.eval_affine(base, comp.ev_off, comp.ev_var, comp.ev_coef, x)
        out = []
        for g in comp.groups:
            seg = flat[g.base : g.base + g.count * g.dim * g.dim]
            out.append(g.to_reduced(seg.reshape(g.count, g.dim, g.dim)))
        return out

    def adjoint_reduced(self, mats: list[np.ndarray]) -> np.ndarray:
        comp = self.comp
        flat = np.empty(comp.flat_size)
        for g, m in zip(comp.groups, mats):
            flat[g.base : g.base + g.count * g.dim * g.dim] = g.to_original(m).reshape(-1)
        return self.kern.adjoint(flat, comp.ad_off, comp.ad_var, comp.ad_coef, comp.nvars)

    def lift_flat(self, mats: list[np.ndarray]) -> np.ndarray:
        comp = self.comp
        flat = np.empty(comp.flat_size)
        for g, m in zip(comp.groups, mats):
            flat[g.base : g.base + g.count * g.dim * g.dim] = g.to_original(m).reshape(-1)
        return flat

    # -- Schur assembly and factorization ----------------------------------

    def _dense_block_vals(self, db, b_lift: np.ndarray) -> np.ndarray:
        g = self.comp.groups[db.group_index]
        d = g.dim
        off = g.base + db.local_index * d * d
        bmat = b_lift[off : off + d * d].reshape(d, d)
        nvb = db.var_ids.size
        vals = np.empty(nvb * (nvb + 1) // 2)
        pos = 0
        for k in range(nvb):
            s, e = db.var_ptr[k], db.var_ptr[k + 1]
            rs, cs, cf = db.e_r[s:e], db.e_c[s:e], db.e_coef[s:e]
            q = (bmat[:, rs] * cf) @ bmat[cs, :]
            offd = rs != cs
            if offd.any():
                q = q + (bmat[:, cs[offd]] * cf[offd]) @ bmat[rs[offd], :]
            ip = np.bincount(
                db.e_local_var,
                weights=db.adj_coef * q[db.e_r, db.e_c],
                minlength=nvb,
            )
            vals[pos : pos + nvb - k] = ip[k:]
            pos += nvb - k
        return vals

    def factorize(self, b_hat: list[np.ndarray], reg: float):
        comp = self.comp
        b_lift = self.lift_flat(b_hat)
        qvals = self.kern.schur_vals(
            b_lift, comp.q_i1, comp.q_i2, comp.q_i3, comp.q_i4, comp.q_coef
        )
        parts = [qvals, qvals[self.q_mirror]]
        for db, mir in zip(comp.dense_blocks, self.db_patterns):
            dv = self._dense_block_vals(db, b_lift)
            parts += [dv, dv[mir]]
        scale = 1.0 + (float(np.abs(qvals).max()) if qvals.size else 0.0)
        eps = reg * scale
        parts += [np.full(self.n, eps), self.a_data, self.a_data,
                  np.full(self.p, -reg if reg else 0.0)]
        vals = np.concatenate(parts)
        dim = self.n + self.p
        kkt = sp.coo_matrix((vals, (self.kkt_rows, self.kkt_cols)), shape=(dim, dim)).tocsc()
        # The KKT pattern is structurally symmetric; minimum-degree on
        # A + A^T keeps fill an order of magnitude below COLAMD here.
        return splu(kkt, permc_spec="MMD_AT_PLUS_A"), kkt

    def newton(self, lu, kkt, q_list, rc_list, r_p, r_d, gi_list):
        """Directions for one scaled-space centering target Q per block.

        Q is the Lyapunov-solved target so that dS + W dZ W = G Q G^T; the
        dual direction is recovered in the scaled space, where the products
        stay best conditioned.
        """
        t_list = [
            q - _sym(gi @ rc @ gi.transpose(0, 2, 1))
            for q, gi, rc in zip(q_list, gi_list, rc_list)
        ]
        w_list = [
            _sym(gi.transpose(0, 2, 1) @ t @ gi) for gi, t in zip(gi_list, t_list)
        ]
        h1 = self.adjoint_reduced(w_list) - r_d
        rhs = np.concatenate([h1, r_p])
        if rhs.size:
            sol = lu.solve(rhs)
            rhs_scale = 1.0 + float(np.abs(rhs).max())
            for _ in range(3):
                resid = rhs - kkt @ sol
                if float(np.abs(resid).max()) <= 1e-14 * rhs_scale:
                    break
                sol = sol + lu.solve(resid)
        else:
            sol = rhs
        dx = sol[: self.n]
        dy = -sol[self.n :]
        f_dx = self.eval_blocks(dx, with_const=False)
        ds = [fd + rc for fd, rc in zip(f_dx, rc_list)]
        dz = [
            _sym(gi.transpose(0, 2, 1) @ (q - _sym(gi @ s @ gi.transpose(0, 2, 1))) @ gi)
            for gi, q, s in zip(gi_list, q_list, ds)
        ]
        return dx, dy, ds, dz


def _early_solution(problem, comp, t0, status):
    return Solution(
        status=status,
        primal_values=np.zeros(problem.num_vars),
        objective_value=float("nan"),
        duality_gap=float("inf"),
        equality_residual_inf_norm=float("inf"),
        min_block_eigenvalue=float("-inf"),
        iterations=0,
        dual_equality=np.zeros(problem.num_equalities),
        dual_blocks=[np.zeros((b.dim, b.dim)) for b in problem.blocks],
        solve_seconds=time.perf_counter() - t0,
        backend=current_backend(),
        messages=list(comp.messages),
    )


def _recover_duals(problem, comp, y_red, z_orig):
    """Original-space equality duals, including eliminated pinning rows."""
    y = np.zeros(problem.num_equalities)
    y[comp.kept_rows] = y_red
    resid = problem.objective_dense() - original_adjoint(problem, z_orig)
    for r in comp.kept_rows:
        np.subtract.at(resid, problem.eq_vars[r], problem.eq_coefs[r] * y[r])
    for r, var, coef in reversed(comp.consumed_rows):
        y[r] = resid[var] / coef
        np.subtract.at(resid, problem.eq_vars[r], problem.eq_coefs[r] * y[r])
    return y


def solve(
    problem: ConicProblem,
    settings: SolverSettings | None = None,
    log_stream=None,
) -> Solution:
    """Solve a conic problem to the configured tolerances.

    Returns a :class:`Solution`; conic failure modes are reported through
    ``status`` rather than raised. Deterministic for fixed inputs,
    settings, and kernel backend.
    """
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    comp = compile_problem(problem)
    if comp.status == "infeasible-detected":
        return _early_solution(problem, comp, t0, "infeasible-detected")

    ws = _Workspace(comp)
    groups = comp.groups
    n, p = ws.n, ws.p

    # Documented start: per-block scaled identities S0 = (1 + |F0|_max) I,
    # dual blocks Z0 = (1 + |c|_inf) I, x0 = 0, y0 = 0.
    x = np.zeros(n)
    y = np.zeros(p)
    s_list, z_list = [], []
    zeta = 1.0 + (float(np.abs(comp.c).max()) if comp.c.size else 0.0)
    for g in groups:
        eta = 1.0 + np.abs(g.f0_hat).reshape(g.count, -1).max(axis=1)
        eye = np.broadcast_to(np.eye(g.rdim), (g.count, g.rdim, g.rdim))
        s_list.append(eta[:, None, None] * eye)
        z_list.append(zeta * np.ones(g.count)[:, None, None] * eye)

    b_inf = float(np.abs(comp.b).max()) if comp.b.size else 0.0
    c_inf = float(np.abs(comp.c).max()) if comp.c.size else 0.0
    f0_inf = float(np.abs(comp.f0_flat).max()) if comp.f0_flat.size else 0.0
    p_scale = 1.0 + max(b_inf, f0_inf)
    d_scale = 1.0 + c_inf

    status = "max-iters"
    messages = list(comp.messages)
    iterations = 0
    mu = float("nan")
    best = None  # (merit, x, y, s_list, z_list, iteration)

    for it in range(1, settings.max_iters + 1):
        iterations = it
        fx = ws.eval_blocks(x, with_const=True)
        rc_list = [f - s for f, s in zip(fx, s_list)]
        r_p = comp.b - comp.A @ x
        fstar_z = ws.adjoint_reduced(z_list)
        r_d = comp.c - comp.A.T @ y - fstar_z

        pobj = float(comp.c @ x)
        dobj = float(comp.b @ y) - sum(
            float(np.einsum("bij,bij->", g.f0_hat, z)) for g, z in zip(groups, z_list)
        )
        gap_inner = sum(float(np.einsum("bij,bij->", s, z)) for s, z in zip(s_list, z_list))
        mu = max(gap_inner, 1e-300) / comp.nu
        norm = 1.0 + abs(pobj) + abs(dobj)
        relgap = abs(pobj - dobj) / norm
        mu_rel = max(gap_inner, 0.0) / norm
        pres = max(
            float(np.abs(r_p).max()) if r_p.size else 0.0,
            max(float(np.abs(rc).max()) if rc.size else 0.0 for rc in rc_list),
        ) / p_scale
        dres = (float(np.abs(r_d).max()) if r_d.size else 0.0) / d_scale

        merit = max(pres, dres, relgap)
        if best is None or merit < best[0]:
            best = (merit, x, y, s_list, z_list, it - 1)
        elif it - 1 - best[5] >= 10:
            status = "numerical-failure"
            messages.append(
                f"no progress over 10 iterations (best merit {best[0]:.3e}); "
                "requested tolerances appear unattainable in double precision"
            )
            break

        if log_stream is not None or settings.verbosity >= 1:
            line = (
                f"iter={it - 1} mu={mu:.3e} gap={relgap:.3e} "
                f"pres={pres:.3e} dres={dres:.3e} pobj={pobj:.9e}"
            )
            if log_stream is not None:
                log_stream.write(line + "\n")
            if settings.verbosity >= 1:
                print(line)

        if pres <= settings.feas_tol and dres <= settings.feas_tol and relgap <= settings.gap_tol:
            status = "optimal"
            iterations = it - 1
            break

        try:
            nt = [_nt_scaling(s, z) for s, z in zip(s_list, z_list)]
        except np.linalg.LinAlgError:
            status = "numerical-failure"
            messages.append(f"lost positive definiteness at iteration {it}")
            break
        g_list = [t[0] for t in nt]
        gi_list = [t[1] for t in nt]
        lam_list = [t[2] for t in nt]
        ls_inv = [t[3] for t in nt]
        lz_inv = [t[4] for t in nt]
        b_hat = [gi.transpose(0, 2, 1) @ gi for gi in gi_list]

        lu = kkt = None
        for reg in _REG_LADDER:
            try:
                lu, kkt = ws.factorize(b_hat, reg)
                break
            except RuntimeError:
                continue
        if lu is None:
            status = "numerical-failure"
            messages.append(f"KKT factorization failed at iteration {it}")
            break

        # Predictor: affine direction; the sigma = 0 scaled target is -diag(lam).
        q_aff = []
        for g, lam in zip(groups, lam_list):
            q = np.zeros((g.count, g.rdim, g.rdim))
            rd = np.arange(g.rdim)
            q[:, rd, rd] = -lam
            q_aff.append(q)
        dx_a, dy_a, ds_a, dz_a = ws.newton(lu, kkt, q_aff, rc_list, r_p, r_d, gi_list)
        ap_aff = min(1.0, _max_step(ls_inv, ds_a))
        ad_aff = min(1.0, _max_step(lz_inv, dz_a))
        mu_aff = sum(
            float(np.einsum("bij,bij->", s + ap_aff * ds, z + ad_aff * dz))
            for s, ds, z, dz in zip(s_list, ds_a, z_list, dz_a)
        ) / comp.nu
        sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, _SIGMA_MIN, _SIGMA_MAX))
        # Do not let complementarity run far ahead of feasibility; the NT
        # scaling degenerates once mu drops below the residual level.
        if mu_rel < 0.1 * max(pres, dres):
            sigma = max(sigma, 0.5)

        # Corrector with the second-order term in the scaled space.
        q_corr = []
        for g_f, gi, lam, ds, dz in zip(g_list, gi_list, lam_list, ds_a, dz_a):
            ds_t = gi @ ds @ gi.transpose(0, 2, 1)
            dz_t = g_f.transpose(0, 2, 1) @ dz @ g_f
            rlam = -0.5 * (ds_t @ dz_t + dz_t @ ds_t)
            rd = np.arange(lam.shape[1])
            rlam[:, rd, rd] += sigma * mu - lam**2
            denom = lam[:, :, None] + lam[:, None, :]
            q_corr.append(2.0 * rlam / denom)

        dx, dy, ds, dz = ws.newton(lu, kkt, q_corr, rc_list, r_p, r_d, gi_list)
        ap_max = _max_step(ls_inv, ds)
        ad_max = _max_step(lz_inv, dz)
        # Damping relaxes toward a full step as the boundary allows it.
        damping = 0.9 + 0.09 * min(1.0, ap_max, ad_max)
        alpha_p = min(1.0, damping * ap_max)
        alpha_d = min(1.0, damping * ad_max)
        if not np.isfinite(alpha_p) or not np.isfinite(alpha_d):
            status = "numerical-failure"
            messages.append("non-finite step length")
            break
        if alpha_p < 1e-12 and alpha_d < 1e-12:
            status = "numerical-failure"
            messages.append(f"step lengths collapsed at iteration {it}")
            break

        x = x + alpha_p * dx
        y = y + alpha_d * dy
        s_list = [s + alpha_p * d for s, d in zip(s_list, ds)]
        z_list = [z + alpha_d * d for z, d in zip(z_list, dz)]
        if not np.isfinite(x).all():
            status = "numerical-failure"
            messages.append("iterate diverged")
            break

    # If later iterations degraded (tolerances out of float64 reach), report
    # the best iterate seen; re-grade its residuals against the tolerances.
    if best is not None:
        merit, bx, by, bs, bz, bit = best
        final_merit = max(pres, dres, relgap) if iterations else np.inf
        if merit < final_merit:
            x, y, s_list, z_list = bx, by, bs, bz
            if status != "optimal":
                fx = ws.eval_blocks(x, with_const=True)
                rc_list = [f - s for f, s in zip(fx, s_list)]
                r_p = comp.b - comp.A @ x
                r_d = comp.c - comp.A.T @ y - ws.adjoint_reduced(z_list)
                pres = max(
                    float(np.abs(r_p).max()) if r_p.size else 0.0,
                    max(float(np.abs(rc).max()) if rc.size else 0.0 for rc in rc_list),
                ) / p_scale
                dres = (float(np.abs(r_d).max()) if r_d.size else 0.0) / d_scale
                pobj = float(comp.c @ x)
                dobj = float(comp.b @ y) - sum(
                    float(np.einsum("bij,bij->", g.f0_hat, z)) for g, z in zip(groups, z_list)
                )
                relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
                if (
                    pres <= settings.feas_tol
                    and dres <= settings.feas_tol
                    and relgap <= settings.gap_tol
                ):
                    messages.append(
                        f"restored iterate {bit}, which already met the tolerances"
                    )
                    status = "optimal"
                    iterations = bit

    # Map back to the original problem.
    x_full = comp.splice(x)
    z_by_member: dict[int, np.ndarray] = {}
    for g, z in zip(groups, z_list):
        z_orig_g = g.to_original(z)
        for lb, member in enumerate(g.members):
            z_by_member[member] = z_orig_g[lb]
    z_orig = [
        z_by_member.get(k, np.zeros((blk.dim, blk.dim)))
        for k, blk in enumerate(problem.blocks)
    ]
    y_full = _recover_duals(problem, comp, y, z_orig)

    pobj = problem.objective_value(x_full)
    dobj = float(np.dot(problem.eq_rhs, y_full)) - original_const_inner(problem, z_orig)
    relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    eq_res = problem.equality_residuals(x_full)
    eq_inf = float(np.abs(eq_res).max()) if eq_res.size else 0.0
    min_eig = min(
        float(np.linalg.eigvalsh(blk.materialize(x_full))[0]) for blk in problem.blocks
    )

    return Solution(
        status=status,
        primal_values=x_full,
        objective_value=pobj,
        duality_gap=relgap,
        equality_residual_inf_norm=eq_inf,
        min_block_eigenvalue=min_eig,
        iterations=iterations,
        dual_equality=y_full,
        dual_blocks=z_orig,
        mu=mu,
        solve_seconds=time.perf_counter() - t0,
        backend=current_backend(),
        messages=messages,
    )
