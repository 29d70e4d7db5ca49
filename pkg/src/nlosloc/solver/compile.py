"""Presolve and compilation of a :class:`ConicProblem` into solver arrays.

Three equivalence-preserving reductions run before the interior-point
iteration:

1. Fixed-variable elimination. Equality rows that pin a single variable
   (directly, or after earlier substitutions) remove that variable; its
   value folds into block constants, other rows, and the reported
   objective. Contradictory pins surface as ``infeasible-detected``.
2. Forced-kernel block reduction. If some vector is annihilated by a
   block's constant part and by every coefficient matrix, the block is
   singular on that direction at every point, so the feasible set has no
   interior there. Each block is restricted to the orthogonal complement
   of that common kernel (an exact facial reduction); pinned node columns
   inside a lifted block always produce such kernels.
3. Dependent equality rows are dropped (with a warning); rows whose
   right-hand side is inconsistent with the rest flag infeasibility.

The compiled form stores every block group's matrices stacked, plus flat
index arrays that let single kernel calls evaluate the block map, its
adjoint, and the Schur-complement contributions across all blocks at once.
Schur contributions use the identity tr(F_u' B' F_v B') = tr(F_u B F_v B)
with B = P B' P^T, so the sparse original-coordinate entries stay usable
after reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..conic import ConicProblem
from ..errors import InvalidInputError

KERNEL_EIG_TOL = 1e-10
QUAD_LIMIT = 8_000_000       # entry-pair budget per block before the dense Schur path
RANK_CHECK_LIMIT = 1200      # max leftover rows for the dense dependence check


@dataclass
class Group:
    """Blocks sharing (original dim, reduced dim), stacked."""

    dim: int
    rdim: int
    count: int
    base: int                      # offset of the group in the flat original layout
    P: np.ndarray | None           # (count, dim, rdim); None when no reduction
    f0_hat: np.ndarray             # (count, rdim, rdim)
    members: np.ndarray = None     # original block index per stacked block

    def to_reduced(self, mats: np.ndarray) -> np.ndarray:
        """Congruence P^T M P, batched over the group."""
        if self.P is None:
            return mats
        return np.einsum("bdr,bde,bes->brs", self.P, mats, self.P, optimize=True)

    def to_original(self, mats: np.ndarray) -> np.ndarray:
        """Congruence P M P^T, batched over the group."""
        if self.P is None:
            return mats
        return np.einsum("bdr,brs,bes->bde", self.P, mats, self.P, optimize=True)


@dataclass
class DenseSchurBlock:
    """Fallback Schur path for one block with too many entry pairs."""

    group_index: int
    local_index: int
    dim: int
    var_ids: np.ndarray            # sorted unique reduced vars in this block
    var_ptr: np.ndarray            # entry boundaries per var (len(var_ids)+1)
    e_r: np.ndarray
    e_c: np.ndarray
    e_coef: np.ndarray
    e_local_var: np.ndarray        # index into var_ids per entry


@dataclass
class Compiled:
    problem: ConicProblem
    status: str | None
    messages: list[str] = field(default_factory=list)
    nvars: int = 0
    c: np.ndarray | None = None
    A: sp.csr_matrix | None = None
    b: np.ndarray | None = None
    groups: list[Group] = field(default_factory=list)
    flat_size: int = 0
    f0_flat: np.ndarray | None = None
    ev_off: np.ndarray | None = None
    ev_var: np.ndarray | None = None
    ev_coef: np.ndarray | None = None
    ad_off: np.ndarray | None = None
    ad_var: np.ndarray | None = None
    ad_coef: np.ndarray | None = None
    q_i1: np.ndarray | None = None
    q_i2: np.ndarray | None = None
    q_i3: np.ndarray | None = None
    q_i4: np.ndarray | None = None
    q_coef: np.ndarray | None = None
    q_row: np.ndarray | None = None
    q_col: np.ndarray | None = None
    dense_blocks: list[DenseSchurBlock] = field(default_factory=list)
    fixed_mask: np.ndarray | None = None
    fixed_vals: np.ndarray | None = None
    keep: np.ndarray | None = None
    kept_rows: np.ndarray | None = None
    consumed_rows: list[tuple[int, int, float]] = field(default_factory=list)
    dropped_rows: list[int] = field(default_factory=list)
    nu: int = 0

    def splice(self, x_red: np.ndarray) -> np.ndarray:
        """Reduced solution vector -> full original variable vector."""
        x = self.fixed_vals.copy()
        x[self.keep] = x_red
        return x


def _eliminate_fixed(problem: ConicProblem):
    """Repeatedly substitute single-variable equality rows."""
    nv = problem.num_vars
    nrows = problem.num_equalities
    fixed_vals = np.zeros(nv)
    is_fixed = np.zeros(nv, dtype=bool)
    consumed: list[tuple[int, int, float]] = []
    dropped: list[int] = []
    rows: list[tuple[np.ndarray, np.ndarray, float]] = []
    for r in range(nrows):
        vs = problem.eq_vars[r]
        cs = problem.eq_coefs[r]
        if vs.size != np.unique(vs).size:
            agg: dict[int, float] = {}
            for v, cc in zip(vs.tolist(), cs.tolist()):
                agg[v] = agg.get(v, 0.0) + cc
            vs = np.asarray(sorted(agg), dtype=np.int32)
            cs = np.asarray([agg[v] for v in vs], dtype=np.float64)
        rows.append((vs, cs, float(problem.eq_rhs[r])))
    alive = np.ones(nrows, dtype=bool)

    progress = True
    while progress:
        progress = False
        for r in range(nrows):
            if not alive[r]:
                continue
            vs, cs, rhs = rows[r]
            mask = is_fixed[vs] if vs.size else np.zeros(0, dtype=bool)
            if mask.any():
                rhs -= float(np.dot(cs[mask], fixed_vals[vs[mask]]))
                vs, cs = vs[~mask], cs[~mask]
            nz = cs != 0.0
            if not nz.all():
                vs, cs = vs[nz], cs[nz]
            rows[r] = (vs, cs, rhs)
            if vs.size == 0:
                alive[r] = False
                progress = True
                scale = 1.0 + abs(float(problem.eq_rhs[r]))
                if abs(rhs) > 1e-8 * scale:
                    return None, None, None, None, None, r
                dropped.append(r)
            elif vs.size == 1:
                v, k = int(vs[0]), float(cs[0])
                alive[r] = False
                progress = True
                is_fixed[v] = True
                fixed_vals[v] = rhs / k
                consumed.append((r, v, k))
    return rows, alive, is_fixed, fixed_vals, consumed, dropped


def _independent_rows(kept: list[tuple[int, np.ndarray, np.ndarray, float]], nvars: int, msgs: list[str]):
    """Peel structurally independent rows; rank-check the leftover densely.

    Returns (ordered kept row list, dropped original-row ids, infeasible_row or None).
    """
    n = len(kept)
    row_vars = [set(vs.tolist()) for _, vs, _, _ in kept]
    var_rows: dict[int, set[int]] = {}
    for r, vs in enumerate(row_vars):
        for v in vs:
            var_rows.setdefault(v, set()).add(r)
    remaining = set(range(n))
    peeled: set[int] = set()
    progress = True
    while progress:
        progress = False
        for r in list(remaining):
            if any(len(var_rows[v]) == 1 for v in row_vars[r]):
                remaining.discard(r)
                peeled.add(r)
                for v in row_vars[r]:
                    var_rows[v].discard(r)
                progress = True
    if not remaining:
        return kept, [], None

    leftover = sorted(remaining)
    if len(leftover) > RANK_CHECK_LIMIT:
        msgs.append(
            f"skipped dependence check on {len(leftover)} coupled equality rows; "
            "assuming full rank"
        )
        return kept, [], None

    cols = sorted({v for r in leftover for v in row_vars[r]})
    col_of = {v: k for k, v in enumerate(cols)}
    dense = np.zeros((len(leftover), len(cols)))
    rhs = np.zeros(len(leftover))
    for k, r in enumerate(leftover):
        _, vs, cs, rr = kept[r]
        dense[k, [col_of[v] for v in vs.tolist()]] = cs
        rhs[k] = rr
    _, rmat, piv = scipy.linalg.qr(dense.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat)) if rmat.size else np.zeros(0)
    tol = max(dense.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    rank = int((diag > tol).sum())
    keep_local = sorted(piv[:rank].tolist())
    drop_local = sorted(piv[rank:].tolist())
    if not drop_local:
        return kept, [], None

    base = dense[keep_local]
    base_rhs = rhs[keep_local]
    dropped_orig: list[int] = []
    for d in drop_local:
        coefs, *_ = np.linalg.lstsq(base.T, dense[d], rcond=None)
        predicted = float(np.dot(coefs, base_rhs))
        if abs(predicted - rhs[d]) > 1e-7 * (1.0 + abs(rhs[d])):
            return kept, [], kept[d][0]
        dropped_orig.append(kept[leftover[d]][0])
    drop_set = {leftover[d] for d in drop_local}
    new_kept = [row for k, row in enumerate(kept) if k not in drop_set]
    msgs.append(f"dropped {len(drop_set)} dependent equality rows")
    return new_kept, dropped_orig, None


def _block_constant_and_terms(blk, is_fixed, fixed_vals, red_of):
    """Fold fixed variables into the dense constant part; reindex live terms."""
    d = blk.dim
    f0 = np.zeros((d, d))
    for r, c, v in zip(blk.const_rows, blk.const_cols, blk.const_vals):
        f0[r, c] += v
        if r != c:
            f0[c, r] += v
    live_var, live_r, live_c, live_coef = [], [], [], []
    for var, r, c, coef in zip(blk.term_vars, blk.term_rows, blk.term_cols, blk.term_coefs):
        if is_fixed[var]:
            val = coef * fixed_vals[var]
            f0[r, c] += val
            if r != c:
                f0[c, r] += val
        elif coef != 0.0:
            live_var.append(red_of[var])
            live_r.append(r)
            live_c.append(c)
            live_coef.append(coef)
    order = np.lexsort((live_r, live_c, live_var)) if live_var else np.zeros(0, dtype=np.int64)
    return (
        f0,
        np.asarray(live_var, dtype=np.int32)[order],
        np.asarray(live_r, dtype=np.int32)[order],
        np.asarray(live_c, dtype=np.int32)[order],
        np.asarray(live_coef, dtype=np.float64)[order],
    )


def _forced_kernel_basis(f0, e_var, e_r, e_c, e_coef):
    """Orthonormal basis of the complement of the common kernel, or None."""
    d = f0.shape[0]
    if d == 1:
        nonzero = (np.abs(f0[0, 0]) > 0.0) or e_coef.size > 0
        return None if nonzero else np.zeros((1, 0))
    mats = 1 + (int(e_var.max()) + 1 if e_var.size else 0)
    if d <= 8:
        gram = f0 @ f0
        if e_var.size:
            uniq = np.unique(e_var)
            for v in uniq:
                sel = e_var == v
                fv = np.zeros((d, d))
                fv[e_r[sel], e_c[sel]] += e_coef[sel]
                off = e_r[sel] != e_c[sel]
                fv[e_c[sel][off], e_r[sel][off]] += e_coef[sel][off]
                gram += fv @ fv
    else:
        rows_idx, cols_idx, vals = [], [], []

        def put(mat_index, r, c, v):
            rows_idx.append(mat_index * d + r)
            cols_idx.append(c)
            vals.append(v)

        nz = np.nonzero(f0)
        for r, c in zip(*nz):
            put(0, int(r), int(c), f0[r, c])
        if e_var.size:
            _, mat_of = np.unique(e_var, return_inverse=True)
            for k in range(e_var.size):
                m = int(mat_of[k]) + 1
                put(m, int(e_r[k]), int(e_c[k]), float(e_coef[k]))
                if e_r[k] != e_c[k]:
                    put(m, int(e_c[k]), int(e_r[k]), float(e_coef[k]))
            mats = int(mat_of.max()) + 2
        stack = sp.coo_matrix((vals, (rows_idx, cols_idx)), shape=(mats * d, d))
        gram = (stack.T @ stack).toarray()
    evals, evecs = np.linalg.eigh(gram)
    thr = KERNEL_EIG_TOL * max(float(evals[-1]), 1.0)
    kdim = int((evals <= thr).sum())
    if kdim == 0:
        return None
    return evecs[:, kdim:]


def _quadruples(base_off, dim, e_var, e_r, e_c, e_coef):
    """All entry-pair Schur contributions of one block, vectorized."""
    k = e_var.size
    p, q = np.triu_indices(k)
    vp, vq = e_var[p], e_var[q]
    a, b_ = e_r[p], e_c[p]
    cc, dd = e_r[q], e_c[q]
    diag_p = a == b_
    diag_q = cc == dd
    kappa = np.where(diag_p & diag_q, 0.5, np.where(diag_p | diag_q, 1.0, 2.0))
    mult = np.where((vp == vq) & (p != q), 2.0, 1.0)
    coef = e_coef[p] * e_coef[q] * kappa * mult
    i1 = base_off + a * dim + cc
    i2 = base_off + b_ * dim + dd
    i3 = base_off + a * dim + dd
    i4 = base_off + b_ * dim + cc
    return (
        i1.astype(np.int64),
        i2.astype(np.int64),
        i3.astype(np.int64),
        i4.astype(np.int64),
        coef,
        np.minimum(vp, vq).astype(np.int32),
        np.maximum(vp, vq).astype(np.int32),
    )


def compile_problem(problem: ConicProblem) -> Compiled:
    msgs: list[str] = []
    if not problem.blocks:
        raise InvalidInputError("problem has no PSD blocks")

    res = _eliminate_fixed(problem)
    if res[0] is None:
        bad = res[5]
        return Compiled(
            problem=problem,
            status="infeasible-detected",
            messages=[f"contradictory equality row {bad} ({problem.eq_labels[bad]})"],
        )
    rows, alive, is_fixed, fixed_vals, consumed, dropped = res

    # Variable appearance analysis on the reduced system.
    nv = problem.num_vars
    in_block = np.zeros(nv, dtype=bool)
    for blk in problem.blocks:
        in_block[blk.term_vars] = True
    in_eq = np.zeros(nv, dtype=bool)
    for r in range(len(rows)):
        if alive[r] and rows[r][0].size:
            in_eq[rows[r][0]] = True
    c_full = problem.objective_dense()
    for v in range(nv):
        if is_fixed[v] or in_block[v] or in_eq[v]:
            continue
        label = problem.var_labels[v] if problem.var_labels else str(v)
        if c_full[v] != 0.0:
            raise InvalidInputError(
                f"variable {label!r} appears only in the objective; problem is unbounded"
            )
        is_fixed[v] = True
        fixed_vals[v] = 0.0
        msgs.append(f"variable {label!r} appears nowhere; fixed to 0")
    orphans = [
        problem.var_labels[v] if problem.var_labels else str(v)
        for v in range(nv)
        if not is_fixed[v] and not in_block[v]
    ]
    if orphans:
        msgs.append(
            f"{len(orphans)} variables appear in no PSD block "
            f"(first: {orphans[0]!r}); Newton system may need regularization"
        )

    keep = np.where(~is_fixed)[0]
    red_of = np.full(nv, -1, dtype=np.int64)
    red_of[keep] = np.arange(keep.size)

    kept_rows_data: list[tuple[int, np.ndarray, np.ndarray, float]] = []
    for r in range(len(rows)):
        if alive[r]:
            vs, cs, rhs = rows[r]
            kept_rows_data.append((r, vs, cs, rhs))
    kept_rows_data, dep_dropped, bad_row = _independent_rows(kept_rows_data, keep.size, msgs)
    if bad_row is not None:
        return Compiled(
            problem=problem,
            status="infeasible-detected",
            messages=msgs
            + [f"equality row {bad_row} ({problem.eq_labels[bad_row]}) is inconsistent"],
        )
    dropped = dropped + dep_dropped

    p = len(kept_rows_data)
    a_rows, a_cols, a_vals = [], [], []
    b_red = np.zeros(p)
    kept_rows = np.zeros(p, dtype=np.int64)
    for k, (r, vs, cs, rhs) in enumerate(kept_rows_data):
        kept_rows[k] = r
        b_red[k] = rhs
        a_rows.extend([k] * vs.size)
        a_cols.extend(red_of[vs].tolist())
        a_vals.extend(cs.tolist())
    A = sp.csr_matrix((a_vals, (a_rows, a_cols)), shape=(p, keep.size))
    A.sum_duplicates()

    # Blocks: fold constants, find forced kernels, group by (dim, rdim).
    per_block = []
    for k, blk in enumerate(problem.blocks):
        f0, e_var, e_r, e_c, e_coef = _block_constant_and_terms(blk, is_fixed, fixed_vals, red_of)
        if e_var.size == 0:
            floor = float(np.linalg.eigvalsh(f0)[0])
            if floor < -1e-9 * (1.0 + float(np.abs(f0).max())):
                return Compiled(
                    problem=problem,
                    status="infeasible-detected",
                    messages=msgs
                    + [f"PSD block {k} is constant with min eigenvalue {floor:.3e}"],
                )
        basis = _forced_kernel_basis(f0, e_var, e_r, e_c, e_coef)
        rdim = blk.dim if basis is None else basis.shape[1]
        if rdim == 0:
            # Block is identically zero: trivially satisfied, skip it.
            msgs.append("dropped an identically-zero PSD block")
            per_block.append(None)
            continue
        per_block.append((blk.dim, rdim, basis, f0, e_var, e_r, e_c, e_coef))

    group_keys: list[tuple[int, int]] = []
    group_members: dict[tuple[int, int], list[int]] = {}
    for i, info in enumerate(per_block):
        if info is None:
            continue
        key = (info[0], info[1])
        if key not in group_members:
            group_members[key] = []
            group_keys.append(key)
        group_members[key].append(i)

    groups: list[Group] = []
    ev_off, ev_var, ev_coef = [], [], []
    ad_off, ad_var, ad_coef = [], [], []
    q_parts: list[tuple] = []
    dense_blocks: list[DenseSchurBlock] = []
    f0_segments: list[np.ndarray] = []
    base = 0
    for gi, key in enumerate(group_keys):
        dim, rdim = key
        members = group_members[key]
        count = len(members)
        p_stack = None if rdim == dim else np.zeros((count, dim, rdim))
        f0_stack = np.zeros((count, dim, dim))
        for lb, i in enumerate(members):
            _, _, basis, f0, e_var, e_r, e_c, e_coef = per_block[i]
            f0_stack[lb] = f0
            if p_stack is not None:
                p_stack[lb] = basis
            off = base + lb * dim * dim
            # eval entries, mirrored
            ev_off.append(off + e_r * dim + e_c)
            ev_var.append(e_var)
            ev_coef.append(e_coef)
            offd = e_r != e_c
            ev_off.append(off + e_c[offd] * dim + e_r[offd])
            ev_var.append(e_var[offd])
            ev_coef.append(e_coef[offd])
            # adjoint entries, upper with factor 2 off the diagonal
            ad_off.append(off + e_r * dim + e_c)
            ad_var.append(e_var)
            ad_coef.append(np.where(offd, 2.0, 1.0) * e_coef)
            # Schur contributions
            npairs = e_var.size * (e_var.size + 1) // 2
            if npairs > QUAD_LIMIT:
                var_ids, local = np.unique(e_var, return_inverse=True)
                order = np.argsort(local, kind="stable")
                ptr = np.searchsorted(local[order], np.arange(var_ids.size + 1))
                dense_blocks.append(
                    DenseSchurBlock(
                        group_index=gi,
                        local_index=lb,
                        dim=dim,
                        var_ids=var_ids.astype(np.int32),
                        var_ptr=ptr.astype(np.int64),
                        e_r=e_r[order],
                        e_c=e_c[order],
                        e_coef=e_coef[order],
                        e_local_var=local[order].astype(np.int64),
                    )
                )
                msgs.append(
                    f"block of dim {dim} uses the dense Schur path ({npairs} entry pairs)"
                )
            elif e_var.size:
                q_parts.append(_quadruples(off, dim, e_var, e_r, e_c, e_coef))
        if p_stack is None:
            f0_hat = f0_stack
        else:
            f0_hat = np.einsum("bdr,bde,bes->brs", p_stack, f0_stack, p_stack, optimize=True)
        groups.append(
            Group(
                dim=dim,
                rdim=rdim,
                count=count,
                base=base,
                P=p_stack,
                f0_hat=f0_hat,
                members=np.asarray(members, dtype=np.int64),
            )
        )
        f0_segments.append(f0_stack.reshape(-1))
        base += count * dim * dim

    if not groups:
        raise InvalidInputError("every PSD block reduced away; nothing to solve")

    def cat(parts, dtype):
        if not parts:
            return np.zeros(0, dtype=dtype)
        return np.concatenate([np.asarray(a, dtype=dtype) for a in parts])

    if q_parts:
        q_i1 = cat([qp[0] for qp in q_parts], np.int64)
        q_i2 = cat([qp[1] for qp in q_parts], np.int64)
        q_i3 = cat([qp[2] for qp in q_parts], np.int64)
        q_i4 = cat([qp[3] for qp in q_parts], np.int64)
        q_coef = cat([qp[4] for qp in q_parts], np.float64)
        q_row = cat([qp[5] for qp in q_parts], np.int32)
        q_col = cat([qp[6] for qp in q_parts], np.int32)
    else:
        q_i1 = q_i2 = q_i3 = q_i4 = np.zeros(0, dtype=np.int64)
        q_coef = np.zeros(0)
        q_row = q_col = np.zeros(0, dtype=np.int32)

    c_red = c_full[keep]
    nu = sum(g.count * g.rdim for g in groups)

    return Compiled(
        problem=problem,
        status=None,
        messages=msgs,
        nvars=keep.size,
        c=c_red,
        A=A,
        b=b_red,
        groups=groups,
        flat_size=base,
        f0_flat=cat(f0_segments, np.float64),
        ev_off=cat(ev_off, np.int64),
        ev_var=cat(ev_var, np.int32),
        ev_coef=cat(ev_coef, np.float64),
        ad_off=cat(ad_off, np.int64),
        ad_var=cat(ad_var, np.int32),
        ad_coef=cat(ad_coef, np.float64),
        q_i1=q_i1,
        q_i2=q_i2,
        q_i3=q_i3,
        q_i4=q_i4,
        q_coef=q_coef,
        q_row=q_row,
        q_col=q_col,
        dense_blocks=dense_blocks,
        fixed_mask=is_fixed,
        fixed_vals=fixed_vals,
        keep=keep,
        kept_rows=kept_rows,
        consumed_rows=consumed,
        dropped_rows=dropped,
        nu=nu,
    )
