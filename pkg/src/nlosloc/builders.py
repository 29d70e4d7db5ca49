"""Builders for the lifted relaxations of the range-bound placement problem.

The nonconvex problem minimizes, over node positions, the sum over measured
edges of ``w * [ d_ij^2 + coeff * d_ij ]`` where ``d_ij`` is the edge length
and ``coeff`` is derived from the per-edge interval [lower, upper]. The lift
introduces, per edge, a squared-length surrogate (label ``sqdist:i:j``) and
a length surrogate (``dist:i:j``) coupled by a 2x2 epigraph block
``[[1, g], [g, s]] >= 0`` (i.e. s >= g^2), plus a Gram matrix coupling:

* full relaxation: one PSD block ``[[I2, X], [X^T, G]]`` over all nodes;
* edge relaxation: one 4x4 principal-submatrix block per measured edge,
  on rows/columns {0, 1, node i, node j}, sharing scalar variables.

Known node positions (anchors, or zero-radius priors under an enforced
ball) are pinned through single-variable equality constraints; Gram cells
mixing a pinned node with a free node are emitted as affine expressions of
the free node's coordinates, which positive semidefiniteness forces anyway.

Variable labels: ``corner:r:c`` (identity corner), ``pos:{node}:{axis}``,
``gram:{u}:{v}`` (u <= v), ``sqdist:{i}:{j}`` and ``dist:{i}:{j}`` (i < j).
Node ids are 1-based and dense: sensors 1..n, anchors n+1..n+m.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .conic import ConicProblem, PsdBlock
from .errors import InvalidInputError
from .geometry import DistanceBounds, Point2


class CoefficientMode(str, enum.Enum):
    """Linear-coefficient convention for the per-edge objective term.

    ``paper-literal`` uses ``-2 (l+u) g``, whose per-edge scalar minimizer
    sits at the interval's upper end ``l+u``. ``midpoint-consistent`` uses
    ``-(l+u) g`` so the minimizer of ``g^2 + coeff*g`` is the interval
    midpoint ``(l+u)/2``.
    """

    PAPER_LITERAL = "paper-literal"
    MIDPOINT = "midpoint-consistent"


@dataclass(frozen=True)
class AnchorPrior:
    """Estimated anchor position with an uncertainty radius."""

    j: int
    estimate: Point2
    radius: float = 0.0
    enforce_ball: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise InvalidInputError(f"prior radius must be nonnegative, got {self.radius}")


def edge_objective_term(
    bounds: DistanceBounds, weight: float = 1.0, mode: CoefficientMode = CoefficientMode.MIDPOINT
) -> tuple[float, float]:
    """Objective coefficients (on sqdist, on dist) for one edge."""
    width = bounds.lower + bounds.upper
    if mode is CoefficientMode.PAPER_LITERAL:
        return (weight, -2.0 * weight * width)
    return (weight, -weight * width)


def epigraph_block(sqdist_var: int, dist_var: int) -> PsdBlock:
    """2x2 block [[1, g], [g, s]] >= 0 encoding s >= g^2 with g free in sign."""
    return PsdBlock(
        dim=2,
        const_rows=[0],
        const_cols=[0],
        const_vals=[1.0],
        term_vars=[dist_var, sqdist_var],
        term_rows=[0, 1],
        term_cols=[1, 1],
        term_coefs=[1.0, 1.0],
    )


def objective_at_positions(
    bounds: Sequence[DistanceBounds],
    positions: Mapping[int, Point2],
    mode: CoefficientMode = CoefficientMode.MIDPOINT,
    weights: Mapping[tuple[int, int], float] | None = None,
) -> float:
    """Edge objective evaluated directly at a concrete configuration."""
    total = 0.0
    for b in bounds:
        w = 1.0 if weights is None else weights.get(b.edge, 1.0)
        c_sq, c_lin = edge_objective_term(b, w, mode)
        d = positions[b.i].distance_to(positions[b.j])
        total += c_sq * d * d + c_lin * d
    return total


def lifted_point(problem: ConicProblem, positions: Mapping[int, Point2]) -> np.ndarray:
    """Exact lift of a concrete configuration onto the problem's variables.

    Gram cells become inner products, sqdist/dist surrogates become the
    exact squared/plain edge lengths. Useful for feasibility and objective
    consistency checks.
    """
    x = np.zeros(problem.num_vars)
    for idx, label in enumerate(problem.var_labels):
        kind, _, rest = label.partition(":")
        if kind == "corner":
            r, c = rest.split(":")
            x[idx] = 1.0 if r == c else 0.0
        elif kind == "pos":
            node, axis = (int(t) for t in rest.split(":"))
            p = positions[node]
            x[idx] = p.x if axis == 0 else p.y
        elif kind == "gram":
            u, v = (int(t) for t in rest.split(":"))
            pu, pv = positions[u], positions[v]
            x[idx] = pu.x * pv.x + pu.y * pv.y
        elif kind in ("sqdist", "dist"):
            i, j = (int(t) for t in rest.split(":"))
            d = positions[i].distance_to(positions[j])
            x[idx] = d * d if kind == "sqdist" else d
        else:
            raise InvalidInputError(f"unknown variable label {label!r}")
    return x


class _Lift:
    """Shared scaffolding for all four builders."""

    def __init__(self) -> None:
        self.labels: list[str] = []
        self.pins: list[tuple[int, float]] = []
        self.eq_vars: list[list[int]] = []
        self.eq_coefs: list[list[float]] = []
        self.eq_rhs: list[float] = []
        self.eq_labels: list[str] = []
        self.obj: dict[int, float] = {}
        self.blocks: list[PsdBlock] = []

    def var(self, label: str) -> int:
        self.labels.append(label)
        return len(self.labels) - 1

    def pinned_var(self, label: str, value: float) -> int:
        idx = self.var(label)
        self.pins.append((idx, value))
        return idx

    def add_objective(self, idx: int, coef: float) -> None:
        if coef != 0.0:
            self.obj[idx] = self.obj.get(idx, 0.0) + coef

    def add_equality(self, label: str, terms: Sequence[tuple[int, float]], rhs: float) -> None:
        self.eq_vars.append([v for v, _ in terms])
        self.eq_coefs.append([c for _, c in terms])
        self.eq_rhs.append(rhs)
        self.eq_labels.append(label)

    def finish(self) -> ConicProblem:
        for idx, value in self.pins:
            self.add_equality(f"pin:{self.labels[idx]}", [(idx, 1.0)], value)
        obj_vars = sorted(self.obj)
        return ConicProblem(
            num_vars=len(self.labels),
            obj_vars=np.asarray(obj_vars, dtype=np.int32),
            obj_coefs=np.asarray([self.obj[v] for v in obj_vars]),
            eq_vars=[np.asarray(v, dtype=np.int32) for v in self.eq_vars],
            eq_coefs=[np.asarray(c) for c in self.eq_coefs],
            eq_rhs=np.asarray(self.eq_rhs),
            eq_labels=self.eq_labels,
            blocks=self.blocks,
            var_labels=self.labels,
        )


class _BlockSink:
    """Accumulates COO entries of one PSD block's affine map."""

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self.c_rows: list[int] = []
        self.c_cols: list[int] = []
        self.c_vals: list[float] = []
        self.t_vars: list[int] = []
        self.t_rows: list[int] = []
        self.t_cols: list[int] = []
        self.t_coefs: list[float] = []

    def const(self, r: int, c: int, v: float) -> None:
        if v != 0.0:
            self.c_rows.append(r)
            self.c_cols.append(c)
            self.c_vals.append(v)

    def term(self, r: int, c: int, var: int, coef: float) -> None:
        if coef != 0.0:
            self.t_vars.append(var)
            self.t_rows.append(r)
            self.t_cols.append(c)
            self.t_coefs.append(coef)

    def build(self) -> PsdBlock:
        return PsdBlock(
            dim=self.dim,
            const_rows=self.c_rows,
            const_cols=self.c_cols,
            const_vals=self.c_vals,
            term_vars=self.t_vars,
            term_rows=self.t_rows,
            term_cols=self.t_cols,
            term_coefs=self.t_coefs,
        )


def _validate_nodes(
    bounds: Sequence[DistanceBounds], n_sensors: int, anchor_ids: Sequence[int]
) -> list[tuple[int, int]]:
    n, m = n_sensors, len(anchor_ids)
    if sorted(anchor_ids) != list(range(n + 1, n + m + 1)):
        raise InvalidInputError(f"anchor ids must be dense in {n + 1}..{n + m}")
    if not bounds:
        raise InvalidInputError("at least one edge is required")
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for b in bounds:
        e = b.edge
        if not (1 <= e[0] <= n + m and 1 <= e[1] <= n + m):
            raise InvalidInputError(f"edge {e} references an unknown node id")
        if e[0] > n and e[1] > n:
            raise InvalidInputError(f"anchor-anchor edge {e} is not supported")
        if e in seen:
            raise InvalidInputError(f"duplicate edge {e}")
        seen.add(e)
        edges.append(e)
    return edges


def _build(
    bounds: Sequence[DistanceBounds],
    n_sensors: int,
    pinned_pos: Mapping[int, Point2],
    free_anchor_ids: Sequence[int],
    mode: CoefficientMode,
    weights: Mapping[tuple[int, int], float] | None,
    per_edge_blocks: bool,
    anchor_terms: Sequence[AnchorPrior] = (),
    ball_priors: Sequence[AnchorPrior] = (),
) -> ConicProblem:
    n = n_sensors
    anchor_ids = sorted(list(pinned_pos) + list(free_anchor_ids))
    num_nodes = n + len(anchor_ids)
    edges = _validate_nodes(bounds, n, anchor_ids)

    lift = _Lift()
    corner = {
        (0, 0): lift.pinned_var("corner:0:0", 1.0),
        (0, 1): lift.pinned_var("corner:0:1", 0.0),
        (1, 1): lift.pinned_var("corner:1:1", 1.0),
    }

    pos: dict[int, tuple[int, int]] = {}
    for v in range(1, num_nodes + 1):
        if v in pinned_pos:
            p = pinned_pos[v]
            pos[v] = (
                lift.pinned_var(f"pos:{v}:0", p.x),
                lift.pinned_var(f"pos:{v}:1", p.y),
            )
        else:
            pos[v] = (lift.var(f"pos:{v}:0"), lift.var(f"pos:{v}:1"))

    def gram_cell(u: int, v: int) -> list[tuple[int, float]]:
        """Resolve Gram cell (u, v) to a linear form over declared variables."""
        u, v = min(u, v), max(u, v)
        pin_u, pin_v = u in pinned_pos, v in pinned_pos
        if pin_u != pin_v:
            known, free = (u, v) if pin_u else (v, u)
            p = pinned_pos[known]
            return [(pos[free][0], p.x), (pos[free][1], p.y)]
        return [(gram_vars[(u, v)], 1.0)]

    gram_vars: dict[tuple[int, int], int] = {}
    for u in range(1, num_nodes + 1):
        for v in range(u, num_nodes + 1):
            pin_u, pin_v = u in pinned_pos, v in pinned_pos
            if pin_u and pin_v:
                pu, pv = pinned_pos[u], pinned_pos[v]
                gram_vars[(u, v)] = lift.pinned_var(f"gram:{u}:{v}", pu.x * pv.x + pu.y * pv.y)
            elif not pin_u and not pin_v:
                gram_vars[(u, v)] = lift.var(f"gram:{u}:{v}")

    edge_vars: dict[tuple[int, int], tuple[int, int]] = {}
    for e in sorted(edges):
        edge_vars[e] = (lift.var(f"sqdist:{e[0]}:{e[1]}"), lift.var(f"dist:{e[0]}:{e[1]}"))

    # Edge objective and squared-length coupling.
    for b in bounds:
        e = b.edge
        sq, li = edge_vars[e]
        w = 1.0 if weights is None else weights.get(e, 1.0)
        c_sq, c_lin = edge_objective_term(b, w, mode)
        lift.add_objective(sq, c_sq)
        lift.add_objective(li, c_lin)

        terms: dict[int, float] = {sq: 1.0}
        for var, coef in gram_cell(e[0], e[0]) + gram_cell(e[1], e[1]):
            terms[var] = terms.get(var, 0.0) - coef
        for var, coef in gram_cell(e[0], e[1]):
            terms[var] = terms.get(var, 0.0) + 2.0 * coef
        lift.add_equality(f"sqdist-def:{e[0]}:{e[1]}", sorted(terms.items()), 0.0)

    # Anchor-deviation objective and optional ball constraints.
    for prior in anchor_terms:
        xb = prior.estimate
        for var, coef in gram_cell(prior.j, prior.j):
            lift.add_objective(var, coef)
        lift.add_objective(pos[prior.j][0], -2.0 * xb.x)
        lift.add_objective(pos[prior.j][1], -2.0 * xb.y)
    for prior in ball_priors:
        xb = prior.estimate
        sink = _BlockSink(1)
        sink.const(0, 0, prior.radius**2 - (xb.x**2 + xb.y**2))
        for var, coef in gram_cell(prior.j, prior.j):
            sink.term(0, 0, var, -coef)
        sink.term(0, 0, pos[prior.j][0], 2.0 * xb.x)
        sink.term(0, 0, pos[prior.j][1], 2.0 * xb.y)
        lift.blocks.append(sink.build())

    def fill_corner(sink: _BlockSink) -> None:
        for (r, c), var in corner.items():
            sink.term(r, c, var, 1.0)

    def fill_node_column(sink: _BlockSink, node: int, col: int) -> None:
        sink.term(0, col, pos[node][0], 1.0)
        sink.term(1, col, pos[node][1], 1.0)

    def fill_gram(sink: _BlockSink, u: int, v: int, r: int, c: int) -> None:
        for var, coef in gram_cell(u, v):
            sink.term(r, c, var, coef)

    if per_edge_blocks:
        for e in sorted(edges):
            sink = _BlockSink(4)
            fill_corner(sink)
            fill_node_column(sink, e[0], 2)
            fill_node_column(sink, e[1], 3)
            fill_gram(sink, e[0], e[0], 2, 2)
            fill_gram(sink, e[1], e[1], 3, 3)
            fill_gram(sink, e[0], e[1], 2, 3)
            lift.blocks.append(sink.build())
    else:
        sink = _BlockSink(2 + num_nodes)
        fill_corner(sink)
        for v in range(1, num_nodes + 1):
            fill_node_column(sink, v, v + 1)
        for u in range(1, num_nodes + 1):
            for v in range(u, num_nodes + 1):
                fill_gram(sink, u, v, u + 1, v + 1)
        lift.blocks.append(sink.build())

    for e in sorted(edges):
        sq, li = edge_vars[e]
        lift.blocks.append(epigraph_block(sq, li))
        nn = _BlockSink(1)
        nn.term(0, 0, li, 1.0)
        lift.blocks.append(nn.build())

    return lift.finish()


def build_fullsdp(
    bounds: Sequence[DistanceBounds],
    anchors: Mapping[int, Point2],
    n_sensors: int,
    mode: CoefficientMode = CoefficientMode.MIDPOINT,
    weights: Mapping[tuple[int, int], float] | None = None,
) -> ConicProblem:
    """Full lifted relaxation with known anchors (one big PSD block)."""
    return _build(bounds, n_sensors, dict(anchors), [], mode, weights, per_edge_blocks=False)


def build_esdp(
    bounds: Sequence[DistanceBounds],
    anchors: Mapping[int, Point2],
    n_sensors: int,
    mode: CoefficientMode = CoefficientMode.MIDPOINT,
    weights: Mapping[tuple[int, int], float] | None = None,
) -> ConicProblem:
    """Edge-wise relaxation with known anchors (one 4x4 block per edge)."""
    return _build(bounds, n_sensors, dict(anchors), [], mode, weights, per_edge_blocks=True)


def _split_priors(
    priors: Iterable[AnchorPrior],
) -> tuple[dict[int, Point2], list[int], list[AnchorPrior], list[AnchorPrior]]:
    pinned: dict[int, Point2] = {}
    free_ids: list[int] = []
    terms: list[AnchorPrior] = []
    balls: list[AnchorPrior] = []
    seen: set[int] = set()
    for p in sorted(priors, key=lambda p: p.j):
        if p.j in seen:
            raise InvalidInputError(f"duplicate prior for anchor {p.j}")
        seen.add(p.j)
        terms.append(p)
        if p.enforce_ball and p.radius == 0.0:
            pinned[p.j] = p.estimate
        else:
            free_ids.append(p.j)
            if p.enforce_ball:
                balls.append(p)
    return pinned, free_ids, terms, balls


def build_fullsdp_anchor_uncertain(
    bounds: Sequence[DistanceBounds],
    priors: Iterable[AnchorPrior],
    n_sensors: int,
    mode: CoefficientMode = CoefficientMode.MIDPOINT,
    weights: Mapping[tuple[int, int], float] | None = None,
) -> ConicProblem:
    """Full relaxation with anchor coordinates as variables.

    The objective gains, per anchor, its lifted squared norm minus twice the
    inner product with the estimate. Zero-radius priors under an enforced
    ball pin the anchor outright, matching the known-anchor build up to a
    constant objective shift.
    """
    pinned, free_ids, terms, balls = _split_priors(priors)
    return _build(
        bounds, n_sensors, pinned, free_ids, mode, weights,
        per_edge_blocks=False, anchor_terms=terms, ball_priors=balls,
    )


def build_esdp_anchor_uncertain(
    bounds: Sequence[DistanceBounds],
    priors: Iterable[AnchorPrior],
    n_sensors: int,
    mode: CoefficientMode = CoefficientMode.MIDPOINT,
    weights: Mapping[tuple[int, int], float] | None = None,
) -> ConicProblem:
    """Edge-wise counterpart of :func:`build_fullsdp_anchor_uncertain`."""
    pinned, free_ids, terms, balls = _split_priors(priors)
    return _build(
        bounds, n_sensors, pinned, free_ids, mode, weights,
        per_edge_blocks=True, anchor_terms=terms, ball_priors=balls,
    )
