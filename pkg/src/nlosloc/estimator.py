"""End-to-end estimation: bounds -> relaxation -> solve -> positions.

Position estimates are read directly from the lifted matrix's coordinate
rows (the ``pos`` variables), not from a factorization of the Gram part;
that read-out is exact whenever the relaxation is tight, and the per-node
gap ``gram_ii - |x_i|^2`` is reported as a tightness diagnostic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .builders import (
    AnchorPrior,
    CoefficientMode,
    build_esdp,
    build_esdp_anchor_uncertain,
    build_fullsdp,
    build_fullsdp_anchor_uncertain,
)
from .conic import ConicProblem
from .errors import InvalidInputError
from .geometry import (
    DistanceBounds,
    NoiseBoundPolicy,
    Point2,
    RangeMeasurement,
    derive_bounds,
)
from .solver import Solution, SolverSettings, solve


class Formulation(str, enum.Enum):
    FULLSDP = "fullsdp"
    ESDP = "esdp"


class Variant(str, enum.Enum):
    KNOWN_ANCHORS = "known-anchors"
    UNCERTAIN_ANCHORS = "uncertain-anchors"


@dataclass(frozen=True)
class EstimatorConfig:
    formulation: Formulation = Formulation.ESDP
    variant: Variant = Variant.KNOWN_ANCHORS
    mode: CoefficientMode = CoefficientMode.MIDPOINT
    noise_policy: NoiseBoundPolicy = field(default_factory=NoiseBoundPolicy)
    sigma: float = 0.01
    solver: SolverSettings = field(default_factory=SolverSettings)
    refine: bool = False
    refine_iterations: int = 200


@dataclass
class EstimationReport:
    positions: dict[int, Point2]
    anchor_estimates: dict[int, Point2]
    per_sensor_sq_error: dict[int, float]
    mse: float | None
    solver_diag: dict
    inconsistent_edges: list[tuple[int, int]]
    lift_gap: dict[int, float]
    config_echo: dict
    bounds: list[DistanceBounds] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "positions": {str(k): [p.x, p.y] for k, p in sorted(self.positions.items())},
            "anchor_estimates": {
                str(k): [p.x, p.y] for k, p in sorted(self.anchor_estimates.items())
            },
            "per_sensor_sq_error": {
                str(k): v for k, v in sorted(self.per_sensor_sq_error.items())
            },
            "mse": self.mse,
            "solver_diag": self.solver_diag,
            "inconsistent_edges": [list(e) for e in self.inconsistent_edges],
            "lift_gap": {str(k): v for k, v in sorted(self.lift_gap.items())},
            "config_echo": self.config_echo,
        }


def _config_echo(config: EstimatorConfig) -> dict:
    return {
        "formulation": config.formulation.value,
        "variant": config.variant.value,
        "mode": config.mode.value,
        "noise_policy": {"mode": config.noise_policy.mode, "value": config.noise_policy.value},
        "sigma": config.sigma,
        "solver": {
            "gap_tol": config.solver.gap_tol,
            "feas_tol": config.solver.feas_tol,
            "max_iters": config.solver.max_iters,
        },
        "refine": config.refine,
    }


def _solver_diag(solution: Solution) -> dict:
    return {
        "status": solution.status,
        "objective_value": solution.objective_value,
        "duality_gap": solution.duality_gap,
        "equality_residual_inf_norm": solution.equality_residual_inf_norm,
        "min_block_eigenvalue": solution.min_block_eigenvalue,
        "iterations": solution.iterations,
        "solve_seconds": solution.solve_seconds,
        "backend": solution.backend,
    }


def extract_positions(solution: Solution, problem: ConicProblem) -> dict[int, Point2]:
    """Node positions from the lifted coordinate rows of the solved problem."""
    if solution.status not in ("optimal", "max-iters"):
        raise InvalidInputError(f"no positions in a solve with status {solution.status!r}")
    if not problem.var_labels:
        raise InvalidInputError("problem carries no variable labels")
    coords: dict[int, dict[int, float]] = {}
    for idx, label in enumerate(problem.var_labels):
        if label.startswith("pos:"):
            _, node, axis = label.split(":")
            coords.setdefault(int(node), {})[int(axis)] = float(solution.primal_values[idx])
    return {node: Point2(ax[0], ax[1]) for node, ax in coords.items()}


def _lift_gaps(solution: Solution, problem: ConicProblem, positions) -> dict[int, float]:
    gaps = {}
    for idx, label in enumerate(problem.var_labels):
        if label.startswith("gram:"):
            _, u, v = label.split(":")
            if u == v and int(u) in positions:
                p = positions[int(u)]
                gaps[int(u)] = float(solution.primal_values[idx]) - (p.x**2 + p.y**2)
    return gaps


def refine(
    initial: Mapping[int, Point2],
    bounds: Sequence[DistanceBounds],
    weights: Mapping[tuple[int, int], float] | None = None,
    iterations: int = 200,
    fixed: Iterable[int] = (),
    grad_tol: float = 1e-9,
) -> dict[int, Point2]:
    """Descend the interval misfit sum w [(d-l)^2 + (d-u)^2] by gradient steps.

    Backtracking line search; the objective never increases. Nodes listed in
    ``fixed`` (anchors) keep their positions. Coincident pairs use the unit
    x-axis as the descent direction convention.
    """
    ids = sorted(initial)
    pos = {k: np.array([initial[k].x, initial[k].y]) for k in ids}
    fixed_set = set(fixed)
    movable = [k for k in ids if k not in fixed_set]
    if not movable:
        return dict(initial)

    def weight(edge):
        return 1.0 if weights is None else weights.get(edge, 1.0)

    def objective_and_grad():
        val = 0.0
        grad = {k: np.zeros(2) for k in movable}
        for b in bounds:
            w = weight(b.edge)
            delta = pos[b.i] - pos[b.j]
            d = float(np.hypot(delta[0], delta[1]))
            unit = delta / d if d > 0 else np.array([1.0, 0.0])
            val += w * ((d - b.lower) ** 2 + (d - b.upper) ** 2)
            g = w * 2.0 * (2.0 * d - b.lower - b.upper) * unit
            if b.i in grad:
                grad[b.i] += g
            if b.j in grad:
                grad[b.j] -= g
        return val, grad

    value, grad = objective_and_grad()
    step = 1.0
    for _ in range(iterations):
        gnorm2 = sum(float(g @ g) for g in grad.values())
        if gnorm2 <= grad_tol**2:
            break
        saved = {k: pos[k].copy() for k in movable}
        accepted = False
        while step > 1e-16:
            for k in movable:
                pos[k] = saved[k] - step * grad[k]
            new_value, new_grad = objective_and_grad()
            if new_value <= value - 1e-4 * step * gnorm2:
                value, grad = new_value, new_grad
                step = min(step * 2.0, 1e6)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            for k in movable:
                pos[k] = saved[k]
            break
    return {k: Point2(float(pos[k][0]), float(pos[k][1])) for k in ids}


def refine_objective(
    positions: Mapping[int, Point2],
    bounds: Sequence[DistanceBounds],
    weights: Mapping[tuple[int, int], float] | None = None,
) -> float:
    total = 0.0
    for b in bounds:
        w = 1.0 if weights is None else weights.get(b.edge, 1.0)
        d = positions[b.i].distance_to(positions[b.j])
        total += w * ((d - b.lower) ** 2 + (d - b.upper) ** 2)
    return total


def refine_gradient(
    positions: Mapping[int, Point2],
    bounds: Sequence[DistanceBounds],
    weights: Mapping[tuple[int, int], float] | None = None,
    fixed: Iterable[int] = (),
) -> dict[int, np.ndarray]:
    """Analytic gradient of :func:`refine_objective` for the movable nodes."""
    fixed_set = set(fixed)
    grad = {k: np.zeros(2) for k in positions if k not in fixed_set}
    for b in bounds:
        w = 1.0 if weights is None else weights.get(b.edge, 1.0)
        pi, pj = positions[b.i], positions[b.j]
        delta = np.array([pi.x - pj.x, pi.y - pj.y])
        d = float(np.hypot(delta[0], delta[1]))
        unit = delta / d if d > 0 else np.array([1.0, 0.0])
        g = w * 2.0 * (2.0 * d - b.lower - b.upper) * unit
        if b.i in grad:
            grad[b.i] += g
        if b.j in grad:
            grad[b.j] -= g
    return grad


def localize(
    measurements: Sequence[RangeMeasurement] | None,
    anchors: Mapping[int, Point2] | None = None,
    priors: Sequence[AnchorPrior] | None = None,
    truth: Mapping[int, Point2] | None = None,
    config: EstimatorConfig | None = None,
    bounds: Sequence[DistanceBounds] | None = None,
    log_stream=None,
) -> EstimationReport:
    """Full pipeline: derive bounds, build, solve, extract, optionally refine.

    Precomputed per-edge ``bounds`` (for instance a bounds CSV read back)
    bypass the derivation step; weights still come from the measurements
    when those are supplied.
    """
    config = config or EstimatorConfig()
    if config.variant is Variant.UNCERTAIN_ANCHORS:
        if priors is None:
            raise InvalidInputError("uncertain-anchors variant requires priors")
        anchor_pos = {p.j: p.estimate for p in priors}
    else:
        if anchors is None:
            raise InvalidInputError("known-anchors variant requires anchor positions")
        anchor_pos = dict(anchors)

    if not measurements and bounds is None:
        return EstimationReport(
            positions={}, anchor_estimates={}, per_sensor_sq_error={},
            mse=None, solver_diag={"status": "optimal", "iterations": 0},
            inconsistent_edges=[], lift_gap={}, config_echo=_config_echo(config),
        )

    if bounds is None:
        bounds = derive_bounds(measurements, anchor_pos, config.noise_policy, config.sigma)
    weights = {m.edge: m.weight for m in measurements} if measurements else None
    sensor_ids = sorted(
        {b.i for b in bounds if b.i not in anchor_pos}
        | {b.j for b in bounds if b.j not in anchor_pos}
    )
    n = len(sensor_ids)
    if sorted(anchor_pos) != list(range(n + 1, n + len(anchor_pos) + 1)) or sensor_ids != list(
        range(1, n + 1)
    ):
        raise InvalidInputError(
            "node ids must be dense: sensors 1..n, anchors n+1..n+m"
        )

    if config.variant is Variant.UNCERTAIN_ANCHORS:
        if config.formulation is Formulation.FULLSDP:
            problem = build_fullsdp_anchor_uncertain(bounds, priors, n, config.mode, weights)
        else:
            problem = build_esdp_anchor_uncertain(bounds, priors, n, config.mode, weights)
    else:
        if config.formulation is Formulation.FULLSDP:
            problem = build_fullsdp(bounds, anchor_pos, n, config.mode, weights)
        else:
            problem = build_esdp(bounds, anchor_pos, n, config.mode, weights)

    solution = solve(problem, config.solver, log_stream=log_stream)
    if solution.status in ("optimal", "max-iters"):
        all_pos = extract_positions(solution, problem)
    else:
        all_pos = {}
    positions = {k: v for k, v in all_pos.items() if k in sensor_ids}
    anchor_estimates = (
        {k: v for k, v in all_pos.items() if k in anchor_pos}
        if config.variant is Variant.UNCERTAIN_ANCHORS
        else {}
    )
    lift_gap = _lift_gaps(solution, problem, positions)

    if config.refine and positions:
        merged = dict(positions)
        for k in anchor_pos:
            merged.setdefault(k, anchor_estimates.get(k, anchor_pos[k]))
        refined = refine(
            merged, bounds, weights, iterations=config.refine_iterations, fixed=set(anchor_pos)
        )
        positions = {k: refined[k] for k in sensor_ids}

    per_sq = {}
    mse = None
    if truth is not None and positions:
        for k in sensor_ids:
            if k not in truth:
                raise InvalidInputError(f"truth is missing sensor {k}")
            per_sq[k] = positions[k].distance_to(truth[k]) ** 2
        mse = float(np.mean(list(per_sq.values())))

    return EstimationReport(
        positions=positions,
        anchor_estimates=anchor_estimates,
        per_sensor_sq_error=per_sq,
        mse=mse,
        solver_diag=_solver_diag(solution),
        inconsistent_edges=[b.edge for b in bounds if not b.consistent],
        lift_gap=lift_gap,
        config_echo=_config_echo(config),
        bounds=bounds,
    )
