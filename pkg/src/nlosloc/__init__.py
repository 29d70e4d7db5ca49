"""Sensor localization from mixed LOS/NLOS range measurements.

Pipeline: per-edge distance bounds from geometry -> lifted semidefinite
relaxation (full or edge-wise, with optional anchor uncertainty) -> bundled
interior-point solve -> position extraction and optional local refinement.
"""

from .builders import (
    AnchorPrior,
    CoefficientMode,
    build_esdp,
    build_esdp_anchor_uncertain,
    build_fullsdp,
    build_fullsdp_anchor_uncertain,
    edge_objective_term,
    epigraph_block,
    lifted_point,
    objective_at_positions,
)
from .conic import ConicProblem, PsdBlock
from .errors import InvalidInputError
from .geometry import (
    DistanceBounds,
    MeasurementKind,
    NoiseBoundPolicy,
    Point2,
    RangeMeasurement,
    derive_bounds,
    pairwise_anchor_lower_bound,
    upper_bound,
)
from .solver import KktReport, Solution, SolverSettings, check_kkt, current_backend, solve

__version__ = "0.1.0"
