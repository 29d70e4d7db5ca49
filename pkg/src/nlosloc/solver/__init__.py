"""Bundled interior-point solver for the conic problem IR."""

from .backend import current_backend
from .ipm import Solution, SolverSettings, solve
from .verify import KktReport, check_kkt

__all__ = ["Solution", "SolverSettings", "solve", "check_kkt", "KktReport", "current_backend"]
