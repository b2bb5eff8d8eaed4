"""Fuzzy Laplace transform solver for fuzzy partial Volterra integro-differential equations."""

from .fuzzy import FuzzyScalar, MembershipGrid, FuzzyField
from .fltm import ProblemSpec, FuzzyDatum, BoundaryCondition, SolverSettings, SolutionTable, fltm_solve

__all__ = ["FuzzyScalar", "MembershipGrid", "FuzzyField", "ProblemSpec", "FuzzyDatum",
           "BoundaryCondition", "SolverSettings", "SolutionTable", "fltm_solve"]
