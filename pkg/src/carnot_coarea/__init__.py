"""Numerical checks of the coarea inequality for maps between Carnot groups.

Layers, bottom up:

* :mod:`.schema` and :mod:`.group`: graded Lie algebras and the group law in
  exponential coordinates;
* :mod:`.metric`: quasi-norms, horizontal length, covering estimates and
  box quadrature;
* :mod:`.projection`: the projections along horizontal flows and the
  Fubini-type decomposition;
* :mod:`.pansu` and :mod:`.maps`: Pansu differentials, adjugates and the
  builtin contact maps;
* :mod:`.tracing` and :mod:`.harness`: level-set tracing and both sides of
  the inequality;
* :mod:`.cli`: the ``carnot-coarea`` command.
"""
from .group import AlgebraVector, CarnotGroup, Point, as_group, bracket, dilate, group_mul, inverse, selftest
from .harness import (CoareaConfig, CoareaReport, eilenberg_bound_check, lhs_covering_oracle,
                      lhs_integral, rhs_integral, verify_coarea)
from .maps import builtin_map
from .metric import (Estimate, PolyCurve, QuadratureConfig, QuasiNormConfig, hausdorff1_eps,
                     horizontal_length, quasi_distance, quasi_norm)
from .pansu import (ContactMap, GradedHom, adjugate, coarea_factor, complete_hom,
                    finite_codistortion_defect, pansu_differential, pansu_residual)
from .projection import HyperplanePoint, fubini_check, proj_P, proj_scalar
from .schema import GroupSchema, SchemaError, builtin_schema, load_schema, validate
from .tracing import LevelSetProblem, Region, TraceConfig, level_sets

__version__ = "0.1.0"

__all__ = [
    "AlgebraVector", "CarnotGroup", "Point", "as_group", "bracket", "dilate", "group_mul",
    "inverse", "selftest",
    "CoareaConfig", "CoareaReport", "eilenberg_bound_check", "lhs_covering_oracle",
    "lhs_integral", "rhs_integral", "verify_coarea",
    "builtin_map",
    "Estimate", "PolyCurve", "QuadratureConfig", "QuasiNormConfig", "hausdorff1_eps",
    "horizontal_length", "quasi_distance", "quasi_norm",
    "ContactMap", "GradedHom", "adjugate", "coarea_factor", "complete_hom",
    "finite_codistortion_defect", "pansu_differential", "pansu_residual",
    "HyperplanePoint", "fubini_check", "proj_P", "proj_scalar",
    "GroupSchema", "SchemaError", "builtin_schema", "load_schema", "validate",
    "LevelSetProblem", "Region", "TraceConfig", "level_sets",
]
