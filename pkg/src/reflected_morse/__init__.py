"""Reflected physical paths on Riemannian charts and their Morse index theorems."""

from .dynamics import (Decision, EventKind, EventPolicy, EventRecord, IntegratorOptions, ReflectedPath, action,
                       criticality_residual, first_variation, reflect_velocity, shoot, two_point_solve)
from .errors import (ConjugateEndpointError, DegenerateError, InconclusiveIndexError, InputError, NumericalError,
                     ReflectedMorseError, ScenarioParseError, ScenarioValidationError, SelfConjugateError)
from .geometry import (ChartGeometry, HypersurfaceSpec, PotentialSpec, make_chart, make_hypersurface,
                       make_potential)
from .index_form import BC, IndexReport, assemble_index_form, index_stability_scan, second_variation
from .jacobi import JacobiField, conjugate_points, endpoint_map, jump_residuals, propagate_jacobi
from .morse import fixed_endpoint_index_theorem, periodic_index_theorem, rebase
from .polynomial import Polynomial
from .scenario_cli import RunReport, Scenario, emit, load_scenario, run

__all__ = [
    "BC", "ChartGeometry", "ConjugateEndpointError", "Decision", "DegenerateError", "EventKind", "EventPolicy",
    "EventRecord", "HypersurfaceSpec", "InconclusiveIndexError", "IndexReport", "InputError", "IntegratorOptions",
    "JacobiField", "NumericalError", "Polynomial", "PotentialSpec", "ReflectedMorseError", "ReflectedPath",
    "RunReport", "Scenario", "ScenarioParseError", "ScenarioValidationError", "SelfConjugateError", "action",
    "assemble_index_form", "conjugate_points", "criticality_residual", "emit", "endpoint_map", "first_variation",
    "fixed_endpoint_index_theorem", "index_stability_scan", "jump_residuals", "load_scenario", "make_chart",
    "make_hypersurface", "make_potential", "periodic_index_theorem", "propagate_jacobi", "rebase",
    "reflect_velocity", "run", "second_variation", "shoot", "two_point_solve",
]
