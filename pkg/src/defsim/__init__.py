"""Dynamic energy flow simulation for coupled natural-gas and electric networks.

Provides a non-iterative windowed Taylor-series solver for the transient
gas/power equations plus three classical reference solvers (method of
characteristics, implicit Euler, implicit central differences), a network
and scenario file format, and a comparison/benchmark harness.
"""

__version__ = "0.1.0"

from .errors import (
    DefsimError,
    ModelError,
    ScenarioError,
    SolverError,
    StructuralError,
    ValidationFailure,
)

__all__ = [
    "DefsimError",
    "ModelError",
    "ScenarioError",
    "SolverError",
    "StructuralError",
    "ValidationFailure",
    "__version__",
]
