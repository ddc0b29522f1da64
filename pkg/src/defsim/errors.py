"""Exception hierarchy shared across the package."""


class DefsimError(Exception):
    """Base class for all package errors."""


class ModelError(DefsimError):
    """Raised when a system description cannot be constructed at all
    (dangling references, zero impedances and similar structural defects)."""


class StructuralError(DefsimError):
    """Raised when an assembled equation system is malformed: equation/unknown
    count mismatch, or a coefficient matrix that must be regular is singular."""


class ScenarioError(DefsimError):
    """Raised for boundary-condition problems: signals out of domain,
    missing or extraneous boundary entries, inconsistent initial data."""


class SolverError(DefsimError):
    """Raised when a solver fails to converge. Carries the simulation time
    at which the failure occurred when applicable."""

    def __init__(self, message, time_s=None, residual=None):
        super().__init__(message)
        self.time_s = time_s
        self.residual = residual


class ValidationFailure(DefsimError):
    """Raised by the CLI layer when a system or scenario fails validation;
    carries the diagnostic list."""

    def __init__(self, diagnostics):
        super().__init__("; ".join(str(d) for d in diagnostics) or "validation failed")
        self.diagnostics = list(diagnostics)
