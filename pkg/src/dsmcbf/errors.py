"""Exception hierarchy shared by every layer of the package."""


class DsmCbfError(Exception):
    """Base class for all package errors."""


class ModelDomainError(DsmCbfError):
    """The payload angle left the open interval (-pi/2, pi/2)."""


class ConfigurationError(DsmCbfError, ValueError):
    """Invalid parameters, gains, constraint lists or QP data."""


class SolverFailure(DsmCbfError, RuntimeError):
    """The QP solver hit its iteration cap or lost numerical consistency.

    Distinct from a certified infeasible problem, which is reported as data.
    """


class SafetyContractViolation(DsmCbfError, RuntimeError):
    """A guarantee of the DSM-CBF filter was broken (bug or bad configuration)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
