"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit-specific failures."""


class DifferentiationError(ToolkitError):
    """A derivative request cannot be honored (order, boundary, non-finite)."""


class NewtonError(ToolkitError):
    """Damped Newton broke down: singular Jacobian, stall, or no convergence."""


class BoundaryMaximizerError(ToolkitError):
    """The inner maximizer landed on or outside the contract box boundary."""


class NonUniqueMaximizerError(ToolkitError):
    """Two stationary points tie in value but sit at different contracts."""


class IndefiniteHessianError(ToolkitError):
    """The contract-space Hessian at the accepted maximizer is not negative definite."""


class SegmentError(ToolkitError):
    """A b-segment node failed its residual check or left the domain."""


class SignStructureError(ToolkitError):
    """A term that is non-negative by construction came out significantly negative."""


class DegenerateNeighborhoodError(ToolkitError):
    """A local-PCA neighborhood has no spatial extent."""


class ConfigError(ToolkitError):
    """Malformed run configuration; carries source position when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)
