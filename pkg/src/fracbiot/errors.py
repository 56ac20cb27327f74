"""Exception hierarchy used throughout the package."""


class FracBiotError(Exception):
    """Base class for all package errors."""


class UnsupportedElementError(FracBiotError):
    """Raised for mesh elements that are not simplices."""


class TopologyError(FracBiotError):
    """Raised when the mesh topology is inconsistent."""


class GeometryError(FracBiotError):
    """Raised for degenerate geometry (zero-measure cells, faces, subentities)."""


class PairingError(FracBiotError):
    """Raised when fracture sides cannot be paired one-to-one."""


class DegenerateGeometryError(GeometryError):
    """Raised when a local gradient system around a vertex is singular."""

    def __init__(self, vertex: int, kind: str, detail: str = ""):
        self.vertex = vertex
        self.kind = kind
        msg = f"singular {kind} local system at vertex {vertex}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InvalidParameterError(FracBiotError, ValueError):
    """Raised for parameters outside their admissible range."""


class ContractViolation(FracBiotError, ValueError):
    """Raised when array shapes or sizes do not match the discretization."""


class AssemblyError(FracBiotError):
    """Raised when global blocks do not fit together."""


class ContactConsistencyError(FracBiotError):
    """Raised when contact rows cannot be built from the supplied labels."""


class SolverError(FracBiotError):
    """Raised when the linear solver fails."""

    def __init__(self, msg: str, residual: float | None = None):
        self.residual = residual
        if residual is not None:
            msg = f"{msg} (relative residual {residual:.3e})"
        super().__init__(msg)


class NonConvergenceError(FracBiotError):
    """Raised when the Newton loop hits its iteration cap."""

    def __init__(self, msg: str, state=None, history=None):
        self.state = state
        self.history = history or []
        super().__init__(msg)


class ScenarioError(FracBiotError, ValueError):
    """Raised for malformed or inconsistent scenario configurations."""
