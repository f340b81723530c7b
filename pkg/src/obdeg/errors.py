"""Exception types shared across the package.

Every failure mode that callers are expected to catch and react to has its
own class; generic numpy/scipy exceptions never escape the public API.
Errors that point at specific mesh locations carry the offending node
indices so drivers can report coordinates instead of array positions.
"""


class ObdegError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ObdegError):
    """Invalid construction parameters (resolution below minimum, bad schema, ...)."""


class RangeError(ObdegError):
    """Scalar argument outside its documented range."""


class DomainOfDefinitionError(ObdegError):
    """An evaluator was called outside its domain of definition.

    Attributes:
        nodes: indices of the offending nodes (if known).
        coords: (k, 2) coordinates of the offending nodes (if known).
    """

    def __init__(self, message, nodes=None, coords=None):
        super().__init__(message)
        self.nodes = [] if nodes is None else list(nodes)
        self.coords = coords


class PositivityError(DomainOfDefinitionError):
    """A field required to be positive has a nonpositive node."""


class AssemblyError(ObdegError):
    """Operator assembly precondition violated (ellipticity/obliqueness)."""


class SolverError(ObdegError):
    """A discrete linear system that should be invertible is singular."""


class NumericalError(ObdegError):
    """An eigensolver or factorization failed; diagnostics attached."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ThresholdNotFoundError(ObdegError):
    """No regularization strength on the scan grid certified invertibility.

    Attributes:
        profile: list of (N, smallest_singular_value / matrix_norm) pairs.
    """

    def __init__(self, message, profile=None):
        super().__init__(message)
        self.profile = profile or []


class DegeneracyError(ObdegError):
    """An eigenvalue sits within tolerance of zero; the degree is undefined."""


class NotAZeroError(ObdegError):
    """A field presented as a zero has residual above the certification tolerance."""


class InputError(ObdegError):
    """Structurally invalid input (duplicate zeros, mismatched domains, ...)."""


class LeftAdmissibleSetError(ObdegError):
    """An iterate left the elliptic/oblique admissible set.

    Attributes:
        iterate: index of the offending Newton iterate.
    """

    def __init__(self, message, iterate=None, margins=None):
        super().__init__(message)
        self.iterate = iterate
        self.margins = margins


class NonConvergenceError(ObdegError):
    """Newton ran out of iterations before reaching tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ContinuationStuckError(ObdegError):
    """Continuation step size hit its floor; the partial path is attached."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class IncompleteTrackingError(ObdegError):
    """The zero tracker lost a branch; degree bookkeeping cannot be certified."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DegenerateReflectionError(DomainOfDefinitionError):
    """Reflection-map denominator vanished at the given state."""


class InadmissibleStateError(DomainOfDefinitionError):
    """Jacobian determinant of the reflection map is nonpositive somewhere."""


class DataError(ObdegError):
    """Problem data violates a solvability constraint (e.g. energy balance)."""


class UnsupportedRegimeError(ObdegError):
    """Requested parameters fall in a regime the solver does not support."""
