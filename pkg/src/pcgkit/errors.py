"""Exception types shared across the toolkit."""


class PcgkitError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(PcgkitError):
    """Operands disagree on dimensions."""


class NotSpdError(PcgkitError):
    """A matrix required to be symmetric positive-definite is not.

    ``pivot`` carries the first failing pivot index when known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class InvalidFactorError(PcgkitError):
    """A triangular factor violates its invariants (e.g. nonpositive diagonal)."""


class DenseBudgetError(PcgkitError):
    """A dense O(n^3) routine was called above its size budget."""


class MeshFormatError(PcgkitError):
    """Malformed mesh input (OBJ text, face arity, index range)."""


class EmptyDirichletSetError(PcgkitError):
    """A Dirichlet marking left no constrained vertex."""


class DegenerateTriangleError(PcgkitError):
    """Zero-area (collinear) triangle where a proper element is required."""


class SingularSystemError(PcgkitError):
    """The assembled operator is singular for the requested configuration."""


class BreakdownError(PcgkitError):
    """Krylov breakdown: p^T A p <= 0 or r^T z <= 0 (non-SPD operator or
    invalid preconditioner)."""


class FactorizationBreakdownError(PcgkitError):
    """Incomplete factorization failed even after diagonal-shift restarts."""


class DataFormatError(PcgkitError):
    """Malformed exchange file (Matrix Market text, manifest, checkpoint)."""


class NonFiniteAdjointError(PcgkitError):
    """Reverse-mode sweep produced a NaN/inf adjoint.

    ``op_index``/``op_name`` identify the recorded operation whose backward
    rule emitted the non-finite value.
    """

    def __init__(self, message, op_index=None, op_name=None):
        super().__init__(message)
        self.op_index = op_index
        self.op_name = op_name


class NonFiniteGradientError(PcgkitError):
    """Optimizer received a NaN/inf gradient."""


class DivergenceError(PcgkitError):
    """Training loss exploded past the divergence guard."""
