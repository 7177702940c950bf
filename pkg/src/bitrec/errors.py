"""Exception taxonomy shared across the package.

Everything derives from BitrecError so callers can catch the package's
numerical/format failures in one clause; the CLI maps BitrecError to exit
code 2 and argument problems to exit code 1.
"""


class BitrecError(Exception):
    """Base class for all bitrec errors."""


class DimensionMismatch(BitrecError):
    """Array shapes do not agree with the declared (L, M, N)."""


class NonFinite(BitrecError):
    """An input array contains NaN or infinity."""


class NonPositivePrecision(BitrecError):
    """A noise precision (beta) is zero, negative, or not finite."""


class LengthMismatch(BitrecError):
    """Two vectors that must share a length do not."""


class IoFailure(BitrecError):
    """Underlying OS-level read/write failure."""


class CorruptHeader(BitrecError):
    """Binary container header is malformed or the payload is truncated."""


class FormatVersionMismatch(BitrecError):
    """Binary container version is not supported."""


class FormatError(BitrecError):
    """Input violates the documented serialization format."""


class Infeasible(BitrecError):
    """The constraint set of the convex program is (numerically) empty."""


class MaxItersExceeded(BitrecError):
    """An iterative solver hit its iteration cap without converging."""


class DegenerateResidual(BitrecError):
    """A zero residual made a precision update infinite and capping is off."""


class NonFiniteLogit(BitrecError):
    """A posterior logit evaluated to NaN/inf despite overflow guards."""


class TooLarge(BitrecError):
    """Problem size exceeds the guard for an exhaustive routine."""


class DomainError(BitrecError):
    """An argument lies outside the mathematical domain of the routine."""


class KappaZero(BitrecError):
    """kappa = 0 is excluded from the spectral grid (1/kappa factors)."""


class RegionMismatch(BitrecError):
    """A point does not lie in the radial region it was declared in."""


class VoxelOutsideRegion(BitrecError):
    """A voxel cell extends outside the conducting wall."""


class SingularLambda(BitrecError):
    """The interface system is numerically singular for a spectral mode."""


class QuadratureNotConverged(BitrecError):
    """Grid refinement failed to stabilize a numerical integral."""


class GridMismatch(BitrecError):
    """Voxel images on different grids cannot be merged."""


class TruncationWarning(UserWarning):
    """The spectral sum was truncated before its tail became negligible."""
