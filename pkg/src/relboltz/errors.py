"""Exception types raised by the toolkit.

Every failure mode that a caller can reasonably branch on gets its own
class; the CLI maps them onto stage exit codes.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ToolkitError):
    """Malformed or inconsistent run configuration."""


class ToleranceNotMet(ToolkitError):
    """Two quadrature/sample refinements disagree beyond the requested rtol."""


class AssemblyToleranceExceeded(ToolkitError):
    """Independent QMC streams disagree on matrix entries beyond rtol."""


class IllConditionedBasis(ToolkitError):
    """Gram condition number of the null-space vectors exceeds threshold."""


class RankDeficiency(ToolkitError):
    """Orthonormalization detected linear dependence in the basis."""


class NonpositiveConstant(ToolkitError):
    """A constant that must be positive (a, b, c0, ...) came out <= 0."""


class GapCollapse(ToolkitError):
    """More than 5 eigenvalues found in the near-zero cluster of L."""


class ClusterMiscount(ToolkitError):
    """More than five eigenvalues of B(k) above -mu/2 at small k."""


class BranchMatchingError(ToolkitError):
    """Eigenvector overlap matching between k-grid points is ambiguous."""


class DeflatedSolveFailure(ToolkitError):
    """The restriction of L to the orthogonal complement is singular."""


class SingularSolve(ToolkitError):
    """Shifted deflated system is (numerically) singular."""


class NewtonDivergence(ToolkitError):
    """Newton continuation failed to converge after step damping."""


class RootCollision(ToolkitError):
    """Two dispersion roots collided within resolution."""


class OrderCheckFailure(ToolkitError):
    """Fitted remainder order of an asymptotic expansion is too low."""


class SlopeFitUnstable(ToolkitError):
    """Confidence interval of a fitted decay slope exceeds the bound."""


class NonpositiveNorm(ToolkitError):
    """A norm series contains nonpositive values; log-log fit impossible."""


class DefectiveBranch(ToolkitError):
    """Bilinear normalization of an eigenvector branch degenerates."""
