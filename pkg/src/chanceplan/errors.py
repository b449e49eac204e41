"""Exception types shared across the package."""


class ChancePlanError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(ChancePlanError):
    """Operands have incompatible dimensions."""


class NotPositiveDefiniteError(ChancePlanError):
    """A matrix required to be (strictly) positive definite is not."""


class DegenerateShapeError(ChancePlanError):
    """An ellipsoid shape matrix is too close to singular to use."""


class DegenerateDirectionError(ChancePlanError):
    """A direction vector required to be nonzero is (numerically) zero."""


class SeriesConvergenceError(ChancePlanError):
    """The CDF series did not converge within the term cap."""


class InfeasibleError(ChancePlanError):
    """A constraint system has no feasible point (reports worst violation)."""


class ScenarioError(ChancePlanError):
    """A scenario file is malformed or violates its schema invariants."""
