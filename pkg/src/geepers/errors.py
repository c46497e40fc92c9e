"""Exception types raised across the package."""


class GeepersError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GeepersError):
    """Malformed input data: bad columns, bad cells, impossible arm structure."""


class RankDeficiencyError(GeepersError):
    """A design matrix is numerically rank deficient.

    Carries the offending column names so callers can report which
    regressors are collinear.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SeparationError(GeepersError):
    """Quasi-complete separation in a logistic fit (coefficients diverging)."""


class ConvergenceError(GeepersError):
    """An iterative solver exhausted its iteration budget."""


class SingularVarianceError(GeepersError):
    """The stacked derivative matrix is too ill-conditioned to invert."""


class DegenerateComponentError(GeepersError):
    """A mixture component has (numerically) zero weight or zero variance."""


class ResampleError(GeepersError):
    """Bootstrap resampling kept producing datasets the estimator rejects."""
