"""Exception types shared across the package."""


class RebalfreqError(Exception):
    """Base class for all package errors."""


class ParameterError(RebalfreqError, ValueError):
    """An argument is outside its admissible range."""


class DomainError(RebalfreqError, ValueError):
    """A state was evaluated outside the model's declared support."""


class DegenerateCovarianceError(RebalfreqError, ValueError):
    """The asset covariance matrix is not positive definite."""


class DegenerateTargetError(RebalfreqError, ValueError):
    """The target portfolio is (locally) of buy-and-hold type, so the
    small-cost frequency formulas do not apply."""


class AssumptionError(RebalfreqError, ValueError):
    """The no-shorting/no-leverage condition on the target weights fails
    and the caller did not opt in to proceeding anyway."""


class ConvergenceError(RebalfreqError, RuntimeError):
    """An iterative solve failed to reach its tolerance."""


class InputError(RebalfreqError, ValueError):
    """A configuration file or CLI input is malformed."""
