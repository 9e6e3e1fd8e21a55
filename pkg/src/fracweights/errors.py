"""Exception types shared across the package."""


class FracWeightsError(Exception):
    """Base class for all package errors."""


class InvalidInstance(FracWeightsError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class SubbalanceViolated(FracWeightsError):
    def __init__(self, indices):
        super().__init__(f"alpha_i/N_i < 1/p - 1/q at indices {list(indices)}")
        self.indices = tuple(indices)


class EpsTooLarge(FracWeightsError, ValueError):
    pass


class FormulaViolated(FracWeightsError):
    pass


class NonIntegrable(FracWeightsError):
    def __init__(self, message, factor=None):
        super().__init__(message)
        self.factor = factor


class ToleranceNotMet(FracWeightsError):
    """Raised when the requested accuracy cannot be certified.

    The best available value and its error estimate are attached so callers
    can decide whether to use them anyway.
    """

    def __init__(self, message, value, error_estimate):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate


class DegenerateInput(FracWeightsError, ValueError):
    pass


class ZeroDisplacement(FracWeightsError, ValueError):
    pass


class RNotFound(FracWeightsError):
    pass


class FitFailure(FracWeightsError):
    pass


class NotAWitness(FracWeightsError):
    pass


class PreconditionFailed(FracWeightsError):
    pass
