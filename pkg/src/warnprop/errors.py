"""Exception hierarchy. CLI maps InputError subclasses to exit code 2."""


class WPError(Exception):
    pass


class InputError(WPError, ValueError):
    pass


class ValidationError(InputError):
    pass


class ParameterError(InputError):
    pass


class FeasibilityError(WPError):
    """Exact computation too large; use the Monte Carlo path instead."""


class ResourceError(WPError):
    pass


class StateError(WPError):
    pass


class NumericalError(WPError):
    pass


class ConditioningError(WPError):
    def __init__(self, message, acceptance_rate=0.0, attempts=0):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate
        self.attempts = attempts


class SimplicityError(WPError):
    def __init__(self, message, attempts=0):
        super().__init__(message)
        self.attempts = attempts
