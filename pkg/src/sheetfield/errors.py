class SheetfieldError(Exception):
    """Base class for everything raised by this package."""


class ParameterError(SheetfieldError, ValueError):
    pass


class DivergenceError(SheetfieldError, ArithmeticError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class NonConvergenceError(SheetfieldError, RuntimeError):
    def __init__(self, message, last_iterate=None, change=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.change = change


class RegimeError(SheetfieldError, ValueError):
    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class WeightOverflowError(SheetfieldError, OverflowError):
    def __init__(self, message, exponent):
        super().__init__(message)
        self.exponent = exponent


class ConfigError(SheetfieldError, ValueError):
    pass
