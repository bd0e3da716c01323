"""Exception hierarchy shared by every module."""


class BinepError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(BinepError, ValueError):
    pass


class InvalidParameterError(BinepError, ValueError):
    pass


class IndexCorruptionError(BinepError, ValueError):
    """Pool indices that could not have come from a max-pool of this shape."""


class DivergenceError(BinepError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(BinepError, RuntimeError):
    pass


class DataFormatError(BinepError, ValueError):
    pass


class CheckpointError(BinepError, ValueError):
    pass


class ConfigError(BinepError, ValueError):
    pass
