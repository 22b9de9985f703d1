"""Exception hierarchy shared by all hdfts modules."""


class HDFTSError(Exception):
    """Base class for every error raised by hdfts."""


class GridMismatchError(HDFTSError, ValueError):
    pass


class EmptyCollectionError(HDFTSError, ValueError):
    pass


class SchemaError(HDFTSError, ValueError):
    pass


class ParseError(HDFTSError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class TooFewPointsError(HDFTSError, ValueError):
    pass


class DegenerateDesignError(HDFTSError, ValueError):
    pass


class LabelMismatchError(HDFTSError, ValueError):
    pass


class LagOutOfRangeError(HDFTSError, ValueError):
    pass


class SeriesTooShortError(HDFTSError, ValueError):
    pass


class NotSymmetricError(HDFTSError, ValueError):
    pass


class DimensionMismatchError(HDFTSError, ValueError):
    pass


class SingularDesignError(HDFTSError, ArithmeticError):
    """Least-squares design is rank deficient; try a lower order."""


class DegenerateBootstrapError(HDFTSError, ArithmeticError):
    pass


class InvalidIntervalError(HDFTSError, ValueError):
    pass


class DivisionByZeroError(HDFTSError, ZeroDivisionError):
    pass


class NonstationarySpecError(HDFTSError, ValueError):
    pass


class ConfigError(HDFTSError, ValueError):
    pass
