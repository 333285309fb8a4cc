"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class ConvNLUError(Exception):
    exit_code = 1


class UsageError(ConvNLUError):
    exit_code = 2


class ConfigError(ConvNLUError, ValueError):
    exit_code = 2


class DataError(ConvNLUError, ValueError):
    exit_code = 3


class FormatError(DataError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class LayoutError(DataError):
    pass


class DimensionError(ConvNLUError, ValueError):
    exit_code = 3


class EmptySequenceError(DimensionError):
    pass


class TruncationError(DimensionError):
    pass


class LabelError(DataError):
    pass


class VocabularyError(DataError, IndexError):
    pass


class TagFormatError(DataError):
    pass


class DegenerateModelError(ConvNLUError, ValueError):
    exit_code = 2


class NumericError(ConvNLUError, ArithmeticError):
    exit_code = 4
