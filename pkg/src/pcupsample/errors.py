"""Exception hierarchy shared across the package.

Each error carries the name of the module that raised it so the CLI can
print a module-qualified message and map the error to an exit code.
"""


class UpsampleError(Exception):
    module = "pcupsample"
    exit_code = 3

    def __init__(self, message, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def qualified(self):
        return f"{self.module}: {self}"


class DataError(UpsampleError):
    """Bad or unusable input data (exit code 3)."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, module="cloud"):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, module)
        self.line = line


class EmptyInputError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class ValidationError(DataError):
    pass


class PoolExhaustedError(DataError):
    pass


class ChecksumError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


class NumericError(UpsampleError):
    """Non-finite values appeared during a numeric loop (exit code 4)."""

    exit_code = 4
