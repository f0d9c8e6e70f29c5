"""Exception hierarchy shared by the services, the CLI and the HTTP layer."""


class ZeroCountError(ValueError):
    """Root of every domain error raised by the package."""


class InvalidParameterError(ZeroCountError):
    pass


class DegenerateTruncationError(ZeroCountError):
    """1 - NB(0) underflows, so the zero-truncated NB is undefined."""


class IllConditionedDesignError(ZeroCountError):
    """exp(x'beta) overflows for some row of the design."""


class DegenerateDataError(ZeroCountError):
    pass


class InitializationError(ZeroCountError):
    pass


class ConstantColumnError(ZeroCountError):
    def __init__(self, column: int, name: str | None = None):
        self.column = column
        label = name if name is not None else f"#{column}"
        super().__init__(f"column {label} is constant; Kendall's tau is undefined")


class InvalidCorrelationError(ZeroCountError):
    pass


class FactorizationError(ZeroCountError):
    pass


class InfeasibleTargetError(ZeroCountError):
    pass


class SelectionError(ZeroCountError):
    pass


class ShapeError(ZeroCountError):
    pass


class UndefinedComparisonError(ZeroCountError):
    pass


class DataParseError(ZeroCountError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        if row is not None:
            message = f"{message} (row {row}, column {column!r})"
        super().__init__(message)


class ConfigValidationError(ZeroCountError):
    pass


class ReportIOError(ZeroCountError):
    def __init__(self, path, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")


class IntegrationError(ZeroCountError):
    """A numerical integral did not reach its requested tolerance."""
