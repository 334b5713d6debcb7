"""Error types raised by the backend. Each derives from a stdlib exception."""


class RejectedInputError(ValueError):
    """Input has the wrong shape, range, label or is not finite."""


class InsufficientDataError(RejectedInputError):
    pass


class DegenerateTimeError(RejectedInputError):
    pass


class ContractViolationError(RuntimeError):
    pass


class NumericFaultError(ArithmeticError):
    pass


class GradCheckError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


class FormatVersionError(ValueError):
    pass


class DatasetParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause
