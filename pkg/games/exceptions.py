class MamqlError(Exception):
    """Base class of every error raised by the framework."""


class ArgumentError(MamqlError, ValueError):
    pass


class ConfigError(MamqlError, ValueError):
    pass


class EnumerationTooLargeError(MamqlError):
    """Opponent or joint-action enumeration exceeds the configured cap.

    Callers are expected to fall back to sampling.
    """


class TabularUnsupportedError(MamqlError):
    pass


class IterationLimitError(MamqlError):
    """An iterative solver hit its iteration budget.

    ``result`` holds the best-so-far result, if the solver has one.
    """

    def __init__(self, message: str, result=None) -> None:
        super().__init__(message)
        self.result = result


class NumericError(MamqlError, ArithmeticError):
    def __init__(self, message: str, **context) -> None:
        self.context = context
        if context:
            details = ", ".join(f"{key}={value}" for key, value in context.items())
            message = f"{message} ({details})"
        super().__init__(message)


class StateError(MamqlError, RuntimeError):
    pass


class BufferNotReadyError(MamqlError):
    pass


class DatasetParseError(MamqlError):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class ManifestMismatchError(MamqlError):
    pass
