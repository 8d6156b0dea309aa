class CplncError(Exception):
    """Base error; `code` is the name the CLI prints."""

    code = "Error"


class ZeroVectorError(CplncError, ValueError):
    code = "ZeroVector"


class DimensionMismatchError(CplncError, ValueError):
    code = "DimensionMismatch"


class NonFiniteInputError(CplncError, ValueError):
    code = "NonFiniteInput"


class NotInactiveError(CplncError, ValueError):
    code = "NotInactive"


class UnknownClassError(CplncError, ValueError):
    code = "UnknownClass"


class InsufficientClassesError(CplncError, ValueError):
    code = "InsufficientClasses"


class EmptyActiveSetError(CplncError, ValueError):
    code = "EmptyActiveSet"


class NoViewsError(CplncError, ValueError):
    code = "NoViews"


class ShapeMismatchError(CplncError, ValueError):
    code = "ShapeMismatch"


class RejectionFailureError(CplncError, RuntimeError):
    code = "RejectionFailure"


class ViewCountMismatchError(CplncError, ValueError):
    code = "ViewCountMismatch"


class ParseError(CplncError, ValueError):
    code = "ParseError"

    def __init__(self, message: str, *, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKeyError(CplncError, KeyError):
    code = "UnknownKey"

    def __init__(self, key: str):
        self.key = key
        super().__init__(key)

    def __str__(self) -> str:
        return f"unknown config key '{self.key}'"


class RangeViolationError(CplncError, ValueError):
    code = "RangeViolation"

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
