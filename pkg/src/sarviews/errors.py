"""Exception hierarchy shared by every module."""


class SarViewsError(Exception):
    """Base class for all errors raised by this package."""


class IoError(SarViewsError, OSError):
    pass


class FormatError(SarViewsError, ValueError):
    """Malformed or unsupported image file. ``field`` names the offending header field."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ParamError(SarViewsError, ValueError):
    pass


class BoundsError(SarViewsError, IndexError):
    pass


class DegenerateInput(SarViewsError, ValueError):
    pass


class UsageError(SarViewsError):
    pass


class NumericalError(SarViewsError, ArithmeticError):
    """A loss term became non-finite. ``term`` is the name of that term."""

    def __init__(self, term, value):
        super().__init__(f"non-finite loss term {term!r}: {value!r}")
        self.term = term
        self.value = value
