"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so command handlers can
translate failures without a lookup table.
"""


class SBSEError(Exception):
    exit_code = 1


class FormatError(SBSEError):
    """Input file has an unsupported layout (channels, rate, encoding)."""

    exit_code = 3


class ShapeError(SBSEError, ValueError):
    exit_code = 2


class DegenerateInputError(SBSEError, ValueError):
    """Input has zero power/energy where a ratio needs a denominator."""

    exit_code = 2


class ConfigError(SBSEError, ValueError):
    exit_code = 2


class DomainError(SBSEError, ValueError):
    exit_code = 2


class GridTooCoarseError(ConfigError):
    pass


class NumericError(SBSEError, ValueError):
    exit_code = 1


class DivergenceError(SBSEError, FloatingPointError):
    """A loss or an intermediate sample became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CompletenessError(SBSEError):
    exit_code = 3

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class VersionError(SBSEError):
    exit_code = 3


class SetupError(SBSEError):
    exit_code = 3


class SingularityError(DomainError, ZeroDivisionError):
    pass
