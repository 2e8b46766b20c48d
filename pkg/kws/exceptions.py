"""
Error types raised by the keyword spotting pipeline.

Every domain error is a ``ValidationError`` with a fixed code, so forms,
model ``clean()`` methods and the numerical modules report problems the same
way. Management commands map the codes to exit codes.
"""

from django.core.exceptions import ValidationError


class KwsError(ValidationError):
    """Base class for all keyword spotting errors."""
    default_code = 'kws'

    def __init__(self, message, code=None, params=None):
        super().__init__(message, code=code or self.default_code, params=params)

    def __str__(self):
        return '; '.join(self.messages)


class FormatError(KwsError):
    """Malformed file: bad magic, header or payload length."""
    default_code = 'format'


class UnsupportedFormatError(KwsError):
    """Well-formed file in a codec or layout we do not read."""
    default_code = 'unsupported'


class DegenerateInputError(KwsError):
    """Input with no usable content, e.g. a zero row or silent audio."""
    default_code = 'degenerate'


class ParameterError(KwsError):
    """Invalid argument value."""
    default_code = 'parameter'


class TooShortError(KwsError):
    """Input shorter than the minimal window or path footprint."""
    default_code = 'too_short'


class CoverageError(KwsError):
    """A frame that no segment covers."""
    default_code = 'coverage'


class AnnotationError(KwsError):
    """Inconsistent ground-truth annotations."""
    default_code = 'annotation'


class ConfigurationError(KwsError):
    """Invalid or incomplete pipeline configuration."""
    default_code = 'configuration'


# Exit codes of the management commands
EXIT_CODES = {
    'configuration': 2,
    'parameter': 2,
    'invalid': 2,
    'required': 2,
    'format': 3,
    'unsupported': 3,
    'annotation': 3,
    'degenerate': 4,
    'too_short': 4,
    'coverage': 4,
}


def exit_code_for(error):
    """Return the command exit code for a ValidationError."""
    if isinstance(error, KwsError):
        return EXIT_CODES.get(error.code, 2)
    return 2
