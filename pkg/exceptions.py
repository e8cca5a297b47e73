"""
Exception hierarchy shared by every package of the pipeline
"""


class HPKError(Exception):
    """Base class for all pipeline errors"""


class ConfigurationError(HPKError, ValueError):
    """Invalid configuration, shapes, indices or file contents"""


class NumericError(HPKError, ArithmeticError):
    """A tensor or parameter became NaN or infinite"""


class DomainError(HPKError, ValueError):
    """Geometric input outside the domain of an operation"""


class BoundaryNotFoundError(HPKError):
    """Lane boundary extraction produced no usable points"""


# Exit codes of the command-line interface
EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception to the CLI exit code contract

    Args:
        error: Exception raised by a subcommand

    Returns:
        2 for numeric errors, 1 for everything else
    """
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    return EXIT_VALIDATION
