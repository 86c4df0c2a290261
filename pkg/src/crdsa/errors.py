"""Exception hierarchy shared by the library and the command line front end."""


class CrdsaError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for this category."""

    exit_code = 1


class InvalidConfigurationError(CrdsaError, ValueError):
    exit_code = 2


class KernelMissingError(CrdsaError, LookupError):
    """A cached PLR curve or q table was requested but never computed."""

    exit_code = 3


class KernelCoverageError(CrdsaError, ValueError):
    """A q table does not reach the transmitter counts a transition needs."""

    exit_code = 3


class SizeGuardError(CrdsaError, ValueError):
    exit_code = 4


class CacheIntegrityError(CrdsaError, IOError):
    exit_code = 5


class InfiniteDelayError(CrdsaError, ArithmeticError):
    """Raised when a delay is unbounded (no successful throughput)."""

    exit_code = 1
