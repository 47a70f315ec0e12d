"""Exception taxonomy shared across the package.

NumericalError and its subclasses map to CLI exit code 3, ConfigError to 2,
MissingInputError to 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class MissingInputError(FileNotFoundError):
    """A required input file or directory is absent."""


class NumericalError(RuntimeError):
    """A computation failed or left its validity envelope."""


class CFLError(NumericalError):
    """Explicit time step violates the stability bound."""


class BlowupError(NumericalError):
    """Non-finite values appeared during time stepping."""


class EikonalError(NumericalError):
    """Fast sweeping failed to converge."""


class ContaminationError(NumericalError):
    """A data window reaches into boundary-reflection arrival times."""


class PickError(NumericalError):
    """Arrival picking failed on a trace."""


class InfeasibleError(NumericalError):
    """An iterate left the admissible set (amplitude too small)."""


class StallError(NumericalError):
    """Line search could not reduce the objective."""
