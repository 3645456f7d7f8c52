"""Exception hierarchy.

The CLI maps these onto exit codes: :class:`DataError` -> 2,
:class:`NumericalError` -> 3. Validation problems with model parameters are
data errors as far as the command line is concerned.
"""


class PhHmmError(Exception):
    """Base class for all package errors."""


class DataError(PhHmmError, ValueError):
    """Bad input data: malformed CSV, inconsistent series, invalid parameters."""


class ValidationError(DataError):
    """A parameter set violates a model invariant.

    ``location`` names the offending entry, e.g. ``"jump[0][0]"``.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class NumericalError(PhHmmError, ArithmeticError):
    """A computation could not be carried out (singular system, zero likelihood...)."""


class ImpossibleObservationError(NumericalError):
    """Every regime assigns zero likelihood to an observation."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"observation at step {step} has zero likelihood under every regime")


class ReducibleChainError(NumericalError):
    """A Markov chain has more than one recurrent class."""
