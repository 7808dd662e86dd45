"""Exception taxonomy shared across the package."""


class NulleditError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NulleditError):
    """Invalid user-supplied configuration (bad dimension, negative weight, ...)."""


class ContractError(NulleditError):
    """A call violated an interface contract, e.g. mismatched matrix shapes."""


class NumericalError(NulleditError):
    """Non-finite values or a failed numerical routine."""


class SingularSystemError(NumericalError):
    """The linear system of a closed-form update is numerically singular."""
