"""Exception hierarchy shared by every engine module.

The CLI maps the three families onto exit codes: data errors exit 1,
configuration errors exit 2 and numerical errors exit 3.
"""


class SdvadError(Exception):
    exit_code = 1


class DataError(SdvadError):
    """Input data is missing, malformed or insufficient."""

    exit_code = 1


class EmptyInputError(DataError):
    pass


class FormatError(DataError):
    """A model or label file does not follow its documented layout."""


class ContractError(DataError, ValueError):
    """Arguments violate a shape or length contract."""


class NormalizationError(DataError, ValueError):
    pass


class ConfigError(SdvadError, ValueError):
    exit_code = 2


class NumericalError(SdvadError, ArithmeticError):
    exit_code = 3


class TrainingDivergedError(NumericalError):
    pass
