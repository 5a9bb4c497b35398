"""Exception taxonomy shared by all dcat modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and
FormatError -> 3, NumericError -> 4.
"""


class DcatError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DcatError):
    """Tensor shapes or axes incompatible with the requested operation."""


class ParameterError(DcatError):
    """An argument value is outside its legal range."""


class ContractError(DcatError):
    """An API was used in a way that violates its contract."""


class ConfigError(DcatError):
    """A configuration object or file is invalid."""


class DataError(DcatError):
    """A dataset or report input is invalid."""


class FormatError(DataError):
    """A binary or text file does not match its declared format."""


class UndefinedCurveError(DataError):
    """A ROC/PR curve is undefined (a class has no positives or no negatives)."""


class NumericError(DcatError):
    """A numeric failure: NaN/Inf at an op boundary, or training divergence."""
