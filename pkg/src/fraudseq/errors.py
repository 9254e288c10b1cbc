"""Exception hierarchy shared across the package.

CLI exit codes: configuration problems map to 2, data-shaped failures to 3,
numeric failures to 4.
"""


class FraudseqError(Exception):
    exit_code = 1


class ConfigurationError(FraudseqError):
    exit_code = 2


class ShapeError(ConfigurationError):
    """Tensor shapes do not conform; always a wiring/configuration problem."""


class DataError(FraudseqError):
    exit_code = 3


class SchemaError(DataError):
    """Input file header does not match the expected schema."""


class VocabularyError(DataError):
    """Token or token id outside the dictionary it must belong to."""


class EmptyInputError(DataError):
    """Input holds no usable rows."""


class MetricError(DataError):
    """Metric undefined for the given label composition."""


class CalibrationError(DataError):
    """Threshold calibration impossible (e.g. no positive labels)."""


class NumericError(FraudseqError):
    exit_code = 4
