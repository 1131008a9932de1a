"""
Exception hierarchy for PATH-X.

Library code raises these; only the command-line entry point turns them
into process exit codes (0 success, 1 usage, 2 input format, 3 numerical).
"""


class PathXError(ValueError):
    exit_code = 1
    code = "E_PATHX"


class UsageError(PathXError):
    exit_code = 1
    code = "E_USAGE"


class InputFormatError(PathXError):
    exit_code = 2
    code = "E_INPUT"


class NumericalError(PathXError):
    exit_code = 3
    code = "E_NUMERIC"


class WeightsMissingError(InputFormatError):
    code = "E_WEIGHTS_MISSING"


class TensorShapeError(InputFormatError):
    code = "E_WEIGHTS_SHAPE"

    def __init__(self, tensor: str, expected, actual):
        self.tensor = tensor
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"tensor '{tensor}' has shape {self.actual}, expected {self.expected}")


class ChecksumError(InputFormatError):
    code = "E_WEIGHTS_CHECKSUM"
