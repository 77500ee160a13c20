"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ReprojError(Exception):
    exit_code = 1


class ConfigError(ReprojError, ValueError):
    exit_code = 2


class DataError(ReprojError, ValueError):
    exit_code = 3


class DimensionError(DataError):
    """Operand shapes do not line up."""


class NumericError(ReprojError, ArithmeticError):
    exit_code = 4


class CheckpointError(DataError):
    pass


class CheckpointHeaderError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass
