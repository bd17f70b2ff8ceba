"""Exception hierarchy.

Two failure families matter to callers (and map to distinct CLI exit
codes): DataError for bad or insufficient input, NumericError for
degenerate or diverging computations.
"""


class ChaoscastError(Exception):
    """Base for all package errors."""


class DataError(ChaoscastError):
    """Input data is missing, malformed, or insufficient."""


class NumericError(ChaoscastError):
    """A computation degenerated or diverged."""


class NonFiniteTrajectory(NumericError):
    """An integrated trajectory left the finite range."""


class NonFiniteActivation(NumericError):
    """A model forward/backward pass produced non-finite values."""


class DegenerateSeries(NumericError):
    """A series has zero variance where correlation is required."""


class DegenerateCalibration(NumericError):
    """Calibration segment has zero variance in some dimension."""


class DegenerateFit(NumericError):
    """Regression inputs do not determine a line."""


class UnreadableFile(DataError):
    """File could not be opened or read."""


class SchemaMismatch(DataError):
    """File header lacks required columns."""


class EmptyInput(DataError):
    """No usable records in the input."""


class InsufficientData(DataError):
    """Not enough rows to build the requested structure."""


class InsufficientCalibration(DataError):
    """Too few calibration values for quantile thresholds."""


class MissingCheckpoint(DataError):
    """No checkpoint supplied for a requested horizon."""


class CheckpointMismatch(DataError):
    """Checkpoint tensors do not match the model configuration."""
