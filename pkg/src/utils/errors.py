"""
Error hierarchy for the ClaDec explainer

Every error carries the process exit code and the machine-readable category
the command line reports when it aborts.
"""

from typing import Optional


class CladecError(Exception):
    """Base class for all errors raised by this package"""

    exit_code = 1
    category = "internal"


class ConfigError(CladecError):
    """Invalid configuration value, flag or config file line"""

    exit_code = 2
    category = "config"


class ShapeError(ConfigError, ValueError):
    """Tensor shapes or dimensions do not agree"""


class UnknownTapError(ConfigError):
    """Layer tap name or alias is not one of the exported stages"""


class MissingCheckpointError(ConfigError):
    """A dependent stage was started without the checkpoint it needs"""


class DataError(CladecError):
    """Dataset files are missing, malformed or inconsistent"""

    exit_code = 3
    category = "data"


class IdxFormatError(DataError):
    """IDX magic number or header is not what the reader expects"""


class TruncatedFileError(DataError):
    """IDX payload is shorter than its header declares"""


class CountMismatchError(DataError):
    """Image and label files disagree on the number of items"""


class ReconstructionRangeError(DataError):
    """Reconstructions handed to an evaluation classifier left [0, 1]"""


class NumericalError(CladecError):
    """Non-finite values or failed numerical procedures"""

    exit_code = 4
    category = "numeric"


class DivergenceError(NumericalError):
    """Training loss became NaN or infinite"""


class NonConvergenceError(NumericalError):
    """Iterative solver stopped at its iteration cap"""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class DegenerateEncoderError(NumericalError):
    """Linear encoder annihilates all variance of the data"""


class ArtifactIOError(CladecError):
    """Reading or writing an artifact failed"""

    exit_code = 5
    category = "io"


class CheckpointFormatError(ArtifactIOError):
    """Checkpoint file is not a valid CLDC container"""


class FrozenEncoderError(CladecError):
    """Classifier parameters changed during decoder training"""
