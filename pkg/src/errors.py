"""
Exception hierarchy shared by every pipeline stage.

The CLI catches LstError at the top level and turns it into a single
tab-separated error line, so each subclass name doubles as a stable error code.
"""


class LstError(Exception):
    """Base class for all errors raised by the translation pipeline"""


class DimensionError(LstError):
    """Tensor shapes do not line up for an operation"""


class NumericError(LstError):
    """Non-finite values reached an operation that requires finite input"""


class TapeError(LstError):
    """The computation tape is not in topological order"""


class EmptySequenceError(LstError):
    """An operation received a zero-length sequence"""


class ConfigError(LstError):
    """Invalid model, training or run configuration"""


class CorpusFormatError(LstError):
    """A corpus or auxiliary text file does not follow its line format"""


class VocabularyError(LstError):
    pass


class BatchingError(LstError):
    pass


class CheckpointError(LstError):
    """A checkpoint file is missing, truncated or of an unknown format"""


class NonFiniteGradientError(LstError):
    """An optimizer step saw a NaN or infinite gradient"""

    def __init__(self, tensor_name, message):
        super().__init__(message)
        self.tensor_name = tensor_name


class TrainingDivergedError(LstError):
    """Training loss became NaN; a post-mortem checkpoint was written"""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class GridContractError(LstError):
    """A translation grid lacks an entry that its contract guarantees"""


class EvaluationError(LstError):
    pass


class RunLockError(LstError):
    """Another process holds the run directory lock"""
