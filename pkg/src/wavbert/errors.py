"""Exception types shared across the package."""


class WavBertError(Exception):
    """Base class for all library errors."""


class ShapeError(WavBertError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(WavBertError):
    """Non-finite or otherwise invalid numeric input."""


class ContractError(WavBertError):
    """An operation precondition was violated (e.g. non-scalar loss)."""


class VocabularyError(WavBertError):
    """A token id falls outside the vocabulary."""


class CapacityError(WavBertError):
    """A configured maximum (e.g. positional table length) was exceeded."""


class ConfigError(WavBertError):
    """Invalid, unknown, or inconsistent configuration."""


class DegenerateAttentionError(WavBertError):
    """Every key is masked for some query row; attention is undefined."""


class InfeasibleAlignmentError(WavBertError):
    """The frame sequence is too short to emit the target under CTC."""


class EmptyInputError(WavBertError):
    """An operation received an empty sequence where at least one element is required."""


class MetricError(WavBertError):
    """A metric is undefined for the given inputs (e.g. empty reference)."""


class CheckpointError(WavBertError):
    """A checkpoint file is corrupt or does not match the model architecture."""
