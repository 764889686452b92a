"""Error taxonomy shared across modules.

The CLI maps these onto its exit-code contract: configuration and input
problems exit 2, numeric failures during training exit 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, caught at construction time."""


class DataError(ValueError):
    """Malformed input data (CSV cells, labels, shapes)."""


class EncoderError(RuntimeError):
    """External feature encoder failed: process, protocol, or shape."""


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt, truncated, or version-incompatible."""


class NumericError(RuntimeError):
    """Training produced a non-finite quantity; carries the step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
