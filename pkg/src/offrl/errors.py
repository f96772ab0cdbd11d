"""Exception types shared across the package.

Invalid arguments raise plain ValueError; the classes here mark conditions
callers are expected to branch on (CLI exit codes, training aborts).
"""


class EmptyDistributionError(RuntimeError):
    """Sampling was requested from a tree holding zero total mass."""


class PoisonedStateError(RuntimeError):
    """A NaN reached the optimizer; the training run must abort."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DatasetFormatError(ValueError):
    """A dataset file failed to parse; the message names the bad section."""

    def __init__(self, section, message):
        super().__init__(f"{section}: {message}")
        self.section = section


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the architecture."""


class ConfigError(ValueError):
    """A run config is invalid; the message carries the exact field path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
