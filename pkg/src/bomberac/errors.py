"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A run or board configuration value is invalid."""


class ContractError(RuntimeError):
    """A caller violated an operation precondition (e.g. stepping a finished game)."""


class CheckpointError(IOError):
    """A checkpoint file is malformed. Carries the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
