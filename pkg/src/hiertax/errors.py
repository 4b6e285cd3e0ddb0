"""Exception hierarchy shared across the package."""


class HiertaxError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(HiertaxError, ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Tensor extents are incompatible for the requested operation."""


class NonDeterministicError(HiertaxError):
    """A function expected to be pure returned different results."""


class TaxonomyParseError(ValidationError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IngestionError(ValidationError):
    def __init__(self, record_id: str, message: str):
        super().__init__(f"record {record_id!r}: {message}")
        self.record_id = record_id


class CheckpointError(HiertaxError):
    """Checkpoint file is unreadable, truncated or from another format version."""


class FingerprintMismatch(ValidationError):
    """Checkpoint was trained against a different taxonomy."""


class TrainingDiverged(HiertaxError, RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
