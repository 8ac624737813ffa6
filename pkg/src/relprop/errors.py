"""Exception types shared across the package."""


class RelpropError(Exception):
    """Base class for all errors raised by relprop."""


class ShapeError(RelpropError, ValueError):
    """Tensor or layer shapes do not conform."""


class ModelFileError(RelpropError):
    """A model manifest or weight blob could not be used."""


class ModelFileMissing(ModelFileError, FileNotFoundError):
    pass


class ChecksumMismatch(ModelFileError):
    pass


class ModelFormatError(ModelFileError, ValueError):
    """Manifest is malformed or disagrees with the weight blob."""


class TrainingDiverged(RelpropError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")
        self.epoch = epoch
        self.loss = loss


class RuleConfigError(RelpropError, ValueError):
    pass


class AuditRefused(RelpropError):
    """Conservation audit requested for a map that does not decompose f(x)."""


class SampleExcluded(RelpropError):
    """A sample cannot contribute to a perturbation curve."""

    def __init__(self, reason: str, sample_id: int | None = None):
        super().__init__(reason)
        self.reason = reason
        self.sample_id = sample_id


class DataFormatError(RelpropError, ValueError):
    pass


class BadMagic(DataFormatError):
    pass


class TruncatedFile(DataFormatError):
    pass
