"""Exception hierarchy shared by every module of the package."""


class SnnAdvError(Exception):
    """Base class for all errors raised by snnadv."""


class DimensionError(SnnAdvError, ValueError):
    pass


class LabelError(SnnAdvError, ValueError):
    pass


class EmptyInputError(SnnAdvError, ValueError):
    pass


class TrainingDiverged(SnnAdvError, FloatingPointError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class EncodingRangeError(SnnAdvError, ValueError):
    pass


class ConfigError(SnnAdvError, ValueError):
    pass


class ConversionError(SnnAdvError, ValueError):
    pass


class DegenerateCalibration(ConversionError):
    pass


class FormatError(SnnAdvError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    pass


class ChecksumError(FormatError):
    pass
