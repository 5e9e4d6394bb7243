"""Exception hierarchy shared by every vialnet module."""


class VialnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VialnetError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class CacheError(VialnetError, RuntimeError):
    """A backward pass was requested without a matching forward cache."""


class NonFiniteError(VialnetError, FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


class ConfigError(VialnetError, ValueError):
    """Invalid model, training or pipeline configuration."""


class DatasetError(VialnetError, ValueError):
    """Dataset contents do not satisfy an operation's preconditions."""


class TransformError(VialnetError, ValueError):
    """Augmentation transform with parameters outside the allowed ranges."""


class CheckpointError(VialnetError):
    """Base class for checkpoint decoding problems."""


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class PayloadMismatchError(CheckpointError):
    pass


class RasterError(VialnetError):
    """Base class for image file problems."""


class RasterFormatError(RasterError):
    pass


class TruncatedRasterError(RasterError):
    pass
