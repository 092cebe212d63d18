"""Exception types. Each carries a short ``category`` used by the CLI error line."""


class RcmnetError(Exception):
    category = "error"


class ShapeError(RcmnetError, ValueError):
    category = "shape"


class NumericalError(RcmnetError, FloatingPointError):
    category = "numerical"


class GraphError(RcmnetError, RuntimeError):
    category = "autodiff"


class ConfigError(RcmnetError, ValueError):
    category = "config"


class DataError(RcmnetError, ValueError):
    category = "data"


class FormatError(DataError):
    """Malformed NetPBM file or checkpoint container."""

    category = "format"


class CheckpointError(RcmnetError, ValueError):
    category = "checkpoint"
