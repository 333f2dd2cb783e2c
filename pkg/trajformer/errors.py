"""Exception hierarchy shared by every trajformer module."""


class TrajformerError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(TrajformerError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(TrajformerError, FloatingPointError):
    """An operation produced NaN or Inf."""


class ContractError(TrajformerError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(TrajformerError, ValueError):
    """A configuration record is invalid or infeasible."""


class SceneFormatError(TrajformerError, ValueError):
    """A scene file could not be parsed."""


class SceneInvariantError(TrajformerError, ValueError):
    """A parsed scene violates one of its invariants."""


class CheckpointError(TrajformerError, ValueError):
    """A checkpoint directory is incomplete, inconsistent or outdated."""
