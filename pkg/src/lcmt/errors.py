"""Exception hierarchy shared by every lcmt module.

The CLI maps these onto process exit codes (see ``lcmt.config.exit_code_for``).
"""


class LcmtError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LcmtError, ValueError):
    """Operand shapes are incompatible, or a tensor would be empty."""


class AutogradError(LcmtError, RuntimeError):
    """Reverse-mode differentiation was invoked on an invalid graph."""


class NumericsError(LcmtError, FloatingPointError):
    """A non-finite value reached the optimizer."""


class DataError(LcmtError, ValueError):
    """Corpus, vocabulary or BPE input is malformed."""


class ConfigError(LcmtError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class ConstraintConflict(LcmtError, ValueError):
    """Decoding constraints cannot be satisfied together."""


class CheckpointError(LcmtError, ValueError):
    """A checkpoint file or parameter map is inconsistent."""
