"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class UsageError(ValueError):
    """An operation was called outside its contract."""


class FormatError(ValueError):
    """A file or byte stream does not match its declared format."""


class TrainingDiverged(RuntimeError):
    """The divergence guard tripped (non-finite loss)."""
