"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ConfigurationError(ValueError):
    """A hyperparameter or config value is invalid."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


class ValidationError(ValueError):
    """Input data failed schema or invariant validation."""


class TrainingAborted(RuntimeError):
    """Training diverged (non-finite loss) and was stopped."""
