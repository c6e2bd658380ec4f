"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class DegenerateVectorError(ValueError):
    """A zero-norm vector reached an operation that needs a direction."""


class ConfigError(ValueError):
    """A configuration value is out of its documented range."""


class ContractViolationError(ValueError):
    """A caller broke a documented precondition."""


class OracleFailureError(RuntimeError):
    """The finite-difference oracle hit a non-finite function value."""


class TargetDegenerateError(ValueError):
    """The averaged target cosine is too close to +/-1 to aim at."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""
