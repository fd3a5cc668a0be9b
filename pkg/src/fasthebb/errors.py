"""Exception types shared across the package."""


class FastHebbError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(FastHebbError):
    """Operand shapes are incompatible for the requested operation."""


class InvalidTemperature(FastHebbError):
    """Softmax temperature must be strictly positive."""


class GeometryError(FastHebbError):
    """Patch/pool geometry underflows the input dimensions."""


class NonFiniteWeights(FastHebbError):
    """A weight update produced NaN or Inf entries."""


class TruncatedFile(FastHebbError):
    """Binary dataset file is not a whole number of records."""


class BadLabel(FastHebbError):
    """Label byte outside the valid class range."""


class BadCovariance(FastHebbError):
    """Covariance specification is not positive definite."""


class BadMagic(FastHebbError):
    """File does not start with the expected magic bytes."""


class VersionMismatch(FastHebbError):
    """File version is not supported by this reader."""


class CorruptFile(FastHebbError):
    """File ended early or failed structural validation."""


class EmptyLabeledSet(FastHebbError):
    """Supervised training requires at least one labeled sample."""


class EquivalenceViolation(FastHebbError):
    """Fast and naive kernels disagreed beyond tolerance."""


class ConfigError(FastHebbError):
    """Experiment configuration file is malformed or has unknown keys."""
