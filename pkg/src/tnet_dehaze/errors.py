"""Exception types shared across the package."""


class TnetDehazeError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TnetDehazeError, ValueError):
    """Inconsistent or out-of-range configuration values."""


class ShapeError(TnetDehazeError, ValueError):
    """Tensor or image shape violates an operation's contract."""


class DomainError(TnetDehazeError, ValueError):
    """Numeric input falls outside the documented value domain."""


class ExtractorUnavailableError(TnetDehazeError, RuntimeError):
    """Pretrained perceptual feature extractor could not be loaded."""


class TrainingDiverged(TnetDehazeError, RuntimeError):
    """Loss became NaN or Inf during optimization."""
