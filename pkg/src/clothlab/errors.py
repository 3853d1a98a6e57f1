"""Exception types shared across the package."""


class ClothLabError(Exception):
    """Base class for all package errors."""


class TemplateNotFoundError(ClothLabError):
    pass


class SimInstabilityError(ClothLabError):
    """Integration diverged; message names the offending dt/stiffness."""


class NumericError(ClothLabError):
    pass


class DimensionError(ClothLabError):
    """Shape mismatch; message names both shapes."""


class InvalidTemplateError(ClothLabError):
    pass


class DegenerateStartError(ClothLabError):
    pass


class UndefinedIoUError(ClothLabError):
    pass


class NoClothError(ClothLabError):
    """No cloth pixel available where one is required."""


class NoClothVisibleError(ClothLabError):
    pass


class InsufficientDataError(ClothLabError):
    pass


class DatasetFormatError(ClothLabError):
    pass


class DatasetTruncationError(ClothLabError):
    """Truncated dataset file; message carries the trajectory index."""


class TrainingDivergenceError(ClothLabError):
    pass


class ConfigError(ClothLabError):
    pass
