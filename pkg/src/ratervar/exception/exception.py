import numpy as np


class RaterVarError(RuntimeError):
    """Base class for every error raised by ratervar."""


class ShapeError(RaterVarError):
    pass


class NumericalError(RaterVarError):
    pass


class DataFormatError(RaterVarError):
    """
    Malformed or inconsistent on-disk data. ``path`` names the offending
    file or directory.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class CheckpointError(RaterVarError):
    pass


class ConfigError(RaterVarError):
    pass


class PreconditionError(RaterVarError):
    pass


class MetricError(RaterVarError):
    pass


class UndefinedKappaError(MetricError):
    def __init__(self, message="undefined-kappa"):
        if "undefined-kappa" not in message:
            message = f"undefined-kappa: {message}"
        super().__init__(message)


def check_class_ids(mask, numClasses, ignoreLabel=255, path=None):
    """
    Every pixel must be a class id below numClasses or the ignore label.
    """
    illegal = (mask >= numClasses) & (mask != ignoreLabel)
    if np.any(illegal):
        bad = np.unique(mask[illegal])
        raise DataFormatError(
            f"class id(s) {bad.tolist()} out of range for {numClasses} classes",
            path=path,
        )
