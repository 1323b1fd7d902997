"""Exception hierarchy shared by all pipeline stages."""


class TrailmarkError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(TrailmarkError):
    """Invalid run configuration or scene specification."""


class DataError(TrailmarkError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class MissingFile(DataError):
    pass


class TimestampOrderViolation(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class BehindCamera(TrailmarkError):
    """Point has non-positive depth along the optical axis."""


class DegeneratePoint(TrailmarkError):
    pass


class OutOfRange(TrailmarkError):
    pass


class InsufficientPoses(DataError):
    pass


class EmptyDataset(DataError):
    pass


class AllMasksEmpty(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class NoLabeledPixels(DataError):
    pass


class PathTooShort(ConfigError):
    pass
