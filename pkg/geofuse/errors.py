from typing import Optional


class GeofuseError(Exception):
    pass


class ParameterError(GeofuseError):
    pass


class KindError(GeofuseError):
    pass


class ShapeError(GeofuseError):
    pass


class AlignmentError(GeofuseError):
    pass


class DataError(GeofuseError):
    pass


class DegenerateError(GeofuseError):
    pass


class MappingError(GeofuseError):
    pass


class FormatError(GeofuseError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class ParseError(GeofuseError):
    """Malformed text input. `line` is 1-based, `index` is a feature index."""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        index: Optional[int] = None,
    ) -> None:
        super().__init__(message)
        self.line = line
        self.index = index
