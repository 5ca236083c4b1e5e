"""Exception hierarchy shared across the package."""


class FarsightError(Exception):
    """Base class for all errors raised by this package."""


class InvalidGeometryError(FarsightError):
    """A bounding box field is non-finite or outside the unit square."""


class InvalidParameterError(FarsightError, ValueError):
    """An operation parameter violates its precondition."""


class ShapeError(FarsightError):
    """A tensor's value buffer does not match its declared dimensions."""


class LabelMismatchError(FarsightError):
    """The class-name list does not match the tensor's class count."""


class JpegDecodeError(FarsightError):
    """JPEG byte stream could not be decoded.

    ``offset`` is the first byte position known to be bad: 0 for a stream
    that does not start with the SOI marker, the stream length for data
    that ran out mid-decode.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PacketError(FarsightError):
    """Base class for frame-packet codec failures."""


class BadMagicError(PacketError):
    pass


class BadVersionError(PacketError):
    pass


class LengthMismatchError(PacketError):
    pass


class BadPayloadError(PacketError):
    pass


class PayloadTooLargeError(PacketError):
    pass


class DetectionParseError(FarsightError):
    """Detection text did not match the grammar.

    ``line_no`` is the 1-based offending line.
    """

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class IntegrityError(FarsightError):
    """An echoed payload did not match what was sent."""


class BenchError(FarsightError):
    """A benchmark run could not produce a valid result."""
