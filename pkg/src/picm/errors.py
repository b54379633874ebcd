"""Exception hierarchy. Each class carries the CLI exit code for its error family."""


class PicmError(Exception):
    exit_code = 1


class FormatError(PicmError):
    """Malformed tensor, bitstream or filter file."""

    exit_code = 3


class BadMagic(FormatError):
    exit_code = 4


class DimensionOverflow(FormatError):
    exit_code = 5


class TruncatedPayload(FormatError):
    exit_code = 6


class RangeError(PicmError):
    """A coefficient does not fit in its allocated number of trits."""

    exit_code = 7


class ModelError(PicmError):
    """Invalid probability model input (scale out of range, bad trit, ...)."""

    exit_code = 8


class SchemaError(PicmError):
    """Logits CSV does not follow the expected layout."""

    exit_code = 9


class BudgetError(PicmError):
    exit_code = 10


class Truncated(Exception):
    """Raised by the range decoder when the payload runs out.

    This is a normal condition for progressive decoding, not a failure.
    ``count`` is the number of symbols fully decoded before the cut.
    """

    def __init__(self, count):
        super().__init__(f"payload exhausted after {count} symbols")
        self.count = count
