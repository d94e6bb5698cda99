"""Exception hierarchy shared by all modules."""


class CoverlessError(Exception):
    """Base class; the CLI maps these to exit code 1 unless noted."""


class ShapeMismatch(CoverlessError, ValueError):
    pass


class MalformedHeader(CoverlessError, ValueError):
    pass


class TruncatedPayload(CoverlessError, ValueError):
    pass


class UnsupportedDepth(CoverlessError, ValueError):
    pass


class TooSmall(CoverlessError, ValueError):
    pass


class IncompatibleSpec(CoverlessError, ValueError):
    pass


class TraceMismatch(CoverlessError, ValueError):
    pass


class NonpositiveClip(CoverlessError, ValueError):
    pass


class InvalidDistribution(CoverlessError, ValueError):
    pass


class InvalidConfig(CoverlessError, ValueError):
    pass


class NonFiniteLoss(CoverlessError, ArithmeticError):
    """Training diverged; ``report`` holds the steps logged before the abort."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CorruptModel(CoverlessError):
    pass


class IoFailure(CoverlessError, OSError):
    pass


class DuplicateId(CoverlessError, KeyError):
    pass


class FingerprintCollision(CoverlessError):
    pass


class NoMatchingModel(CoverlessError, LookupError):
    """Maps to CLI exit code 3."""


class PayloadTooLarge(CoverlessError, ValueError):
    pass
