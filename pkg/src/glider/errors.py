"""Exception hierarchy shared by every glider module."""


class GliderError(Exception):
    """Base class for all errors raised by this package."""


class NonFinite(GliderError, ValueError):
    pass


class DimTooSmall(GliderError, ValueError):
    pass


class ZeroVariance(GliderError, ValueError):
    pass


class ZeroNorm(GliderError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class BadK(GliderError, ValueError):
    pass


class BadP(GliderError, ValueError):
    pass


class NoConvergence(GliderError, RuntimeError):
    pass


class DimMismatch(GliderError, ValueError):
    pass


class ShapeMismatch(DimMismatch):
    pass


class MissingGate(GliderError, ValueError):
    pass


class MissingGlobal(GliderError, ValueError):
    pass


class Diverged(GliderError, RuntimeError):
    pass


class BadExampleCount(GliderError, ValueError):
    pass


class LlmUnavailable(GliderError, RuntimeError):
    pass


class EmptyCompletion(GliderError, RuntimeError):
    pass


class EmbedUnavailable(GliderError, RuntimeError):
    pass


class EmptyText(GliderError, ValueError):
    pass


class DuplicateName(GliderError, ValueError):
    pass


class VersionMismatch(GliderError, ValueError):
    pass


class CorruptFile(GliderError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class TooFewTasks(GliderError, ValueError):
    pass
