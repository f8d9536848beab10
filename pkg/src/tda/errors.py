"""Exception hierarchy shared by every layer.

Each error carries a short ``code`` (its class name unless overridden) that the
CLI prints as ``error: <code>: <detail>``.
"""


class TDAError(Exception):
    """Base class for domain errors (CLI exit status 1)."""

    @property
    def code(self) -> str:
        return type(self).__name__


class EmptyProviderSet(TDAError):
    pass


class DegeneratePerformance(TDAError):
    pass


class InvalidLoad(TDAError):
    pass


class NoSamples(TDAError):
    pass


class PlanMismatch(TDAError):
    pass


class DimensionMismatch(TDAError):
    pass


class FrameTooLarge(TDAError):
    pass


class DecodeError(TDAError):
    pass


class UnknownKind(DecodeError):
    pass


class ChannelClosed(TDAError):
    pass


class ConcurrentChannelUse(TDAError):
    """Raised when a second context reads or writes a channel already in use."""


class RegistrationRejected(TDAError):
    pass


class UnknownProvider(TDAError):
    pass


class NoProviders(TDAError):
    pass


class JobFailed(TDAError):
    pass


class AssemblyTimeout(TDAError):
    pass


class Incomplete(TDAError):
    pass


class DuplicateRange(TDAError):
    pass


class EmptyInput(TDAError):
    pass


class ConfigError(TDAError):
    pass


class IoError(TDAError):
    pass


class Unreachable(TDAError):
    pass
