"""Exception types shared across the toolkit."""


class FcasepError(Exception):
    """Base class for all toolkit errors."""


class NotPositiveDefinite(FcasepError):
    """A matrix required to be Hermitian positive definite is not."""


class DimensionMismatch(FcasepError):
    """Operands have inconsistent shapes."""


class SingularP(FcasepError):
    """A basis-transform matrix is numerically singular."""


class SingularWeightedCovariance(FcasepError):
    """A weighted observation covariance stayed singular after regularization."""


class TooShort(FcasepError):
    """Input signal is shorter than one analysis frame."""


class ChannelLengthMismatch(FcasepError):
    """Channels of a multichannel signal have different lengths."""


class SampleRateMismatch(FcasepError):
    """A WAV file's sample rate differs from the configured rate."""


class ChannelCountMismatch(FcasepError):
    """Impulse-response sets of one scene disagree on the channel count."""


class LengthMismatch(FcasepError):
    """Reference and estimate differ in length or channel count."""


class ZeroReference(FcasepError):
    """SDR reference signal is identically zero."""
