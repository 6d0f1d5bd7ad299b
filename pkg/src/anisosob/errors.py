"""Exception hierarchy.

Every error raised by the library derives from :class:`AnisoSobError`, which
is itself a ``ValueError`` so callers that only care about bad input can catch
that.
"""


class AnisoSobError(ValueError):
    pass


class DenominatorNonpositive(AnisoSobError):
    pass


class SupercriticalExponent(AnisoSobError):
    pass


class BadTail(AnisoSobError):
    pass


class EpsilonTooLarge(AnisoSobError):
    pass


class EmptySchedule(AnisoSobError):
    pass


class TooLarge(AnisoSobError):
    pass


class GridMismatch(AnisoSobError):
    pass


class ZeroField(AnisoSobError):
    pass


class ZeroInit(AnisoSobError):
    pass


class NotNormalized(AnisoSobError):
    pass


class NotConverged(AnisoSobError):
    pass


class BisectionFailed(AnisoSobError):
    pass


class NegativeValues(AnisoSobError):
    pass


class DegenerateG(AnisoSobError):
    pass


class ExponentOutOfRange(AnisoSobError):
    pass


class ConfigError(AnisoSobError):
    pass
