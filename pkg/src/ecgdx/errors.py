"""Exception types raised across the package.

All errors derive from :class:`EcgdxError`. Data and configuration problems
also derive from :class:`ValueError` so callers can catch them generically.
"""


class EcgdxError(Exception):
    """Base class for every error raised by ecgdx."""


class CohortError(EcgdxError, ValueError):
    pass


class MissingColumn(CohortError):
    pass


class BadValue(CohortError):
    pass


class EmptyCohort(CohortError):
    pass


class UnknownTarget(CohortError, KeyError):
    def __str__(self):
        # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class TooFewRows(CohortError):
    pass


class SpecError(EcgdxError, ValueError):
    """Malformed cohort spec or training config."""


class SingleClass(EcgdxError, ValueError):
    """Only one label value is present where both are required."""


class SingleClassTrain(SingleClass):
    pass


class SingleClassVal(SingleClass):
    pass


class EmptySet(EcgdxError, ValueError):
    pass


class LengthMismatch(EcgdxError, ValueError):
    pass


class SchemaMismatch(EcgdxError, ValueError):
    pass


class ResampleExhausted(EcgdxError, RuntimeError):
    pass


class TooManyFeatures(EcgdxError, ValueError):
    pass
