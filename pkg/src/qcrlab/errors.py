"""Exception hierarchy.

Every numerical or domain failure derives from :class:`QcrError`; the CLI maps
these to exit status 3 and config problems (:class:`ConfigError`) to 2.
"""


class QcrError(Exception):
    """Base class for all library errors."""


class InvalidOperator(QcrError, ValueError):
    """Matrix fails a structural requirement (square, Hermitian, PSD, trace)."""


class DimensionError(QcrError, ValueError):
    pass


class SingularSupport(QcrError):
    """A derivative has weight outside the support of the state."""


class SupportBoundary(QcrError):
    """An outcome has vanishing probability but nonzero derivative: Fisher information diverges."""


class CapacityError(QcrError):
    pass


class PartitionError(QcrError, KeyError):
    pass


class ModelError(QcrError):
    """A state model violates its own contract (e.g. derivative mismatch)."""


class DegenerateModel(QcrError):
    pass


class NoData(QcrError):
    pass


class InfeasibleLikelihood(QcrError):
    pass


class FlatLikelihood(QcrError):
    """The data carry no information about the parameter."""


class DesignError(QcrError):
    pass


class TooFewSamples(QcrError):
    pass


class StudyAborted(QcrError):
    """Too many individual trials failed."""


class ConfigError(QcrError):
    pass


class IoError(QcrError, OSError):
    pass
