"""Exception hierarchy for the parallel-cell estimation toolkit."""


class ParallelSocError(Exception):
    """Base class for all package errors."""


class ConfigError(ParallelSocError):
    """Malformed configuration, CSV or scenario input."""


class NumericalError(ParallelSocError):
    """Base class for numerical failures (CLI exit code 3)."""


class SingularA22(NumericalError):
    pass


class ImpulseUnobservable(NumericalError):
    pass


class VoltageMismatch(NumericalError):
    pass


class SingularG22(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class EigSolverFailure(NumericalError):
    pass


class CycleGap(ParallelSocError):
    """Drive cycle does not cover the requested horizon."""


class DerivativeUnavailable(ParallelSocError):
    """OCV curve cannot provide the requested derivative order."""


class OrderTooHigh(ParallelSocError):
    pass


class UnsupportedN(ParallelSocError):
    pass
