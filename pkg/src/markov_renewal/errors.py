"""Exception hierarchy shared by all modules."""


class MarkovRenewalError(Exception):
    """Base class; ``module`` names the subsystem that failed."""

    module = "markov_renewal"


class ValidationError(MarkovRenewalError, ValueError):
    module = "config"


class NotIrreducible(MarkovRenewalError):
    module = "perron"


class NonConvergence(MarkovRenewalError):
    module = "perron"


class NotQuasiStochastic(MarkovRenewalError):
    module = "perron"


class GridMismatch(MarkovRenewalError):
    module = "kernel"


class DivergentMoment(MarkovRenewalError):
    module = "kernel"


class NonPositiveDrift(MarkovRenewalError):
    module = "kernel"


class TruncationFailure(MarkovRenewalError):
    module = "renewal"


class ArithmeticKernel(MarkovRenewalError):
    module = "renewal"


class NotSpreadOut(MarkovRenewalError):
    module = "renewal"


class InsufficientVisits(MarkovRenewalError):
    module = "simulate"


class WindowTooSmall(MarkovRenewalError):
    module = "mre"


class NoRoot(MarkovRenewalError):
    module = "apps"


class NotPrimitive(MarkovRenewalError):
    module = "apps"
