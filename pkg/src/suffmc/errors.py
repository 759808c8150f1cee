"""Exception types shared across the package."""


class SuffmcError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(SuffmcError):
    """A matrix that must be SPD failed its Cholesky factorization.

    Inside the sampler this is a signal, not a crash: the caller maps it to a
    -inf log-density and the proposal is rejected.
    """


class DimMismatch(SuffmcError):
    """Operands have incompatible dimensions."""


class EmptyData(SuffmcError):
    """A dataset with zero observations was supplied."""


class BadGroupIndex(SuffmcError):
    """A group label falls outside 1..J."""


class NegativeCount(SuffmcError):
    """A count response contains a negative value."""


class OutOfSupport(SuffmcError):
    """A half-family prior was evaluated at a negative point.

    This indicates a transform bug upstream, never a sampling event.
    """


class InsufficientDraws(SuffmcError):
    """Too few draws to compute the requested summary."""


class LayoutMismatch(SuffmcError):
    """Two chain sets do not share a parameter layout."""


class UnknownScenario(SuffmcError):
    """No built-in loading matrix for the requested (p, d)."""


class RateOverflow(SuffmcError):
    """A simulated Poisson rate exceeded the supported range."""


class AllDivergent(SuffmcError):
    """More than 90% of post-warm-up iterations diverged.

    Signals a broken model or gradient rather than bad luck.
    """


class ConfigError(SuffmcError):
    """A run-config file or flag set is invalid."""
