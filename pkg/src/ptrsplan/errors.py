"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain an operation is defined on."""


class DegenerateAutocorrelation(DomainError):
    """The autocorrelation is flat at one, so the floor parameter cannot be resolved."""


class SingularModel(DomainError):
    """The pilot autocorrelation matrix is numerically singular."""


class FallbackToNumeric(DomainError):
    """The closed form needs at least three pilots; use the dense solve instead."""


class AffineFitRejected(DomainError):
    """A straight-line fit of J against the spacing is not trustworthy."""


class InfeasibleSpacing(DomainError):
    """No positive pilot spacing meets the cost ceiling."""
