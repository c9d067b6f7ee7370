"""Shared exception types."""


class VeigError(Exception):
    """Base class for all package errors."""


class ParameterError(VeigError, ValueError):
    """A distribution or guide was built with invalid parameters."""


class DomainError(VeigError, ValueError):
    """A value lies outside the support / design space it was used in."""


class CapabilityError(VeigError, TypeError):
    """The requested operation is not supported for this object."""


class ConfigurationError(VeigError, ValueError):
    """Unknown model/guide/estimator name or bad configuration field."""


class ContractError(VeigError, ValueError):
    """Shapes or roles passed to an operation do not match its contract."""


class ImplicitLikelihood(CapabilityError):
    """The model's likelihood density is not evaluable pointwise.

    Callers should fall back to an estimator that only needs joint samples
    (posterior or marginal+likelihood).
    """


class EstimationFailure(VeigError, RuntimeError):
    """An estimator failed irrecoverably (diverged search, singular fit)."""
