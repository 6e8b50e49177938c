"""Exception and warning types shared across the package."""


class ClaimcalError(Exception):
    """Base class for package errors. Carries a machine-readable category."""

    category = "error"


class ValidationError(ClaimcalError):
    """Malformed input: wrong shape, dtype, range, or schema."""

    category = "validation"


class DegenerateDesignError(ClaimcalError):
    """Design matrix is rank deficient, or no clean vertex exists even
    after dithering."""

    category = "degenerate_design"


class SingularBasisError(ClaimcalError):
    """A candidate basis submatrix is not invertible."""

    category = "singular_basis"


class DegenerateScoreError(ClaimcalError):
    """A score family cannot produce a usable interval at this point
    (e.g. zero scale)."""

    category = "degenerate_score"


class InsufficientDataError(ClaimcalError):
    """Too few rows for the requested fit."""

    category = "insufficient_data"


class EmptyDataWarning(UserWarning):
    """A loaded dataset contains no records."""


class UnboundedCutoffWarning(UserWarning):
    """Imputed-value escalation failed to pin the cutoff; +inf returned."""


class AugmentWarning(UserWarning):
    """Feature augmentation dropped or altered columns."""
