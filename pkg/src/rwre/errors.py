"""Exception types shared across the package."""


class RwreError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RwreError):
    """Invalid model or experiment parameters."""


class DegenerateSiteError(RwreError):
    """A kernel has a vanishing axis probability where positivity is required."""


class DecompositionError(RwreError):
    """The coin decomposition is unavailable (ellipticity below kappa)."""


class BudgetError(RwreError):
    """A step budget was exhausted before the awaited event."""


class InputMismatchError(RwreError):
    """Two inputs that must describe the same run do not (e.g. path vs coins)."""


class SolverError(RwreError):
    """A linear solve failed or did not reach its tolerance."""


class TruncationError(RwreError):
    """A truncated slab leaked more probability mass than allowed (W too small)."""


class BetaTooLargeError(RwreError):
    """The regeneration coin rate exceeds the admissible ratio at some site."""


class SampleSizeError(RwreError):
    """Not enough samples to run a diagnostic."""


class ModelViolationError(RwreError):
    """The environment violates a structural guarantee the caller relied on."""
