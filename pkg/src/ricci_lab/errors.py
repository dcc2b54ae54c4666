"""Exception types shared across the laboratory."""


class RicciLabError(Exception):
    """Base class for all errors raised by this package."""


class GridError(RicciLabError):
    """Invalid grid request (too few nodes, unknown backend)."""


class PositivityError(RicciLabError):
    """A metric profile lost positivity.

    Carries the worst offending coordinate and profile value so callers
    can report which node failed.
    """

    def __init__(self, message, coordinate=None, value=None):
        super().__init__(message)
        self.coordinate = coordinate
        self.value = value


class SolvabilityError(RicciLabError):
    """Right-hand side of a kernel-constrained elliptic solve has nonzero mean."""


class EllipticSolveError(RicciLabError):
    """Elliptic solve failed or left a large residual; carries a condition estimate."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NormalizationError(RicciLabError):
    """A potential that was required to be normalized is not."""


class BandError(RicciLabError):
    """The eigenvalue-one band does not have the expected multiplicity."""

    def __init__(self, message, found_band=None):
        super().__init__(message)
        self.found_band = found_band


class KernelError(RicciLabError):
    """Holomorphic kernel of a vector-field Laplacian has unexpected dimension."""

    def __init__(self, message, kernel_dims=None):
        super().__init__(message)
        self.kernel_dims = kernel_dims


class GramError(RicciLabError):
    """Singular Gram matrix in a projection."""


class BracketError(RicciLabError):
    """Root bracketing failed (no sign change on the search interval)."""


class FitError(RicciLabError):
    """Decay-rate fit impossible (no positive decaying samples)."""


class TraceError(RicciLabError):
    """Malformed or empty flow trace."""


class ConfigError(RicciLabError):
    """Bad experiment configuration (unknown key, missing section, bad value)."""
