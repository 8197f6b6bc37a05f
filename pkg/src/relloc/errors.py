"""Exception types shared across the package."""


class RellocError(Exception):
    """Base class for all package errors."""


class InvalidParameter(RellocError, ValueError):
    """A numeric parameter lies outside its admissible range."""


class DegenerateDistribution(RellocError, ValueError):
    """A density carries no mass and cannot be normalized."""


class BimodalDistribution(RellocError):
    """A single-peak fit was requested for a density with two peaks.

    Attributes
    ----------
    peaks : tuple of float
        Locations of the competing maxima.
    """

    def __init__(self, peaks, message=None):
        self.peaks = tuple(float(p) for p in peaks)
        super().__init__(message or f"density has separated maxima at {self.peaks}")


class GridMismatch(RellocError, ValueError):
    """Two grids with different layouts were combined."""


class TruncationOverflow(RellocError):
    """A Fock-space operation would leave the truncated basis."""


class InfiniteRatio(RellocError, ZeroDivisionError):
    """A ratio has a vanishing denominator."""


class InvalidRecord(RellocError, ValueError):
    """A detection record is inconsistent with the requested operation."""


class NumericalFailure(RellocError, ArithmeticError):
    """An iterative or quadrature routine failed to converge.

    Attributes
    ----------
    residual : float
        Best available error estimate at the point of failure.
    """

    def __init__(self, message, residual=float("nan")):
        self.residual = float(residual)
        super().__init__(f"{message} (residual {self.residual:.3e})")


class UnsupportedSpec(RellocError, ValueError):
    """The requested physical configuration is not modelled."""
