"""Grid densities over relative phase and relative separation.

A :class:`PhaseGrid` samples a density on the periodic interval [0, 2pi)
at ``n`` equally spaced points starting at zero. Its integral is the
rectangle sum ``(2pi/n) * sum(values)``, which is exact for trigonometric
polynomials of degree below ``n``. A :class:`SeparationGrid` samples a
density on a closed interval and integrates with the trapezoid rule.

The visibility of a phase density is the modulus of its first circular
Fourier coefficient after normalization.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import OptimizeWarning, curve_fit

from .errors import (
    BimodalDistribution,
    DegenerateDistribution,
    GridMismatch,
    InvalidParameter,
    NumericalFailure,
)

__all__ = [
    "DEFAULT_N_GRID",
    "GaussianFit",
    "PhaseGrid",
    "SeparationGrid",
    "circular_distance",
    "fit_gaussian",
    "pointwise_product",
    "visibility_of_grid",
]

DEFAULT_N_GRID = 4096
TWO_PI = 2.0 * np.pi


def _checked_values(values) -> np.ndarray:
    v = np.array(values, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise InvalidParameter("grid values must be a non-empty 1-D array")
    if not np.all(np.isfinite(v)):
        raise InvalidParameter("grid values must be finite")
    if np.any(v < 0.0):
        raise InvalidParameter("grid values must be nonnegative")
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Nonnegative density on the periodic interval [0, 2pi).

    Parameters
    ----------
    values : array_like
        Samples at ``2pi * j / n`` for ``j = 0..n-1``.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _checked_values(self.values))

    @property
    def n_grid(self) -> int:
        return self.values.size

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n_grid

    def coordinates(self) -> np.ndarray:
        return self.spacing * np.arange(self.n_grid)

    @classmethod
    def uniform(cls, n_grid: int = DEFAULT_N_GRID) -> "PhaseGrid":
        return cls(np.full(n_grid, 1.0 / TWO_PI))

    @classmethod
    def from_function(cls, f, n_grid: int = DEFAULT_N_GRID) -> "PhaseGrid":
        """Sample ``f`` on the grid (no normalization)."""
        return cls(f(TWO_PI * np.arange(n_grid) / n_grid))

    def integral(self) -> float:
        return float(self.spacing * np.sum(self.values))

    def normalize(self) -> "PhaseGrid":
        """Rescale to unit integral.

        Raises
        ------
        DegenerateDistribution
            If the grid carries no mass.
        """
        total = self.integral()
        if not total > 0.0:
            raise DegenerateDistribution("phase density has zero mass")
        return PhaseGrid(self.values / total)

    def rotate(self, shift: int) -> "PhaseGrid":
        """Translate the density by ``shift`` bins (wrapping)."""
        return PhaseGrid(np.roll(self.values, shift))

    def to_json(self) -> dict:
        return {
            "domain": {"kind": "phase", "lower": 0.0, "upper": TWO_PI, "periodic": True},
            "values": self.values.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PhaseGrid":
        if obj.get("domain", {}).get("kind") != "phase":
            raise InvalidParameter("JSON object does not describe a phase grid")
        return cls(np.asarray(obj["values"], dtype=float))

    def to_csv(self, path) -> None:
        _write_csv(path, "delta", self.coordinates(), self.values)

    @classmethod
    def from_csv(cls, path) -> "PhaseGrid":
        _, values = _read_csv(path)
        return cls(values)


@dataclass(frozen=True, eq=False)
class SeparationGrid:
    """Nonnegative density on a closed interval of relative separations.

    Parameters
    ----------
    values : array_like
        Samples at ``linspace(lower, upper, n)``.
    lower, upper : float
        Interval end points, ``upper > lower``.
    """

    values: np.ndarray
    lower: float
    upper: float

    def __post_init__(self):
        object.__setattr__(self, "values", _checked_values(self.values))
        if not self.upper > self.lower:
            raise InvalidParameter("separation grid needs upper > lower")
        if self.values.size < 2:
            raise InvalidParameter("separation grid needs at least two points")

    @property
    def n_grid(self) -> int:
        return self.values.size

    def coordinates(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.n_grid)

    def integral(self) -> float:
        return float(trapezoid(self.values, self.coordinates()))

    def normalize(self) -> "SeparationGrid":
        total = self.integral()
        if not total > 0.0:
            raise DegenerateDistribution("separation density has zero mass")
        return SeparationGrid(self.values / total, self.lower, self.upper)

    def to_json(self) -> dict:
        return {
            "domain": {
                "kind": "separation",
                "lower": float(self.lower),
                "upper": float(self.upper),
                "periodic": False,
            },
            "values": self.values.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SeparationGrid":
        dom = obj.get("domain", {})
        if dom.get("kind") != "separation":
            raise InvalidParameter("JSON object does not describe a separation grid")
        return cls(np.asarray(obj["values"], dtype=float), dom["lower"], dom["upper"])

    def to_csv(self, path) -> None:
        _write_csv(path, "separation", self.coordinates(), self.values)

    @classmethod
    def from_csv(cls, path) -> "SeparationGrid":
        x, values = _read_csv(path)
        return cls(values, float(x[0]), float(x[-1]))


def _write_csv(path, name, x, y) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([name, "density"])
        for a, b in zip(x, y):
            w.writerow([f"{a:.16e}", f"{b:.16e}"])


def _read_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def grid_to_json_text(grid) -> str:
    """Serialize a grid to JSON text; floats round-trip exactly."""
    return json.dumps(grid.to_json())


def visibility_of_grid(g: PhaseGrid) -> float:
    """Modulus of the first circular Fourier coefficient of ``g``.

    Examples
    --------
    >>> round(visibility_of_grid(PhaseGrid.uniform(64)), 12)
    0.0
    """
    p = g.normalize()
    c = p.spacing * np.sum(p.values * np.exp(1j * p.coordinates()))
    return float(min(abs(c), 1.0))


def pointwise_product(a: PhaseGrid, b: PhaseGrid) -> PhaseGrid:
    """Elementwise product of two densities on the same grid (not normalized)."""
    if a.n_grid != b.n_grid:
        raise GridMismatch(f"grid sizes differ: {a.n_grid} vs {b.n_grid}")
    return PhaseGrid(a.values * b.values)


def circular_distance(x, y):
    """Shortest distance between angles on the circle."""
    d = np.mod(np.asarray(x) - np.asarray(y), TWO_PI)
    return np.minimum(d, TWO_PI - d)


@dataclass(frozen=True)
class GaussianFit:
    """Wrapped-Gaussian fit of a phase density.

    Attributes
    ----------
    mean : float
        Peak location in [0, 2pi).
    sigma : float
        Standard deviation in radians.
    goodness : float
        Root-mean-square residual of the fit against the normalized density.
    """

    mean: float
    sigma: float
    goodness: float


def _wrapped_gaussian(x, amp, mu, sigma):
    k = np.arange(-3, 4)[:, None]
    return amp * np.exp(-0.5 * ((x[None, :] - mu + TWO_PI * k) / sigma) ** 2).sum(axis=0)


def _local_maxima(v: np.ndarray) -> np.ndarray:
    """Indices of circular local maxima; a plateau reports its first bin."""
    n = v.size
    # compress plateaus so flat tops count once
    change = np.flatnonzero(v != np.roll(v, 1))
    if change.size == 0:
        return np.array([], dtype=int)
    starts = change
    ends = np.roll(change, -1) - 1
    ends[ends < 0] += n
    peaks = []
    for s, e in zip(starts, ends):
        left = v[(s - 1) % n]
        right = v[(e + 1) % n]
        if v[s] > left and v[s] > right:
            peaks.append(s)
    return np.asarray(peaks, dtype=int)


def fit_gaussian(g: PhaseGrid, secondary_fraction: float = 0.25) -> GaussianFit:
    """Least-squares fit of a wrapped Gaussian to a single-peaked density.

    The density is first rotated so its maximum bin (lowest index on ties)
    sits at the centre, which removes the wrap-around from the fit.

    Parameters
    ----------
    g : PhaseGrid
        Density to fit; normalized internally.
    secondary_fraction : float, optional
        Local maxima lower than this fraction of the global maximum are
        ignored when testing for a second peak.

    Raises
    ------
    BimodalDistribution
        If a second maximum of comparable height lies more than four
        estimated standard deviations from the first.
    """
    p = g.normalize()
    v = p.values
    n = p.n_grid
    h = p.spacing
    i_max = int(np.argmax(v))
    centre = n // 2
    shift = centre - i_max
    w = np.roll(v, shift)
    x = h * (np.arange(n) - centre)

    # width estimate from the half-maximum crossings around the peak
    half = 0.5 * w[centre]
    below = np.flatnonzero(w < half)
    if below.size == 0:
        raise DegenerateDistribution("density has no discernible peak")
    right = below[below > centre]
    left = below[below < centre]
    hw_r = (right[0] - centre) * h if right.size else np.pi
    hw_l = (centre - left[-1]) * h if left.size else np.pi
    sigma_est = max(0.5 * (hw_l + hw_r) / np.sqrt(2.0 * np.log(2.0)), h)

    peaks = _local_maxima(v)
    tall = peaks[v[peaks] >= secondary_fraction * v[i_max]]
    theta = p.coordinates()
    far = tall[circular_distance(theta[tall], theta[i_max]) > 4.0 * sigma_est]
    if far.size:
        j = far[np.argmax(v[far])]
        raise BimodalDistribution((theta[i_max], theta[j]))

    try:
        with warnings.catch_warnings():
            # an exact fit leaves the covariance undefined; only popt is used
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(
                _wrapped_gaussian, x, w, p0=(w[centre], 0.0, sigma_est), maxfev=10000
            )
    except RuntimeError as exc:
        raise NumericalFailure(f"Gaussian fit did not converge: {exc}") from exc
    amp, mu, sigma = popt
    resid = w - _wrapped_gaussian(x, amp, mu, sigma)
    goodness = float(np.sqrt(h * np.sum(resid**2)))
    mean = float(np.mod(theta[i_max] + mu, TWO_PI))
    return GaussianFit(mean=mean, sigma=float(abs(sigma)), goodness=goodness)
