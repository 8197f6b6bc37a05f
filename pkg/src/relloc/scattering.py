"""Relative-position localization of two particles by scattered light.

Two models are covered.

Rubber cavity
    A photon is counted at one of two outputs with Kraus operators
    ``exp(i sqrt2 k x) -+ exp(i sqrt2 k y)``. On the relative separation
    ``r = y - x`` a count at the "L" output multiplies the density by
    ``sin^2(sqrt2 k r / 2)`` and one at "R" by ``cos^2(sqrt2 k r / 2)``.

Free particles
    Each photon scattered at angle ``theta`` gives the relative coordinate
    a kick, leaving the factor ``cos^2(k sin(theta) r / 2)``. An observer
    who only sees a cone ``|theta| < eps`` records a binary outcome. A
    deflection (``S``) multiplies the density by
    ``(1/2pi) int_eps^(2pi-eps) cos^2(k sin(theta) r / 2) dtheta``; a forward
    event (``F``) by ``(1/2pi) [int_0^2pi sin^2(..) + int_-eps^eps cos^2(..)]``.
    The two factors add to one at every ``r``. For thermal light an
    ``n``-photon packet scatters as a whole with kick ``n k sin(theta)``;
    empty packets always pass forward.

Thermal particles spread uniformly over a region of length ``L`` have a
triangular relative-separation density on ``[-L, L]``. Their Gaussian
wave packets smooth it with a Gaussian whose width is set by the thermal
length ``d``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre
from scipy.stats import norm

from .errors import InvalidParameter, InvalidRecord, NumericalFailure
from .optical import _thread_count
from .phase_dist import SeparationGrid

__all__ = [
    "LightSpec",
    "ParticleEnsemble",
    "ScatterRecord",
    "ScatterRun",
    "ViewCone",
    "deflect_factor",
    "deflect_factor_mono",
    "event_probabilities",
    "forward_factor",
    "forward_factor_mono",
    "free_particle_density",
    "rubber_cavity_density",
    "sample_scatter_batch",
    "sample_scatter_run",
    "separation_prior",
]

DEFAULT_N_SEP = 1601
DEFAULT_EPS_VIEW = 0.02
_TAIL = 1e-10
_MAX_PHOTONS = 1_000_000
_MAX_NODES = 1 << 20
_CHUNK = 256


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ScatterRecord:
    """Ordered scattering outcomes.

    Parameters
    ----------
    model : {'rubber', 'free'}
    events : tuple of str
        ``'L'``/``'R'`` for the rubber cavity, ``'F'``/``'S'`` for free
        particles.
    """

    model: str
    events: tuple = ()

    def __post_init__(self):
        allowed = {"rubber": ("L", "R"), "free": ("F", "S")}
        if self.model not in allowed:
            raise InvalidParameter(f"unknown scattering model {self.model!r}")
        ev = tuple(str(e) for e in self.events)
        if any(e not in allowed[self.model] for e in ev):
            raise InvalidRecord(f"events of the {self.model} model must be {allowed[self.model]}")
        object.__setattr__(self, "events", ev)

    @classmethod
    def free(cls, F: int, S: int) -> "ScatterRecord":
        return cls("free", ("F",) * F + ("S",) * S)

    @classmethod
    def rubber(cls, l: int, r: int) -> "ScatterRecord":
        return cls("rubber", ("L",) * l + ("R",) * r)

    def count(self, label: str) -> int:
        return sum(1 for e in self.events if e == label)

    @property
    def F(self) -> int:
        return self.count("F")

    @property
    def S(self) -> int:
        return self.count("S")


@dataclass(frozen=True)
class LightSpec:
    """Incident light: single photons of momentum ``k`` or thermal packets.

    Parameters
    ----------
    kind : {'mono', 'thermal'}
    k : float
        Photon momentum.
    nbar : float, optional
        Mean photon number per thermal packet.
    """

    kind: str
    k: float
    nbar: float = 0.0

    def __post_init__(self):
        if self.kind not in ("mono", "thermal"):
            raise InvalidParameter(f"unknown light kind {self.kind!r}")
        if not self.k > 0:
            raise InvalidParameter("photon momentum must be positive")
        if self.kind == "thermal" and not self.nbar > 0:
            raise InvalidParameter("thermal light needs a positive mean photon number")

    @classmethod
    def mono(cls, k: float) -> "LightSpec":
        return cls("mono", k)

    @classmethod
    def thermal(cls, k: float, nbar: float) -> "LightSpec":
        return cls("thermal", k, nbar)

    def photon_weights(self):
        """Cut-off ``K`` and normalized probabilities ``p_0..p_K`` of the packet.

        The Bose-Einstein law is cut where the remaining tail is below
        ``1e-10`` and renormalized.
        """
        if self.kind == "mono":
            return 1, np.array([0.0, 1.0])
        x = self.nbar / (1.0 + self.nbar)
        K = int(math.ceil(math.log(_TAIL) / math.log(x)))
        if K > _MAX_PHOTONS:
            raise NumericalFailure(
                f"photon-number sum needs {K} terms for nbar={self.nbar}",
                residual=x**_MAX_PHOTONS,
            )
        n = np.arange(K + 1)
        p = (1.0 - x) * x**n
        return K, p / p.sum()


@dataclass(frozen=True)
class ParticleEnsemble:
    """Two thermal particles spread over ``[lower, upper]`` with thermal length ``d``."""

    lower: float
    upper: float
    d: float

    def __post_init__(self):
        if not self.upper > self.lower:
            raise InvalidParameter("region needs upper > lower")
        if not self.d > 0:
            raise InvalidParameter("thermal length d must be positive")

    @property
    def length(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class ViewCone:
    """Half-angle of the observer's forward acceptance."""

    eps: float = DEFAULT_EPS_VIEW

    def __post_init__(self):
        if not 0.0 <= self.eps < 0.5 * np.pi:
            raise InvalidParameter("view half-angle must lie in [0, pi/2)")


# ---------------------------------------------------------------------------
# angular factors


def _packet_sums(u, light: LightSpec):
    """Packet averages of ``cos^2(n u/2)`` and ``sin^2(n u/2)`` over ``n >= 1``."""
    if light.kind == "mono":
        return np.cos(0.5 * u) ** 2, np.sin(0.5 * u) ** 2
    K, p = light.photon_weights()
    x = light.nbar / (1.0 + light.nbar)
    p1 = 1.0 - p[0]
    # sum_{n=1}^{K} p_n exp(i n u) as a finite geometric series
    w = x * np.exp(1j * u)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = (1.0 - x) * w * (1.0 - w**K) / (1.0 - w)
    g = np.real(g) / np.sum((1.0 - x) * x ** np.arange(K + 1))
    return 0.5 * (p1 + g), 0.5 * (p1 - g)


def _node_count(zmax: float, light: LightSpec) -> int:
    """Trapezoid nodes resolving ``cos(n z sin(theta))`` for every ``n <= K``."""
    K, _ = light.photon_weights()
    w = K * zmax
    n = int(w + 12.0 * w ** (1.0 / 3.0) + 64)
    n = max(512, n + (n % 2))
    if n > _MAX_NODES:
        raise NumericalFailure(f"angular quadrature needs {n} nodes", residual=float(w))
    return n


def _factors(z, light: LightSpec, eps: float):
    """Forward and deflect factors at ``z = k |r|``."""
    z = np.abs(np.asarray(z, dtype=float))
    shape = z.shape
    z = z.reshape(-1)
    zmax = float(z.max(initial=0.0))
    N = _node_count(zmax, light)
    theta = 2.0 * np.pi * np.arange(N) / N
    sin_t = np.sin(theta)
    K, p = light.photon_weights()
    m = 48 + int(2.0 * K * zmax * math.sin(eps))
    xg, wg = roots_legendre(m)
    sin_w = np.sin(eps * xg)
    fwd = np.empty(z.size)
    dfl = np.empty(z.size)
    for s in range(0, z.size, _CHUNK):
        zz = z[s : s + _CHUNK, None]
        c_full, s_full = _packet_sums(zz * sin_t[None, :], light)
        c_full = c_full.mean(axis=1)
        s_full = s_full.mean(axis=1)
        if eps > 0.0:
            c_win, _ = _packet_sums(zz * sin_w[None, :], light)
            c_win = eps * (c_win @ wg) / (2.0 * np.pi)
        else:
            c_win = 0.0
        dfl[s : s + _CHUNK] = c_full - c_win
        fwd[s : s + _CHUNK] = p[0] + s_full + c_win
    return fwd.reshape(shape), dfl.reshape(shape)


def forward_factor(light: LightSpec, r, view: ViewCone = ViewCone()):
    """Forward-event factor at relative separation ``r``."""
    return _factors(light.k * np.asarray(r, dtype=float), light, view.eps)[0]


def deflect_factor(light: LightSpec, r, view: ViewCone = ViewCone()):
    """Deflection factor at relative separation ``r``."""
    return _factors(light.k * np.asarray(r, dtype=float), light, view.eps)[1]


def deflect_factor_mono(k: float, r, eps: float = 0.0):
    """Deflection factor for single photons; ``(1 + J0(k r))/2`` at ``eps = 0``."""
    return deflect_factor(LightSpec.mono(k), r, ViewCone(eps))


def forward_factor_mono(k: float, r, eps: float = 0.0):
    """Forward factor for single photons; ``(1 - J0(k r))/2`` at ``eps = 0``."""
    return forward_factor(LightSpec.mono(k), r, ViewCone(eps))


# ---------------------------------------------------------------------------
# densities


def _half_axis(L: float, n_grid: int) -> np.ndarray:
    if n_grid < 3 or n_grid % 2 == 0:
        raise InvalidParameter("separation grids need an odd number of points >= 3")
    h = (n_grid - 1) // 2
    return L * np.arange(h + 1) / h


def _mirror(half: np.ndarray) -> np.ndarray:
    return np.concatenate([half[:0:-1], half])


def _smoothed_ramp(u, s):
    if s == 0.0:
        return np.maximum(u, 0.0)
    return u * norm.cdf(u / s) + s * norm.pdf(u / s)


def separation_prior(
    ens: ParticleEnsemble, n_grid: int = DEFAULT_N_SEP, smoothing: float | None = None
) -> SeparationGrid:
    """Relative-separation density before any scattering.

    The triangle ``(L - |r|)/L^2`` of two independent uniform positions is
    convolved with a Gaussian of standard deviation ``smoothing`` (default
    ``d``, the relative-coordinate width of two thermal wave packets) and
    restricted to ``[-L, L]``.
    """
    s = ens.d if smoothing is None else float(smoothing)
    if s < 0:
        raise InvalidParameter("smoothing width must be nonnegative")
    L = ens.length
    x = _half_axis(L, n_grid)
    v = (_smoothed_ramp(x + L, s) - 2.0 * _smoothed_ramp(x, s) + _smoothed_ramp(x - L, s)) / L**2
    return SeparationGrid(np.maximum(_mirror(v), 0.0), -L, L)


def _log_density(log_parts):
    top = np.max(log_parts)
    if not np.isfinite(top):
        raise InvalidRecord("record has zero probability on this grid")
    return np.exp(log_parts - top)


def rubber_cavity_density(
    rec: ScatterRecord, k: float, lower: float, upper: float, n_grid: int = DEFAULT_N_SEP
) -> SeparationGrid:
    """Rubber-cavity density on ``[lower, upper]`` from a flat start."""
    if rec.model != "rubber":
        raise InvalidRecord("record does not come from the rubber-cavity model")
    if not k > 0:
        raise InvalidParameter("photon momentum must be positive")
    grid = SeparationGrid(np.ones(n_grid), lower, upper)
    a = 0.5 * math.sqrt(2.0) * k * grid.coordinates()
    with np.errstate(divide="ignore"):
        logv = np.zeros_like(a)
        # skip absent ports so 0 * log(0) never appears
        if rec.count("R"):
            logv += rec.count("R") * np.log(np.cos(a) ** 2)
        if rec.count("L"):
            logv += rec.count("L") * np.log(np.sin(a) ** 2)
    return SeparationGrid(_log_density(logv), lower, upper).normalize()


def _half_factors(light, ens, view, n_grid):
    x = _half_axis(ens.length, n_grid)
    return _factors(light.k * x, light, view.eps)


def free_particle_density(
    rec: ScatterRecord,
    light: LightSpec,
    ens: ParticleEnsemble,
    view: ViewCone = ViewCone(),
    n_grid: int = DEFAULT_N_SEP,
    smoothing: float | None = None,
) -> SeparationGrid:
    """Free-particle density ``fwd^F * dfl^S * prior`` on ``[-L, L]``.

    Examples
    --------
    >>> g = free_particle_density(ScatterRecord.free(0, 3), LightSpec.mono(5.0),
    ...                           ParticleEnsemble(0.0, 2.0, 0.2), n_grid=201)
    >>> int(np.argmax(g.values)) == 100
    True
    """
    if rec.model != "free":
        raise InvalidRecord("record does not come from the free-particle model")
    fwd, dfl = _half_factors(light, ens, view, n_grid)
    prior = separation_prior(ens, n_grid, smoothing)
    h = (n_grid - 1) // 2
    with np.errstate(divide="ignore"):
        logv = rec.F * np.log(fwd) + rec.S * np.log(dfl) + np.log(prior.values[h:])
    return SeparationGrid(_mirror(_log_density(logv)), -ens.length, ens.length).normalize()


def event_probabilities(
    light: LightSpec, density: SeparationGrid, view: ViewCone = ViewCone()
) -> tuple[float, float]:
    """Probabilities of a forward event and a deflection under ``density``."""
    x = density.coordinates()
    fwd, dfl = _factors(light.k * x, light, view.eps)
    p = density.normalize()
    p_d = float(np.clip(SeparationGrid(p.values * dfl, p.lower, p.upper).integral(), 0.0, 1.0))
    return 1.0 - p_d, p_d


# ---------------------------------------------------------------------------
# sampled runs


@dataclass(frozen=True, eq=False)
class ScatterRun:
    """One sampled run: the record and the density after each packet."""

    record: ScatterRecord
    history: tuple

    @property
    def density(self) -> SeparationGrid:
        return self.history[-1]


def _uniforms(seed, index, n):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    return rng.random(n)


def _trapezoid_weights(n, lower, upper):
    w = np.full(n, (upper - lower) / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _evolve(u, fwd, dfl, prior, tw):
    """Lockstep scattering runs; ``u`` has shape (B, n_packets)."""
    B, n = u.shape
    dens = np.repeat(prior[None, :] / (prior @ tw), B, axis=0)
    fwd_mask = np.zeros((B, n), dtype=bool)
    hist = [dens.copy()]
    for j in range(n):
        p_d = np.clip((dens * dfl) @ tw, 0.0, 1.0)
        is_f = u[:, j] >= p_d
        fwd_mask[:, j] = is_f
        dens = dens * np.where(is_f[:, None], fwd[None, :], dfl[None, :])
        dens /= (dens @ tw)[:, None]
        hist.append(dens.copy())
    return fwd_mask, hist


def sample_scatter_run(
    light: LightSpec,
    ens: ParticleEnsemble,
    view: ViewCone = ViewCone(),
    n_packets: int = 5,
    seed: int = 0,
    index: int = 0,
    n_grid: int = DEFAULT_N_SEP,
    smoothing: float | None = None,
) -> ScatterRun:
    """Sample ``n_packets`` outcomes, renormalizing the density after each.

    Uses the stream keyed by ``(seed, index)``, so the run equals entry
    ``index`` of :func:`sample_scatter_batch`.
    """
    if n_packets < 0:
        raise InvalidParameter("packet count must be nonnegative")
    fwd, dfl, prior = _full_factors(light, ens, view, n_grid, smoothing)
    tw = _trapezoid_weights(n_grid, -ens.length, ens.length)
    mask, hist = _evolve(_uniforms(seed, index, n_packets)[None, :], fwd, dfl, prior, tw)
    rec = ScatterRecord("free", tuple("F" if f else "S" for f in mask[0]))
    L = ens.length
    return ScatterRun(rec, tuple(SeparationGrid(h[0], -L, L) for h in hist))


def _full_factors(light, ens, view, n_grid, smoothing):
    fwd, dfl = _half_factors(light, ens, view, n_grid)
    prior = separation_prior(ens, n_grid, smoothing).values
    return _mirror(fwd), _mirror(dfl), prior


def sample_scatter_batch(
    light: LightSpec,
    ens: ParticleEnsemble,
    view: ViewCone = ViewCone(),
    n_packets: int = 5,
    n_runs: int = 1000,
    seed: int = 0,
    n_grid: int = DEFAULT_N_SEP,
    smoothing: float | None = None,
    block: int = 500,
    threads: int | None = None,
) -> list[ScatterRecord]:
    """Records of many independent runs, merged in run order."""
    if n_packets < 0 or n_runs < 1:
        raise InvalidParameter("need n_packets >= 0 and n_runs >= 1")
    fwd, dfl, prior = _full_factors(light, ens, view, n_grid, smoothing)
    tw = _trapezoid_weights(n_grid, -ens.length, ens.length)
    jobs = [range(s, min(s + block, n_runs)) for s in range(0, n_runs, block)]

    def work(idx):
        u = np.stack([_uniforms(seed, i, n_packets) for i in idx]).reshape(len(idx), n_packets)
        mask, _ = _evolve(u, fwd, dfl, prior, tw)
        return [ScatterRecord("free", tuple("F" if f else "S" for f in row)) for row in mask]

    threads = threads or _thread_count()
    if threads == 1:
        parts = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, jobs))
    return [r for part in parts for r in part]
