"""Relative-phase localization for two interfering field modes.

Two modes leak photons onto a balanced beam splitter whose outputs are
counted. A count behind the sum port multiplies the relative-phase
density by ``1 + R cos(D - tau)``, one behind the difference port by
``1 - R cos(D - tau)``, where ``D`` is the relative phase, ``tau`` an
optional phase offset applied before that count and ``R`` the amplitude
asymmetry of the two modes (``R = 1`` for equal intensities). For equal
intensities these factors are ``2 cos^2((D - tau)/2)`` and
``2 sin^2((D - tau)/2)``.

The module provides the closed-form probabilities and visibilities for
Fock, Poissonian, thermal and unequal Poissonian inputs, a Monte Carlo
trajectory engine, and several consistency identities.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np
from scipy.special import gammaln, roots_legendre
from scipy.stats import poisson

from .errors import InvalidParameter, InvalidRecord, NumericalFailure, UnsupportedSpec
from .phase_dist import DEFAULT_N_GRID, TWO_PI, PhaseGrid

__all__ = [
    "AsymmetryRatio",
    "InitialState",
    "OutcomeRecord",
    "Trajectory",
    "TransitivityResult",
    "expected_visibility_curve",
    "localizing_density",
    "mixing_washout",
    "p_single_valued",
    "plr_asymmetric",
    "plr_fock_approx",
    "plr_thermal",
    "record_probability",
    "run_trajectories",
    "run_trajectory",
    "split_visibility",
    "tau_sweep_visibility",
    "thermal_density",
    "three_mode_transitivity",
    "visibility_asymmetric",
    "visibility_closed_form",
]

KINDS = ("fock", "poissonian", "thermal", "asym_poissonian")


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class InitialState:
    """Initial two-mode state.

    Parameters
    ----------
    kind : {'fock', 'poissonian', 'thermal', 'asym_poissonian'}
    n : float
        Photon number ``N`` (Fock, integer) or mean photon number of the
        first mode.
    m : float, optional
        Mean photon number of the second mode; equals ``n`` except for
        ``asym_poissonian``.
    """

    kind: str
    n: float
    m: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameter(f"unknown state kind {self.kind!r}")
        m = self.n if self.m is None else self.m
        if self.kind == "fock":
            if self.n < 0 or int(self.n) != self.n:
                raise InvalidParameter("Fock photon number must be a nonnegative integer")
            if m != self.n:
                raise InvalidParameter("only equal Fock inputs are supported")
        elif not (self.n > 0 and m > 0):
            raise InvalidParameter("mean photon numbers must be positive")
        if self.kind != "asym_poissonian" and m != self.n:
            raise InvalidParameter(f"{self.kind} inputs have equal intensities")
        object.__setattr__(self, "m", float(m))
        object.__setattr__(self, "n", float(self.n))

    @classmethod
    def fock(cls, N: int) -> "InitialState":
        return cls("fock", N)

    @classmethod
    def poissonian(cls, nbar: float) -> "InitialState":
        return cls("poissonian", nbar)

    @classmethod
    def thermal(cls, nbar: float) -> "InitialState":
        return cls("thermal", nbar)

    @classmethod
    def asym_poissonian(cls, nbar: float, mbar: float) -> "InitialState":
        return cls("asym_poissonian", nbar, mbar)

    @property
    def total(self) -> float:
        return self.n + self.m

    @property
    def asymmetry(self) -> float:
        return AsymmetryRatio.from_intensities(self.n, self.m).R


@dataclass(frozen=True)
class AsymmetryRatio:
    """Amplitude asymmetry ``R = 2 sqrt(N M) / (N + M)`` in (0, 1]."""

    R: float

    def __post_init__(self):
        if not 0.0 < self.R <= 1.0:
            raise InvalidParameter(f"R must lie in (0, 1], got {self.R}")

    @classmethod
    def from_intensities(cls, nbar: float, mbar: float) -> "AsymmetryRatio":
        if not (nbar > 0 and mbar > 0):
            raise InvalidParameter("intensities must be positive")
        return cls(min(1.0, 2.0 * math.sqrt(nbar * mbar) / (nbar + mbar)))


@dataclass(frozen=True)
class OutcomeRecord:
    """Counts behind the two output ports, optionally with per-count offsets.

    Parameters
    ----------
    l, r : int
        Counts behind the difference and sum ports.
    events : tuple of (str, float), optional
        Ordered ``('L' | 'R', tau)`` pairs. When given, its length must be
        ``l + r`` and the labels must match the counts. When empty every
        offset is zero.
    """

    l: int
    r: int
    events: tuple = ()

    def __post_init__(self):
        if self.l < 0 or self.r < 0:
            raise InvalidRecord("counts must be nonnegative")
        ev = tuple((str(s), float(t)) for s, t in self.events)
        if ev:
            if len(ev) != self.l + self.r:
                raise InvalidRecord("event list length differs from l + r")
            labels = [s for s, _ in ev]
            if any(s not in ("L", "R") for s in labels):
                raise InvalidRecord("event labels must be 'L' or 'R'")
            if labels.count("L") != self.l:
                raise InvalidRecord("event labels disagree with the counts")
        object.__setattr__(self, "events", ev)

    @classmethod
    def from_events(cls, events: Sequence) -> "OutcomeRecord":
        ev = tuple((str(s), float(t)) for s, t in events)
        l = sum(1 for s, _ in ev if s == "L")
        return cls(l, len(ev) - l, ev)

    @property
    def total(self) -> int:
        return self.l + self.r

    def signs_and_taus(self):
        """Arrays of port signs (+1 sum, -1 difference) and offsets."""
        if self.events:
            s = np.array([1.0 if e[0] == "R" else -1.0 for e in self.events])
            t = np.array([e[1] for e in self.events])
        else:
            s = np.concatenate([np.ones(self.r), -np.ones(self.l)])
            t = np.zeros(self.total)
        return s, t

    def swapped(self) -> "OutcomeRecord":
        """Exchange port labels and shift every offset by pi."""
        s, t = self.signs_and_taus()
        ev = [("L" if si > 0 else "R", ti + np.pi) for si, ti in zip(s, t)]
        return OutcomeRecord.from_events(ev)


# ---------------------------------------------------------------------------
# densities


def _log_factor_sum(theta, q, signs, taus):
    """Sum over events of ``log(1 + s q cos(theta - tau))``; broadcasts over q."""
    q = np.asarray(q, dtype=float)[..., None]
    out = np.zeros(np.broadcast(q, theta).shape)
    if signs.size and np.all(taus == 0.0):
        c = np.cos(theta)
        n_plus = int(np.sum(signs > 0))
        n_minus = signs.size - n_plus
        with np.errstate(divide="ignore"):
            if n_plus:
                out = out + n_plus * np.log1p(q * c)
            if n_minus:
                out = out + n_minus * np.log1p(-q * c)
        return out
    with np.errstate(divide="ignore"):
        for s, t in zip(signs, taus):
            out = out + np.log1p(s * q * np.cos(theta - t))
    return out


def localizing_density(
    rec: OutcomeRecord, state: InitialState, n_grid: int = DEFAULT_N_GRID
) -> PhaseGrid:
    """Normalized relative-phase density after a detection record.

    Thermal inputs are delegated to :func:`thermal_density`.

    Examples
    --------
    >>> g = localizing_density(OutcomeRecord(0, 0), InitialState.poissonian(5.0), 8)
    >>> bool(np.allclose(g.values, 1 / (2 * np.pi)))
    True
    """
    if state.kind == "thermal":
        return thermal_density(rec.l, rec.r, n_grid=n_grid, record=rec)
    R = state.asymmetry
    theta = TWO_PI * np.arange(n_grid) / n_grid
    signs, taus = rec.signs_and_taus()
    logk = _log_factor_sum(theta, R, signs, taus)
    top = np.max(logk)
    if not np.isfinite(top):
        raise InvalidRecord("record has zero probability for this state")
    return PhaseGrid(np.exp(logk - top)).normalize()


def _thermal_nodes(order: int):
    """Gauss-Legendre nodes for the asymmetry mixture of a thermal pair.

    Writing the two intensities as ``s u`` and ``s (1 - u)`` and then
    ``u = (1 - cos psi)/2`` turns the amplitude asymmetry into
    ``q = sin psi``, with measure ``sin psi dpsi`` on [0, pi/2] after
    folding the symmetric half.
    """
    x, w = roots_legendre(order)
    psi = 0.25 * np.pi * (x + 1.0)
    return np.sin(psi), 0.25 * np.pi * w * np.sin(psi)


def _thermal_values(theta, signs, taus, order, weighting):
    q, w = _thermal_nodes(order)
    logk = _log_factor_sum(theta, q, signs, taus)  # (order, n)
    logk -= np.max(logk)
    k = np.exp(logk)
    if weighting == "uniform":
        return w @ k
    locked = (w * 0.5 * q) @ k
    spread = np.sum(w * 0.5 * (1.0 - q) * k.mean(axis=1))
    return locked + spread


def thermal_density(
    l: int,
    r: int,
    n_grid: int = DEFAULT_N_GRID,
    weighting: str = "intensity",
    record: OutcomeRecord | None = None,
    order: int | None = None,
) -> PhaseGrid:
    """Relative-phase density for two independent thermal modes.

    A thermal pair is a Gaussian mixture of coherent-state pairs. The
    radial (total-intensity) integral of the mixture is done exactly,
    leaving a one-dimensional integral over the amplitude asymmetry ``q``
    that is evaluated by Gauss-Legendre quadrature.

    Parameters
    ----------
    l, r : int
        Port counts.
    n_grid : int
        Grid size.
    weighting : {'intensity', 'uniform'}
        ``'uniform'`` averages ``|C(D)|^2`` over the mixture with equal
        weight per amplitude pair. ``'intensity'`` (default) weights each
        pair by its contribution to an interference signal: the locked
        part ``sqrt(n m)`` sits at the pair's phase and the remainder
        ``(n + m)/2 - sqrt(n m)`` is spread uniformly. Its first Fourier
        coefficient is then the beam-splitter visibility.
    record : OutcomeRecord, optional
        Supplies per-count offsets; must agree with ``l`` and ``r``.
    order : int, optional
        Quadrature order; default grows with ``l + r``.

    Raises
    ------
    NumericalFailure
        If doubling the quadrature order changes the density by more
        than 1e-11 relative.
    """
    if weighting not in ("intensity", "uniform"):
        raise InvalidParameter(f"unknown weighting {weighting!r}")
    rec = OutcomeRecord(l, r) if record is None else record
    if (rec.l, rec.r) != (l, r):
        raise InvalidRecord("record counts disagree with (l, r)")
    theta = TWO_PI * np.arange(n_grid) / n_grid
    signs, taus = rec.signs_and_taus()
    order = order or 48 + (l + r)
    lo = _thermal_values(theta, signs, taus, order, weighting)
    hi = _thermal_values(theta, signs, taus, 2 * order, weighting)
    lo /= lo.sum()
    hi /= hi.sum()
    err = float(np.max(np.abs(hi - lo)) / np.max(hi))
    if err > 1e-11:
        raise NumericalFailure("thermal phase quadrature did not converge", err)
    return PhaseGrid(hi).normalize()


# ---------------------------------------------------------------------------
# probabilities


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise InvalidParameter(f"leakage fraction must lie in (0, 1), got {eps}")


def _log_beta_split(l, r):
    """log of D!/(l! r!) Gamma(r+1/2) Gamma(l+1/2) / (pi Gamma(D+1))."""
    l = np.asarray(l, dtype=float)
    r = np.asarray(r, dtype=float)
    return (
        gammaln(r + 0.5) + gammaln(l + 0.5) - gammaln(l + 1.0) - gammaln(r + 1.0) - math.log(math.pi)
    )


def plr_fock_approx(N: float, eps: float, l, r):
    """Approximate record probability for ``|N>|N>`` (exact for Poissonian).

    A Poissonian law for the total count ``D = l + r`` with mean
    ``2 eps N`` times the split weight
    ``D!/(l! r!) Gamma(r+1/2) Gamma(l+1/2) / (pi Gamma(D+1))``.

    Examples
    --------
    >>> round(float(plr_fock_approx(1.0, 0.5, 0, 1)), 12) == round(math.exp(-1) / 2, 12)
    True
    """
    _check_eps(eps)
    if N <= 0:
        raise InvalidParameter("photon number must be positive")
    l = np.asarray(l)
    r = np.asarray(r)
    if np.any(l < 0) or np.any(r < 0):
        raise InvalidParameter("counts must be nonnegative")
    D = l + r
    x = 2.0 * eps * N
    out = np.exp(poisson.logpmf(D, x) + _log_beta_split(l, r))
    return float(out) if out.ndim == 0 else out


def plr_thermal(nbar: float, eps: float, l, r):
    """Record probability for two thermal modes of mean ``nbar``."""
    _check_eps(eps)
    if nbar <= 0:
        raise InvalidParameter("mean photon number must be positive")
    l = np.asarray(l)
    r = np.asarray(r)
    if np.any(l < 0) or np.any(r < 0):
        raise InvalidParameter("counts must be nonnegative")
    x = nbar * eps
    D = l + r
    out = np.exp(D * math.log(x) - (D + 2) * math.log1p(x))
    return float(out) if out.ndim == 0 else out


def _asym_split_block(D: int, R: float) -> np.ndarray:
    """Split probabilities ``P(l | D)`` for an asymmetry ``R``, exact.

    ``C(D, l) 2^-D`` times the angular average of
    ``(1 + R cos)^r (1 - R cos)^l``, a trigonometric polynomial of degree
    ``D`` integrated exactly by an equispaced rule with more than ``D``
    points.
    """
    n = 2 * D + 8
    c = np.cos(TWO_PI * np.arange(n) / n)
    l = np.arange(D + 1)[:, None]
    r = D - l
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.log1p(R * c)
        lm = np.log1p(-R * c)
        lg = np.where(r > 0, r * lp, 0.0) + np.where(l > 0, l * lm, 0.0)
    avg = np.mean(np.exp(lg), axis=1)
    lv = np.arange(D + 1)
    logc = gammaln(D + 1.0) - gammaln(lv + 1.0) - gammaln(D - lv + 1.0) - D * math.log(2.0)
    return np.exp(logc) * avg


def _legendre_table(z, D: int) -> list:
    """``P_0(z) .. P_D(z)`` by the three-term recurrence (works with mpmath)."""
    leg = [z**0, z]
    for n in range(1, D):
        leg.append(((2 * n + 1) * z * leg[n] - n * leg[n - 1]) / (n + 1))
    return leg[: D + 1]


def _legendre_split(l: int, r: int, R: float) -> float:
    """``P(l | D)`` from the finite Legendre sum, in extended precision.

    The alternating sum cancels heavily, so the working precision is set
    from the ratio of the largest term to a float estimate of the result.
    """
    D = l + r
    est = float(_asym_split_block(D, R)[l])
    s_f = math.sqrt((1.0 - R) * (1.0 + R))
    z_f = 1.0 / s_f
    # |P_n(z)| <= (z + sqrt(z^2 - 1))^n for z >= 1
    log_growth = math.log(z_f + math.sqrt(max(z_f * z_f - 1.0, 0.0)))
    log_terms = max(
        math.lgamma(l + 1) - math.lgamma(j + 1) - math.lgamma(l - j + 1)
        + j * math.log(2.0 / s_f) + (D - j) * log_growth
        for j in range(l + 1)
    )
    log_pref = (
        math.lgamma(D + 1) - math.lgamma(l + 1) - math.lgamma(r + 1) + D * math.log(s_f / 2.0)
    )
    lost = (log_terms + log_pref - math.log(max(est, 1e-300))) / math.log(10.0)
    dps = int(30 + max(lost, 0.0) + D * 0.02)
    with mpmath.workdps(dps):
        Rm = mpmath.mpf(R)
        s = mpmath.sqrt((1 - Rm) * (1 + Rm))
        z = 1 / s
        leg = _legendre_table(z, D)
        t = -2 / s
        total = mpmath.mpf(0)
        pw = mpmath.mpf(1)
        for j in range(l + 1):
            total += math.comb(l, j) * pw * leg[D - j]
            pw *= t
        val = math.comb(D, l) * (s / 2) ** D * (-1) ** l * total
        return float(val)


def plr_asymmetric(nbar: float, mbar: float, eps: float, l: int, r: int) -> float:
    """Record probability for two Poissonian modes of unequal intensity.

    Evaluates the closed form

        Pi_D(eps (N + M)) C(D, l) (s/2)^D (-1)^l
            sum_j C(l, j) (-2/s)^j P_{D-j}(1/s),  s = sqrt(1 - R^2),

    with Legendre polynomials from the three-term recurrence in extended
    precision. Equal intensities (``R = 1``) use the symmetric limit.
    """
    _check_eps(eps)
    if l < 0 or r < 0:
        raise InvalidParameter("counts must be nonnegative")
    R = AsymmetryRatio.from_intensities(nbar, mbar).R
    D = l + r
    pois = float(poisson.pmf(D, eps * (nbar + mbar)))
    if R == 1.0:
        return pois * float(np.exp(_log_beta_split(l, r)))
    if D == 0:
        return pois
    return pois * _legendre_split(l, r, R)


# ---------------------------------------------------------------------------
# visibilities


def visibility_closed_form(kind: str, l: int, r: int) -> float:
    """Expected interference visibility after an ``(l, r)`` record.

    ``|r - l|/(r + l + 1)`` for Poissonian (and, approximately, Fock)
    inputs, ``|r - l|/(r + l + 2)`` for thermal inputs.
    """
    if l < 0 or r < 0:
        raise InvalidParameter("counts must be nonnegative")
    if kind in ("poissonian", "fock"):
        return abs(r - l) / (r + l + 1.0)
    if kind == "thermal":
        return abs(r - l) / (r + l + 2.0)
    raise InvalidParameter(f"no closed form for kind {kind!r}")


def split_visibility(l: int, r: int) -> float:
    """Visibility when the two peaks of a bimodal density are separated.

    ``[(r - l)^2 + 4 sqrt(r l) Gamma(r+1) Gamma(l+1) /
    (Gamma(r+1/2) Gamma(l+1/2))] / ((r + l)(r + l + 1))``.
    """
    if l < 0 or r < 0:
        raise InvalidParameter("counts must be nonnegative")
    D = l + r
    if D == 0:
        return 0.0
    cross = 0.0
    if l > 0 and r > 0:
        cross = 4.0 * math.sqrt(r * l) * math.exp(
            math.lgamma(r + 1) + math.lgamma(l + 1) - math.lgamma(r + 0.5) - math.lgamma(l + 0.5)
        )
    return ((r - l) ** 2 + cross) / (D * (D + 1.0))


def visibility_asymmetric(nbar: float, mbar: float, eps: float, l: int, r: int) -> float:
    """Rescaled visibility ``(1/R)|A - B|/(A + B)`` for unequal intensities.

    ``A = (r+1) P_{l,r+1}`` and ``B = (l+1) P_{l+1,r}``.
    """
    R = AsymmetryRatio.from_intensities(nbar, mbar).R
    a = (r + 1) * plr_asymmetric(nbar, mbar, eps, l, r + 1)
    b = (l + 1) * plr_asymmetric(nbar, mbar, eps, l + 1, r)
    if a + b == 0.0:
        return 0.0
    return abs(a - b) / (a + b) / R


def tau_sweep_visibility(
    g: PhaseGrid, nbar: float = 1.0, mbar: float = 1.0, n_tau: int = 720
) -> float:
    """Visibility from an explicit sweep of a phase shifter.

    The intensity behind one output port after shifting the second mode
    by ``tau`` is ``N + M + 2 sqrt(N M) cos(D + tau)`` averaged over the
    density; the contrast of its extremes over a fine ``tau`` grid is
    returned. For equal intensities this equals the spectral visibility.
    """
    p = g.normalize()
    th = p.coordinates()
    tau = TWO_PI * np.arange(n_tau) / n_tau
    cos_mean = p.spacing * (np.cos(th[None, :] + tau[:, None]) @ p.values)
    I = nbar + mbar + 2.0 * math.sqrt(nbar * mbar) * cos_mean
    return float((I.max() - I.min()) / (I.max() + I.min()))


def _tail_dmax(pmf_tail, tail: float) -> int:
    D = 0
    while pmf_tail(D) >= tail:
        D += 1
    return D


def expected_visibility_curve(
    kind: str,
    sweep: Sequence[float],
    restrict_single_valued: bool = False,
    R: float = 1.0,
    tail: float = 1e-9,
) -> np.ndarray:
    """Average visibility over records as a function of ``eps (N + M)``.

    Parameters
    ----------
    kind : {'poissonian', 'thermal', 'asym_poissonian'}
    sweep : sequence of float
        Values of ``x = eps (N + M)``, the mean number of counts for
        Poissonian inputs.
    restrict_single_valued : bool
        Keep only records with ``|l - r| >= R (l + r)``, whose densities
        have a single peak, and renormalize by their total probability.
    R : float
        Amplitude asymmetry for ``asym_poissonian``.
    tail : float
        Neglected probability mass in the total-count sum.
    """
    if kind not in ("poissonian", "thermal", "asym_poissonian"):
        raise InvalidParameter(f"unsupported kind {kind!r}")
    if kind != "asym_poissonian":
        R = 1.0
    R = AsymmetryRatio(R).R
    out = []
    for x in sweep:
        if x <= 0:
            out.append(0.0)
            continue
        if kind == "thermal":
            xt = 0.5 * x
            # total count D has weight (D+1) xt^D / (1+xt)^(D+2)
            rho = xt / (1.0 + xt)
            dmax = _tail_dmax(lambda D: (D + 2) * rho ** (D + 1), tail)
        else:
            dmax = int(poisson.isf(tail, x)) + 2
        num = den = 0.0
        nxt = None
        for D in range(dmax + 1):
            l = np.arange(D + 1)
            r = D - l
            if kind == "thermal":
                xt = 0.5 * x
                P = np.full(D + 1, math.exp(D * math.log(xt) - (D + 2) * math.log1p(xt)))
                V = np.abs(r - l) / (r + l + 2.0)
            elif kind == "poissonian":
                P = np.exp(poisson.logpmf(D, x) + _log_beta_split(l, r))
                V = np.abs(r - l) / (r + l + 1.0)
            else:
                cur = nxt if nxt is not None else float(poisson.pmf(D, x)) * _asym_split_block(D, R)
                nxt = float(poisson.pmf(D + 1, x)) * _asym_split_block(D + 1, R)
                P = cur
                a = (r + 1) * nxt[l]
                b = (l + 1) * nxt[l + 1]
                with np.errstate(invalid="ignore", divide="ignore"):
                    V = np.where(a + b > 0, np.abs(a - b) / (a + b), 0.0) / R
            if restrict_single_valued:
                keep = np.abs(l - r) >= R * D - 1e-12
                P = np.where(keep, P, 0.0)
            num += float(np.sum(P * V))
            den += float(np.sum(P))
        out.append(num / den if den > 0 else 0.0)
    return np.asarray(out)


def p_single_valued(R: float, D: int) -> float:
    """Probability that a ``D``-count record satisfies ``|l - r| >= R D``.

    Examples
    --------
    >>> round(p_single_valued(1.0, 4), 4)
    0.5469
    """
    R = AsymmetryRatio(R).R if R > 0 else 0.0
    if D < 0:
        raise InvalidParameter("D must be nonnegative")
    l = np.arange(D + 1)
    keep = np.abs(D - 2 * l) >= R * D - 1e-12
    return float(np.sum(_asym_split_block(D, R)[keep]))


# ---------------------------------------------------------------------------
# trajectories


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("RELLOC_THREADS", "1")))
    except ValueError:
        raise InvalidParameter("RELLOC_THREADS must be an integer") from None


def _mixture(state: InitialState, order: int = 32):
    """Asymmetry nodes and weights describing a state's phase-free mixture."""
    if state.kind == "thermal":
        return _thermal_nodes(order)
    return np.array([state.asymmetry]), np.array([1.0])


def _draw_total(rng, state: InitialState, eps_total: float) -> int:
    if state.kind == "fock":
        return int(rng.binomial(2 * int(state.n), eps_total))
    if state.kind == "thermal":
        # two independent geometric laws with mean eps * nbar each
        p = 1.0 / (1.0 + eps_total * state.n)
        return int(rng.negative_binomial(2, p))
    return int(rng.poisson(eps_total * state.total))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One simulated detection run.

    Attributes
    ----------
    record : OutcomeRecord
        Ordered counts with their phase offsets.
    density : PhaseGrid
        Relative-phase density after the run.
    visibility : ndarray
        Spectral visibility after each recorded count.
    lost : int
        Photons that leaked but were not detected.
    history : list of PhaseGrid
        Density after each count (only when requested).
    """

    record: OutcomeRecord
    density: PhaseGrid
    visibility: np.ndarray
    lost: int
    history: list = field(default_factory=list)


def _draws(seed: int, index: int, state, eps_total, eta, random_tau):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    n_emit = _draw_total(rng, state, eps_total)
    u = rng.random((n_emit, 3))
    detected = u[:, 1] < eta
    tau = TWO_PI * u[:, 2] if random_tau else np.zeros(n_emit)
    return u[detected, 0], tau[detected], int(n_emit - detected.sum())


# Densities inside trajectories are kept as half spectra: c[..., k] is the
# k-th Fourier coefficient (k >= 0) of the unnormalized density of one
# asymmetry node, scaled so c[..., 0] = 1, with the scale kept in logw.


def _weights(w, logw):
    return w * np.exp(logw - np.max(logw, axis=-1, keepdims=True))


def _p_plus(c, logw, q, w, tau):
    """Probability that the next count lands behind the sum port."""
    e = np.exp(1j * tau)[..., None]
    wt = _weights(w, logw)
    c0 = np.real(c[..., 0])
    return 0.5 * np.sum(wt * (c0 + q * np.real(e * c[..., 1])), axis=-1) / np.sum(
        wt * c0, axis=-1
    )


def _apply_count(c, logw, q, s, tau, i):
    """Multiply every node by ``1 + s q cos(D - tau)`` (count number ``i``)."""
    hi = i + 2
    band = c[..., :hi]
    lower = np.empty_like(band)
    lower[..., 1:] = band[..., :-1]
    lower[..., 0] = np.conj(band[..., 1])
    upper = np.zeros_like(band)
    upper[..., :-1] = band[..., 1:]
    e = np.exp(1j * tau)[..., None, None]
    new = band + (0.5 * s[..., None, None] * q[:, None]) * (np.conj(e) * lower + e * upper)
    norm = new[..., 0].real.copy()
    new /= norm[..., None]
    return new, logw + np.log(norm)


def _mixture_visibility(kind, q, w, c, logw):
    wt = _weights(w, logw)
    c0 = np.real(c[..., 0])
    c1 = c[..., 1]
    if kind == "thermal":
        num = np.abs(np.sum(wt * 0.5 * q * c1, axis=-1))
        den = np.sum(wt * 0.5 * c0, axis=-1)
    else:
        num = np.abs(np.sum(wt * c1, axis=-1))
        den = np.sum(wt * c0, axis=-1)
    return num / den


def _final_density(kind, q, w, c, logw, n_grid):
    """Observer density of one run from its per-node half spectra."""
    if c.shape[-1] > n_grid // 2:
        raise InvalidParameter("grid too coarse for the record length")
    vals = n_grid * np.fft.irfft(c, n_grid, axis=-1)  # (J, n)
    wt = _weights(w, logw)
    if kind == "thermal":
        g = (wt * 0.5 * q) @ vals + np.sum(wt * 0.5 * (1.0 - q) * np.real(c[:, 0]))
    else:
        g = wt @ vals
    return PhaseGrid(np.maximum(g, 0.0)).normalize()


def _evolve_block(state, q, w, ports, taus, n, keep=None, n_grid=DEFAULT_N_GRID):
    """Advance a block of runs in lockstep.

    ``ports`` and ``taus`` have shape (B, K) and ``n`` holds the number of
    counts of each run. Runs never interact, so the result for a run does
    not depend on the block it is placed in.
    """
    B, K = ports.shape
    J = q.size
    c = np.zeros((B, J, K + 2), dtype=complex)
    c[..., 0] = 1.0
    logw = np.zeros((B, J))
    signs = np.zeros((B, K))
    vis = np.zeros((B, K))
    for i in range(K):
        active = n > i
        if not active.any():
            break
        p = _p_plus(c, logw, q, w, taus[:, i])
        s = np.where(ports[:, i] < p, 1.0, -1.0)
        band, lw = _apply_count(c, logw, q, s, taus[:, i], i)
        c[active, :, : i + 2] = band[active]
        logw[active] = lw[active]
        signs[:, i] = np.where(active, s, 0.0)
        vis[:, i] = _mixture_visibility(state.kind, q, w, c, logw)
        if keep is not None:
            keep.append(_final_density(state.kind, q, w, c[0, :, : i + 2], logw[0], n_grid))
    return signs, vis, c, logw


def run_trajectory(
    state: InitialState,
    eps_total: float,
    random_tau: bool = False,
    eta: float = 1.0,
    seed: int = 0,
    index: int = 0,
    n_grid: int = DEFAULT_N_GRID,
    keep_history: bool = False,
) -> Trajectory:
    """Simulate one run of the interference procedure.

    The number of photons leaking from the two modes over the whole run is
    drawn from its exact law for a total leakage ``eps_total`` (binomial
    for Fock, Poissonian for coherent mixtures, a sum of two geometric
    laws for thermal inputs). Each photon is detected with probability
    ``eta``; a detected photon picks its port with the probability implied
    by the current density and then updates it. Undetected photons leave
    the density unchanged.

    Randomness comes only from a stream keyed by ``(seed, index)``.
    """
    _check_run(eps_total, eta)
    q, w = _mixture(state)
    ports, taus, lost = _draws(seed, index, state, eps_total, eta, random_tau)
    hist = [] if keep_history else None
    signs, vis, c, logw = _evolve_block(
        state, q, w, ports[None, :], taus[None, :], np.array([ports.size]), hist, n_grid
    )
    ev = [("R" if x > 0 else "L", t) for x, t in zip(signs[0], taus.tolist())]
    rec = OutcomeRecord.from_events(ev)
    dens = _final_density(state.kind, q, w, c[0], logw[0], n_grid)
    return Trajectory(rec, dens, vis[0], lost, hist or [])


def _check_run(eps_total, eta):
    if not 0.0 < eta <= 1.0:
        raise InvalidParameter(f"detector efficiency must lie in (0, 1], got {eta}")
    if not 0.0 <= eps_total < 1.0:
        raise InvalidParameter("total leakage must lie in [0, 1)")


def _batch_records(state, eps_total, random_tau, eta, seed, indices):
    """Records for a block of runs advanced in lockstep (no grids)."""
    q, w = _mixture(state)
    draws = [_draws(seed, i, state, eps_total, eta, random_tau) for i in indices]
    n = np.array([d[0].size for d in draws])
    K = int(n.max(initial=0))
    ports = np.ones((len(draws), K))
    taus = np.zeros((len(draws), K))
    for b, (u, t, _) in enumerate(draws):
        ports[b, : u.size] = u
        taus[b, : t.size] = t
    signs, _, _, _ = _evolve_block(state, q, w, ports, taus, n)
    out = []
    for b, (u, t, lost) in enumerate(draws):
        ev = tuple(("R" if signs[b, i] > 0 else "L", float(t[i])) for i in range(n[b]))
        l = sum(1 for e in ev if e[0] == "L")
        out.append((OutcomeRecord(l, len(ev) - l, ev), lost))
    return out


def run_trajectories(
    state: InitialState,
    eps_total: float,
    n_runs: int,
    seed: int,
    random_tau: bool = False,
    eta: float = 1.0,
    block: int = 2000,
    threads: int | None = None,
):
    """Records of many independent runs, identical for any thread count.

    Each run draws from its own ``(seed, index)`` stream and is advanced
    independently, so grouping runs into blocks or threads never changes
    any record. Blocks are merged in run order.

    Returns
    -------
    list of (OutcomeRecord, int)
        Record and number of undetected photons for each run.
    """
    _check_run(eps_total, eta)
    starts = list(range(0, n_runs, block))
    jobs = [range(s, min(s + block, n_runs)) for s in starts]
    threads = threads or _thread_count()

    def work(idx):
        return _batch_records(state, eps_total, random_tau, eta, seed, idx)

    if threads == 1:
        parts = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, jobs))
    return [rec for part in parts for rec in part]


def record_probability(rec: OutcomeRecord, state: InitialState, eps: float) -> float:
    """Probability of an ordered record with offsets (Poissonian mixtures).

    The total count is Poissonian with mean ``eps (N + M)``; the ordered
    port sequence has probability ``2^-D`` times the angular average of
    the product of port factors.
    """
    if state.kind not in ("poissonian", "asym_poissonian"):
        raise UnsupportedSpec("ordered-record probabilities need a Poissonian input")
    D = rec.total
    n = 2 * D + 8
    theta = TWO_PI * np.arange(n) / n
    s, t = rec.signs_and_taus()
    k = np.exp(_log_factor_sum(theta, state.asymmetry, s, t))
    return float(poisson.pmf(D, eps * state.total) * np.mean(k) / 2.0**D)


# ---------------------------------------------------------------------------
# identities


@dataclass(frozen=True, eq=False)
class TransitivityResult:
    """Relative phases of three modes after two independent localizations.

    Attributes
    ----------
    delta12, delta23, delta13 : float
        Peak locations of the three pairwise relative-phase densities.
    density13 : PhaseGrid
        Density of the (1, 3) relative phase.
    record_probability, record_probability_unlocked : float
        Probability of the (2, 3) record with the prior (1, 2) lock and
        with a uniform (1, 2) prior.
    """

    delta12: float
    delta23: float
    delta13: float
    density13: PhaseGrid
    record_probability: float
    record_probability_unlocked: float


def three_mode_transitivity(
    delta0: float,
    rec: OutcomeRecord,
    state: InitialState | None = None,
    eps: float = 0.1,
    n_grid: int = 1024,
) -> TransitivityResult:
    """Combine a locked (1, 2) phase with a record taken on modes (2, 3).

    The joint density over ``(D12, D23)`` is the product of a point mass
    at ``delta0`` and the two-mode localizing density. ``D13 = D12 + D23``
    is obtained by a circular convolution, i.e. by marginalizing mode 2.
    """
    state = state or InitialState.poissonian(10.0)
    h = TWO_PI / n_grid
    prior = np.zeros(n_grid)
    i0 = int(round(np.mod(delta0, TWO_PI) / h)) % n_grid
    prior[i0] = 1.0 / h
    g23 = localizing_density(rec, state, n_grid)
    g13 = np.real(np.fft.ifft(np.fft.fft(prior) * np.fft.fft(g23.values))) * h
    g13 = PhaseGrid(np.maximum(g13, 0.0)).normalize()
    th = h * np.arange(n_grid)

    # record probability with the (1,2) lock and without it, from the
    # joint over (D12, D13): the (2,3) record depends on D13 - D12 only
    s, t = rec.signs_and_taus()
    k = np.exp(_log_factor_sum(th, state.asymmetry, s, t))  # K(D23)
    D = rec.total
    pois = float(poisson.pmf(D, eps * state.total)) / 2.0**D
    # sum over D13 of K(D13 - D12), for every D12
    kk = np.array([np.mean(np.roll(k, j)) for j in range(n_grid)])
    locked = pois * h * float(np.sum(prior * kk))
    uniform = pois * h * float(np.sum(np.full(n_grid, 1.0 / TWO_PI) * kk))
    return TransitivityResult(
        float(th[i0]),
        float(th[int(np.argmax(g23.values))]),
        float(th[int(np.argmax(g13.values))]),
        g13,
        locked,
        uniform,
    )


def mixing_washout(
    state: InitialState, eps: float, n_grid: int = DEFAULT_N_GRID, tail: float = 1e-10
) -> PhaseGrid:
    """Probability-weighted sum of the densities of all records.

    Records are summed in blocks of fixed total count until the neglected
    mass falls below ``tail``; that mass is added back as a uniform
    density. Completeness of the measurement makes the result uniform.
    """
    _check_eps(eps)
    acc = np.zeros(n_grid)
    used = 0.0
    D = 0
    while True:
        if state.kind == "thermal":
            x = eps * state.n
            block_mass = (D + 1) * x**D / (1.0 + x) ** (D + 2)
        else:
            block_mass = float(poisson.pmf(D, eps * state.total))
        if state.kind == "thermal":
            P = np.array([plr_thermal(state.n, eps, l, D - l) for l in range(D + 1)])
        elif state.kind == "asym_poissonian":
            P = block_mass * _asym_split_block(D, state.asymmetry)
        else:
            P = plr_fock_approx(state.n, eps, np.arange(D + 1), D - np.arange(D + 1))
        for l in range(D + 1):
            if P[l] == 0.0:
                continue
            g = localizing_density(OutcomeRecord(l, D - l), state, n_grid)
            acc += P[l] * g.values
        used += float(np.sum(P))
        D += 1
        if 1.0 - used < tail and block_mass < tail:
            break
    acc += max(1.0 - used, 0.0) / TWO_PI
    return PhaseGrid(acc)
