"""Exact truncated Fock-space oracle for two (or more) bosonic modes.

States are dense complex arrays indexed by photon numbers, one axis per
mode. Linear couplings conserve the total photon number of the modes they
act on, so they are applied sector by sector with an exact unitary for
each fixed-total block. Nothing is approximated as long as every occupied
sector fits below the cutoff; an occupied sector that does not fit raises
:class:`~relloc.errors.TruncationOverflow` instead of leaking norm.

The oracle is deliberately independent of the analytic formulas in
:mod:`relloc.optical`: probabilities are obtained by applying operators
and taking norms, never by evaluating closed forms.

Conventions
-----------
A coupling with mixing angle ``theta`` and phase ``xi`` maps coherent
amplitudes as

    (alpha, beta) -> (alpha cos(theta) + beta e^{-i xi} sin(theta),
                      -alpha e^{i xi} sin(theta) + beta cos(theta)).

The balanced splitter is ``theta = pi/4, xi = pi``; it sends ``|1,1>`` to
``(-|2,0> + |0,2>)/sqrt(2)``. Leakage of a fraction ``eps`` into an empty
ancilla is ``cos(theta) = sqrt(1 - eps)`` with ``xi = pi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .errors import InfiniteRatio, InvalidParameter, InvalidRecord, TruncationOverflow

__all__ = [
    "AdditionResult",
    "FockState2",
    "LinearCoupling",
    "apply_beam_splitter",
    "apply_decay",
    "apply_jump",
    "apply_phase",
    "fock_addition_basic",
    "fock_addition_localized",
    "hom_same_detector_ratio",
    "noon_fidelity",
    "plr_exact",
    "plr_exact_table",
]

# Amplitudes below this are treated as exactly zero when checking whether an
# occupied sector crosses the cutoff.
_ZERO = 1e-300


@dataclass(frozen=True)
class LinearCoupling:
    """Two-mode linear coupling ``U(theta, xi)``.

    Parameters
    ----------
    theta : float
        Mixing angle in radians.
    xi : float
        Coupling phase in radians.
    """

    theta: float
    xi: float = 0.0

    @classmethod
    def fifty_fifty(cls) -> "LinearCoupling":
        """Balanced splitter with outputs ``(a - b)/sqrt2`` and ``(a + b)/sqrt2``."""
        return cls(np.pi / 4, np.pi)

    @classmethod
    def leakage(cls, eps: float) -> "LinearCoupling":
        """Coupling that moves a fraction ``eps`` of a mode into a vacuum ancilla."""
        if not 0.0 <= eps < 1.0:
            raise InvalidParameter(f"leakage fraction must lie in [0, 1), got {eps}")
        return cls(float(np.arcsin(np.sqrt(eps))), np.pi)


@lru_cache(maxsize=4096)
def _sector_unitary(s: int, theta: float, xi: float) -> np.ndarray:
    """Matrix of the coupling on the ``s``-photon block.

    Basis vectors are ``|i, s-i>`` for ``i = 0..s`` where ``i`` counts the
    photons in the first mode. The generator is
    ``e^{-i xi} a^dag b - e^{i xi} a b^dag``.
    """
    if s == 0:
        return np.ones((1, 1), dtype=complex)
    i = np.arange(s)
    # a^dag b |i, s-i> = sqrt((i+1)(s-i)) |i+1, s-i-1>
    off = np.sqrt((i + 1.0) * (s - i))
    gen = np.zeros((s + 1, s + 1), dtype=complex)
    gen[i + 1, i] = np.exp(-1j * xi) * off
    gen[i, i + 1] = -np.exp(1j * xi) * off
    # gen is anti-Hermitian: exp(theta*gen) = V exp(-i theta w) V^dag with H = i*gen
    w, v = np.linalg.eigh(1j * gen)
    u = (v * np.exp(-1j * theta * w)) @ v.conj().T
    u.setflags(write=False)
    return u


def _couple_axes(t: np.ndarray, ax1: int, ax2: int, c: LinearCoupling) -> np.ndarray:
    """Apply a linear coupling to two axes of a multi-mode amplitude tensor."""
    work = np.moveaxis(t, (ax1, ax2), (-2, -1))
    n = work.shape[-1]
    if work.shape[-2] != n:
        raise TruncationOverflow("coupled modes must share the same cutoff")
    out = np.zeros_like(work)
    for s in range(2 * n - 1):
        lo, hi = max(0, s - n + 1), min(s, n - 1)
        idx = np.arange(lo, hi + 1)
        sub = work[..., idx, s - idx]
        if s > n - 1:
            if np.any(np.abs(sub) > _ZERO):
                raise TruncationOverflow(
                    f"occupied {s}-photon sector exceeds cutoff {n - 1}"
                )
            continue
        u = _sector_unitary(s, float(c.theta), float(c.xi))
        out[..., idx, s - idx] = sub @ u.T
    return np.moveaxis(out, (-2, -1), (ax1, ax2))


def _lower(t: np.ndarray, axis: int) -> np.ndarray:
    """Annihilation operator on one axis of an amplitude tensor."""
    t = np.moveaxis(t, axis, 0)
    out = np.zeros_like(t)
    shape = (-1,) + (1,) * (t.ndim - 1)
    out[:-1] = np.sqrt(np.arange(1, t.shape[0], dtype=float)).reshape(shape) * t[1:]
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True, eq=False)
class FockState2:
    """Truncated two-mode state in the photon-number basis.

    Parameters
    ----------
    amplitudes : ndarray of complex, shape (n_cut + 1, n_cut + 1)
        ``amplitudes[n1, n2]`` is the coefficient of ``|n1, n2>``.
        States may be subnormalized; the squared norm then carries the
        probability of the outcomes that produced them.
    """

    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex)
        if amp.ndim != 2 or amp.shape[0] != amp.shape[1] or amp.shape[0] < 1:
            raise InvalidParameter("amplitudes must be a square 2-D array")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def n_cut(self) -> int:
        return self.amplitudes.shape[0] - 1

    @classmethod
    def fock(cls, n1: int, n2: int, n_cut: int | None = None) -> "FockState2":
        """Number state ``|n1, n2>``; default cutoff is ``n1 + n2 + 2``."""
        if n1 < 0 or n2 < 0:
            raise InvalidParameter("photon numbers must be nonnegative")
        n_cut = n1 + n2 + 2 if n_cut is None else n_cut
        if max(n1, n2) > n_cut:
            raise TruncationOverflow(f"|{n1},{n2}> does not fit cutoff {n_cut}")
        amp = np.zeros((n_cut + 1, n_cut + 1), dtype=complex)
        amp[n1, n2] = 1.0
        return cls(amp)

    @classmethod
    def coherent(cls, alpha: complex, beta: complex, n_cut: int) -> "FockState2":
        """Product of coherent states truncated at ``n1 + n2 <= n_cut``."""
        n = np.arange(n_cut + 1)
        log_fact = 0.5 * gammaln(n + 1.0)

        def column(z):
            z = complex(z)
            if z == 0:
                c = np.zeros(n_cut + 1, dtype=complex)
                c[0] = 1.0
                return c
            mag = np.exp(-0.5 * abs(z) ** 2 + n * np.log(abs(z)) - log_fact)
            return mag * np.exp(1j * np.angle(z) * n)

        amp = np.outer(column(alpha), column(beta))
        amp[np.add.outer(n, n) > n_cut] = 0.0
        return cls(amp)

    def norm2(self) -> float:
        """Squared norm, i.e. the weight of a subnormalized state."""
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def normalized(self) -> "FockState2":
        w = self.norm2()
        if w <= 0.0:
            raise InvalidParameter("cannot normalize the zero state")
        return FockState2(self.amplitudes / np.sqrt(w))

    def total_number_support(self) -> np.ndarray:
        """Sorted total photon numbers carrying nonzero amplitude."""
        n = np.arange(self.n_cut + 1)
        tot = np.add.outer(n, n)
        return np.unique(tot[np.abs(self.amplitudes) > _ZERO])

    def inner(self, other: "FockState2") -> complex:
        """``<self|other>`` on the common truncated basis."""
        if other.n_cut != self.n_cut:
            raise InvalidParameter("states use different cutoffs")
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def apply_beam_splitter(s: FockState2, c: LinearCoupling) -> FockState2:
    """Apply a two-mode linear coupling exactly, block by block."""
    return FockState2(_couple_axes(s.amplitudes, 0, 1, c))


def apply_jump(s: FockState2, sign: int, xi: float = 0.0) -> FockState2:
    """Apply the unnormalized jump operator ``a + sign * e^{i xi} b``.

    The squared norm of the result is the relative weight of the outcome.
    The vacuum maps to the zero state.
    """
    if sign not in (1, -1):
        raise InvalidParameter(f"sign must be +1 or -1, got {sign}")
    amp = s.amplitudes
    out = _lower(amp, 0) + sign * np.exp(1j * xi) * _lower(amp, 1)
    return FockState2(out)


def apply_decay(s: FockState2, eps: float) -> FockState2:
    """No-count evolution ``(1 - eps)^{(n1 + n2)/2}`` applied per basis state."""
    if not 0.0 <= eps < 1.0:
        raise InvalidParameter(f"leakage fraction must lie in [0, 1), got {eps}")
    n = np.arange(s.n_cut + 1)
    tot = np.add.outer(n, n)
    return FockState2(s.amplitudes * (1.0 - eps) ** (0.5 * tot))


def apply_phase(s: FockState2, chi: float, mode: int = 1) -> FockState2:
    """Phase shifter ``exp(i chi n)`` on one mode (0 or 1)."""
    n = np.arange(s.n_cut + 1)
    ph = np.exp(1j * chi * n)
    amp = s.amplitudes * (ph[None, :] if mode == 1 else ph[:, None])
    return FockState2(amp)


def hom_same_detector_ratio(N: int, M: int) -> float:
    """Ratio of same-detector to different-detector second counts.

    Starting from ``|N, M>``, two jumps are applied in sequence and the
    weights of equal and opposite outcome pairs are summed.

    Raises
    ------
    InfiniteRatio
        When no different-detector pairs are possible (``N = M = 1``).
    """
    if N < 0 or M < 0 or N + M < 2:
        raise InvalidParameter("need at least two photons in total")
    psi = FockState2.fock(N, M)
    same = diff = 0.0
    for s1 in (1, -1):
        first = apply_jump(psi, s1)
        same += apply_jump(first, s1).norm2()
        diff += apply_jump(first, -s1).norm2()
    if diff <= 1e-13 * same:
        raise InfiniteRatio(f"no different-detector pairs for |{N},{M}>")
    return same / diff


def plr_exact_table(
    N: int, eps: float, xi: float = 0.0, n_cut: int | None = None
) -> np.ndarray:
    """Exact record probabilities from the explicit four-mode construction.

    Both cavities start in ``|N>``. Each leaks a fraction ``eps`` into its
    own vacuum ancilla; the ancillas receive a relative phase ``xi``, are
    combined on a balanced splitter and counted.

    Parameters
    ----------
    N : int
        Photons initially in each cavity.
    eps : float
        Leakage fraction in ``[0, 1)``.
    xi : float, optional
        Extra phase on the second ancilla before combination.
    n_cut : int, optional
        Cutoff on every axis, default ``2N + 2``.

    Returns
    -------
    ndarray, shape (2N + 1, 2N + 1)
        ``P[l, r]`` with ``l`` counted behind the difference port; entries
        with ``l + r > 2N`` are zero.
    """
    if N < 0:
        raise InvalidParameter("N must be nonnegative")
    n_cut = 2 * N + 2 if n_cut is None else int(n_cut)
    if n_cut < N:
        raise TruncationOverflow(f"cutoff {n_cut} cannot hold |{N}>")
    dim = n_cut + 1
    # axes: cavity A, cavity B, ancilla a, ancilla b
    t = np.zeros((dim,) * 4, dtype=complex)
    t[N, N, 0, 0] = 1.0
    leak = LinearCoupling.leakage(eps)
    t = _couple_axes(t, 0, 2, leak)
    t = _couple_axes(t, 1, 3, leak)
    t = t * np.exp(1j * xi * np.arange(dim))[None, None, None, :]
    t = _couple_axes(t, 2, 3, LinearCoupling.fifty_fifty())
    probs = np.sum(np.abs(t) ** 2, axis=(0, 1))
    out = np.zeros((2 * N + 1, 2 * N + 1))
    m = min(dim, 2 * N + 1)
    out[:m, :m] = probs[:m, :m]
    return out


def plr_exact(
    N: int, eps: float, l: int, r: int, xi: float = 0.0, n_cut: int | None = None
) -> float:
    """Exact probability of ``l`` difference-port and ``r`` sum-port counts."""
    if l < 0 or r < 0:
        raise InvalidParameter("counts must be nonnegative")
    if l + r > 2 * N:
        return 0.0
    return float(plr_exact_table(N, eps, xi, n_cut)[l, r])


@dataclass(frozen=True)
class AdditionResult:
    """Outcome of a Fock-addition attempt.

    Attributes
    ----------
    p0 : float
        Probability that the second output port is empty.
    distribution : ndarray
        ``distribution[m]`` is the probability of ``m`` photons in the
        second output port.
    """

    p0: float
    distribution: np.ndarray


def _combine(psi: FockState2) -> AdditionResult:
    out = apply_beam_splitter(psi, LinearCoupling.fifty_fifty())
    w = np.abs(out.amplitudes) ** 2
    dist = w.sum(axis=0)
    return AdditionResult(float(dist[0]), dist)


def fock_addition_basic(N: int) -> AdditionResult:
    """Combine ``|N, N>`` on a balanced splitter and read the second port."""
    if N < 0:
        raise InvalidParameter("N must be nonnegative")
    return _combine(FockState2.fock(N, N, 2 * N + 2))


def _relative_phase(psi: FockState2) -> float:
    """Phase of ``<a^dag b>``, i.e. the relative phase a state is peaked at."""
    amp = psi.amplitudes
    n = np.arange(psi.n_cut + 1)
    # a^dag b |n1, n2> = sqrt((n1+1) n2) |n1+1, n2-1>
    moved = np.zeros_like(amp)
    moved[1:, :-1] = (np.sqrt(n[1:])[:, None] * np.sqrt(n[1:])[None, :]) * amp[:-1, 1:]
    return float(np.angle(np.vdot(amp, moved)))


def fock_addition_localized(N: int, W: int) -> float:
    """Success probability of Fock addition after ``W`` localizing counts.

    ``W`` photons are first counted behind a balanced splitter (a quarter
    wave of extra phase between the two counts when ``W = 2``). The
    relative phase ``D0`` at which the remaining state is peaked is read
    off ``<a^dag b>`` and the second mode is shifted by ``pi - D0`` before
    the final combination. The returned value averages the vacuum
    probability over the possible count records, weighted by their
    probabilities.
    """
    if W not in (1, 2):
        raise InvalidParameter(f"W must be 1 or 2, got {W}")
    if N < W:
        raise InvalidParameter("need at least W photons per mode")
    psi = FockState2.fock(N, N, 2 * N + 2)
    branches = [(apply_jump(psi, s), ) for s in (1, -1)]
    if W == 2:
        branches = [
            (apply_jump(b[0], s, np.pi / 2),) for b in branches for s in (1, -1)
        ]
    total_w = 0.0
    acc = 0.0
    for (phi,) in branches:
        w = phi.norm2()
        if w <= 0.0:
            continue
        phi = phi.normalized()
        phi = apply_phase(phi, np.pi - _relative_phase(phi))
        acc += w * _combine(phi).p0
        total_w += w
    return acc / total_w


def noon_fidelity(N: int, D: int) -> float:
    """Fidelity with a NOON state after an evenly split localizing record.

    ``D/2`` counts at each port are applied to ``|N, N>``; the second mode
    is shifted by a quarter wave and the modes are combined. The overlap
    with ``(|0, M> + e^{i chi}|M, 0>)/sqrt2``, ``M = 2N - D``, is
    maximized over ``chi``. With ``D = 0`` there is no record and the
    unprocessed ``|N, N>`` is compared directly.
    """
    if D < 0 or D % 2:
        raise InvalidRecord(f"need an even, evenly split record, got D={D}")
    if D >= 2 * N:
        raise InvalidRecord("record must leave photons in the modes")
    M = 2 * N - D
    psi = FockState2.fock(N, N, 2 * N + 2)
    if D > 0:
        for _ in range(D // 2):
            psi = apply_jump(psi, 1)
        for _ in range(D // 2):
            psi = apply_jump(psi, -1)
        psi = apply_phase(psi.normalized(), np.pi / 2)
        psi = apply_beam_splitter(psi, LinearCoupling.fifty_fifty())
    amp = psi.normalized().amplitudes
    return float(0.5 * (abs(amp[0, M]) + abs(amp[M, 0])) ** 2)
