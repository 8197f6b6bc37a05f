"""Spatial interference of two overlapping condensates.

Atoms from condensates with momenta ``+k`` and ``-k`` are detected one at
a time. A detection at ``x`` applies ``exp(ikx) b_k + exp(-ikx) b_-k``;
positions ``pi/k`` apart are equivalent, so every position lies in
``[0, pi/k)``. Given the earlier detections, the next one has density
``(k/pi) (1 + V cos(2kx - phi))`` on that interval.

After detections at ``x_1..x_r`` the state is described by the
coefficients ``c_m`` of ``alpha^m beta^(r-m)`` in
``prod_j (exp(ikx_j) alpha + exp(-ikx_j) beta)``. They are updated one
detection at a time and rescaled after every step, which leaves every
derived quantity unchanged.

For phase-averaged coherent inputs with mean numbers ``N`` and ``M`` the
relative-phase density is ``|sum_m d_m exp(-i m D)|^2`` with
``d_m = c_m N^(m/2) M^((r-m)/2)``, and ``V exp(i phi) = R <exp(iD)>``
where ``R = 2 sqrt(N M) / (N + M)``. Number-state inputs use the exact
expectation ``<b_-k^dag b_k>`` over the conditional state.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, gammaln

from .errors import InvalidParameter, InvalidRecord, NumericalFailure, UnsupportedSpec
from .optical import OutcomeRecord, _thread_count
from .phase_dist import DEFAULT_N_GRID, TWO_PI, PhaseGrid, fit_gaussian, visibility_of_grid

__all__ = [
    "AtomRecord",
    "CondensateSpec",
    "DualSettingEvent",
    "FringeParams",
    "InterferenceBatch",
    "bayesian_posterior",
    "dual_setting_density",
    "dual_setting_events",
    "dual_setting_width",
    "fringe_cdf",
    "gaussian_error_ladder",
    "gaussian_normalization",
    "gaussian_visibility",
    "likely_events",
    "optical_record",
    "phase_density",
    "posterior_fringe",
    "record_density",
    "run_interference",
    "run_interference_batch",
    "sample_position",
    "update_fringe",
    "width_prediction",
]

# below this V the fringe offset carries no information
_V_FLOOR = 1e-14
_CDF_TOL = 1e-12
_NEWTON_CAP = 64
_BISECT_CAP = 200


@dataclass(frozen=True)
class FringeParams:
    """Fringe ``1 + V cos(2kx - phi)`` of the next detection.

    Attributes
    ----------
    V : float
        Visibility in [0, 1].
    phi : float
        Offset in [0, 2pi); set to 0 when ``phase_defined`` is False.
    k : float
        Wavenumber of the condensates.
    phase_defined : bool
        False when ``V`` is numerically zero.
    """

    V: float
    phi: float = 0.0
    k: float = 1.0
    phase_defined: bool = True

    def __post_init__(self):
        if not (0.0 <= self.V <= 1.0):
            raise InvalidParameter(f"visibility must lie in [0, 1], got {self.V}")
        if not self.k > 0:
            raise InvalidParameter("wavenumber must be positive")
        if self.V <= _V_FLOOR:
            object.__setattr__(self, "phi", 0.0)
            object.__setattr__(self, "phase_defined", False)
        else:
            object.__setattr__(self, "phi", float(np.mod(self.phi, TWO_PI)))

    def density(self, x):
        """Normalized detection density on ``[0, pi/k)``."""
        x = np.asarray(x, dtype=float)
        return (self.k / np.pi) * (1.0 + self.V * np.cos(2.0 * self.k * x - self.phi))


@dataclass(frozen=True, eq=False)
class AtomRecord:
    """Detection positions and the fringe after each detection.

    Parameters
    ----------
    positions : array_like
        Positions in ``[0, pi/k)``.
    k : float
        Wavenumber.
    history : tuple of FringeParams, optional
        Fringe after each detection; empty or of length ``D``.
    """

    positions: np.ndarray
    k: float = 1.0
    history: tuple = ()

    def __post_init__(self):
        x = np.array(self.positions, dtype=float).reshape(-1)
        if not self.k > 0:
            raise InvalidParameter("wavenumber must be positive")
        if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x >= np.pi / self.k):
            raise InvalidRecord("positions must lie in [0, pi/k)")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)
        hist = tuple(self.history)
        if hist and len(hist) != x.size:
            raise InvalidRecord("history length differs from the number of detections")
        object.__setattr__(self, "history", hist)

    @property
    def D(self) -> int:
        return self.positions.size

    def visibilities(self) -> np.ndarray:
        return np.array([f.V for f in self.history])


_BEC_KINDS = ("fock", "poissonian")


@dataclass(frozen=True)
class CondensateSpec:
    """Initial states of the two condensates.

    Parameters
    ----------
    kind : {'fock', 'poissonian'}
        Number states or phase-averaged coherent states for both modes.
    n, m : float
        Atom numbers (Fock) or mean atom numbers of the ``+k`` and ``-k``
        condensates; ``m`` defaults to ``n``.
    """

    kind: str
    n: float
    m: float | None = None

    def __post_init__(self):
        if self.kind == "thermal":
            raise UnsupportedSpec(
                "thermal condensates are not supported: dropping the no-detection "
                "evolution distorts their atom number"
            )
        if self.kind not in _BEC_KINDS:
            raise UnsupportedSpec(f"unknown condensate kind {self.kind!r}")
        m = self.n if self.m is None else self.m
        if not (self.n > 0 and m > 0):
            raise InvalidParameter("atom numbers must be positive")
        if self.kind == "fock" and (int(self.n) != self.n or int(m) != m):
            raise InvalidParameter("number-state inputs need integer atom numbers")
        object.__setattr__(self, "n", float(self.n))
        object.__setattr__(self, "m", float(m))

    @classmethod
    def poissonian(cls, nbar: float, mbar: float | None = None) -> "CondensateSpec":
        return cls("poissonian", nbar, mbar)

    @classmethod
    def fock(cls, N: int, M: int | None = None) -> "CondensateSpec":
        return cls("fock", N, M)

    @property
    def asymmetry(self) -> float:
        return min(1.0, 2.0 * math.sqrt(self.n * self.m) / (self.n + self.m))

    @property
    def max_detections(self) -> float:
        """Largest record length with nonzero probability."""
        return self.n + self.m - 1 if self.kind == "fock" else math.inf


# ---------------------------------------------------------------------------
# coefficient machinery (vectorized over a leading batch axis)


def _start_coeffs(B: int, D: int) -> np.ndarray:
    c = np.zeros((B, D + 1), dtype=complex)
    c[:, 0] = 1.0
    return c


def _push(c: np.ndarray, r: int, kx: np.ndarray) -> None:
    """Multiply the polynomials of ``r`` factors by one more factor, in place."""
    ep = np.exp(1j * kx)[:, None]
    head = c[:, : r + 1].copy()
    c[:, : r + 2] *= 0.0
    c[:, : r + 1] += np.conj(ep) * head
    c[:, 1 : r + 2] += ep * head
    scale = np.max(np.abs(c[:, : r + 2]), axis=1)
    c[:, : r + 2] /= scale[:, None]


def _log_weights(spec: CondensateSpec, r: int) -> np.ndarray:
    """Log-magnitude weights multiplying ``c_m`` for ``m = 0..r``."""
    m = np.arange(r + 1, dtype=float)
    if spec.kind == "poissonian":
        return 0.5 * m * math.log(spec.n / spec.m)
    N, M = spec.n, spec.m
    out = np.full(r + 1, -np.inf)
    ok = (m <= N) & (r - m <= M)
    mm = m[ok]
    out[ok] = 0.5 * (
        gammaln(N + 1) - gammaln(N - mm + 1) + gammaln(M + 1) - gammaln(M - r + mm + 1)
    )
    return out


def _scaled_terms(c: np.ndarray, spec: CondensateSpec, r: int) -> np.ndarray:
    """Terms ``d_m`` (or ``e_m``) in log-magnitude form, max modulus 1."""
    cc = c[:, : r + 1]
    with np.errstate(divide="ignore"):
        L = np.log(np.abs(cc)) + _log_weights(spec, r)[None, :]
    top = np.max(L, axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise InvalidRecord("record has zero probability for this input")
    return np.exp(L - top) * np.exp(1j * np.angle(cc))


def _fringe_arrays(c: np.ndarray, spec: CondensateSpec, r: int):
    """Visibility and offset arrays after ``r`` detections."""
    if r == 0:
        z = np.zeros(c.shape[0])
        return z, z.copy()
    d = _scaled_terms(c, spec, r)
    norm = np.sum(np.abs(d) ** 2, axis=1)
    cross = d[:, 1:] * np.conj(d[:, :-1])
    if spec.kind == "poissonian":
        z = spec.asymmetry * np.sum(cross, axis=1) / norm
    else:
        N, M = spec.n, spec.m
        m = np.arange(1, r + 1, dtype=float)
        g = np.sqrt(np.clip((N - m + 1) * (M - r + m), 0.0, None))
        z = 2.0 * np.sum(cross * g[None, :], axis=1) / ((N + M - r) * norm)
    V = np.minimum(np.abs(z), 1.0)
    phi = np.where(V > _V_FLOOR, np.mod(np.angle(z), TWO_PI), 0.0)
    return V, phi


def _coeffs_for(positions: np.ndarray, k: float) -> np.ndarray:
    D = positions.size
    c = _start_coeffs(1, D)
    for r, x in enumerate(positions):
        _push(c, r, np.array([k * x]))
    return c


def _check_length(spec: CondensateSpec, D: int) -> None:
    if D > spec.max_detections:
        raise InvalidRecord(
            f"{D} detections exceed the {int(spec.n + spec.m)} atoms available "
            "(the last atom leaves no fringe)"
        )


def update_fringe(rec: AtomRecord, spec: CondensateSpec) -> FringeParams:
    """Fringe parameters for the detection after ``rec``.

    Examples
    --------
    >>> f = update_fringe(AtomRecord([0.3]), CondensateSpec.poissonian(50.0))
    >>> round(f.V, 12)
    0.5
    """
    _check_length(spec, rec.D)
    c = _coeffs_for(rec.positions, rec.k)
    V, phi = _fringe_arrays(c, spec, rec.D)
    return FringeParams(float(V[0]), float(phi[0]), rec.k)


def phase_density(
    rec: AtomRecord, spec: CondensateSpec, n_grid: int = DEFAULT_N_GRID
) -> PhaseGrid:
    """Relative-phase density ``|sum_m d_m exp(-i m D)|^2`` after ``rec``.

    Only defined for coherent-state inputs.
    """
    if spec.kind != "poissonian":
        raise UnsupportedSpec("a relative-phase density needs coherent-state inputs")
    if rec.D >= n_grid:
        raise InvalidParameter("grid too coarse for the record length")
    c = _coeffs_for(rec.positions, rec.k)
    d = _scaled_terms(c, spec, rec.D)[0]
    amp = np.fft.fft(d, n_grid)
    return PhaseGrid(np.abs(amp) ** 2).normalize()


def record_density(positions, spec: CondensateSpec, k: float = 1.0) -> float:
    """Joint density ``f(x_1..x_r)`` of an ordered detection record.

    Each detection carries the factor ``k/pi`` divided by the expected atom
    number just before it, so the result integrates to one over
    ``[0, pi/k)^r`` and its marginals are the shorter records' densities.
    """
    x = np.asarray(positions, dtype=float).reshape(-1)
    r = x.size
    _check_length(spec, r)
    if r == 0:
        return 1.0
    cc = _unscaled_coeffs(x, k)
    with np.errstate(divide="ignore"):
        L = 2.0 * np.log(np.abs(cc)) + 2.0 * _log_weights(spec, r)
    top = np.max(L)
    if not np.isfinite(top):
        return 0.0
    log_norm = top + math.log(np.sum(np.exp(L - top)))
    if spec.kind == "poissonian":
        log_norm += r * (math.log(spec.m) - math.log(spec.n + spec.m))
    else:
        log_norm -= float(np.sum(np.log(spec.n + spec.m - np.arange(r))))
    return float(math.exp(log_norm + r * math.log(k / math.pi)))


def _unscaled_coeffs(x: np.ndarray, k: float) -> np.ndarray:
    # short records only; long products would overflow
    c = np.zeros(x.size + 1, dtype=complex)
    c[0] = 1.0
    for r, xi in enumerate(x):
        ep = np.exp(1j * k * xi)
        head = c[: r + 1].copy()
        c[: r + 2] = 0.0
        c[: r + 1] += np.conj(ep) * head
        c[1 : r + 2] += ep * head
    return c


# ---------------------------------------------------------------------------
# sampling


def _solve_cdf(u, V, phi):
    """Solve ``(y + V/2 (sin(2y - phi) + sin phi)) / pi = u`` for y in [0, pi)."""
    u = np.asarray(u, dtype=float)
    V = np.broadcast_to(np.asarray(V, dtype=float), u.shape)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), u.shape)
    sphi = np.sin(phi)

    def F(y):
        return (y + 0.5 * V * (np.sin(2.0 * y - phi) + sphi)) / np.pi

    lo = np.zeros(u.shape)
    hi = np.full(u.shape, np.pi)
    bisect_only = V >= 1.0
    y = np.where(bisect_only, 0.5 * np.pi, np.pi * u)
    res = F(y) - u
    done = np.abs(res) <= _CDF_TOL
    for it in range(_NEWTON_CAP + _BISECT_CAP):
        if done.all():
            break
        lo = np.where(res < 0.0, y, lo)
        hi = np.where(res > 0.0, y, hi)
        fp = (1.0 + V * np.cos(2.0 * y - phi)) / np.pi
        with np.errstate(divide="ignore", invalid="ignore"):
            y_new = y - res / fp
        use_newton = (it < _NEWTON_CAP) & ~bisect_only & (y_new > lo) & (y_new < hi)
        y_new = np.where(use_newton, y_new, 0.5 * (lo + hi))
        y = np.where(done, y, y_new)
        res = F(y) - u
        done = done | (np.abs(res) <= _CDF_TOL)
    if not done.all():
        worst = float(np.max(np.abs(res)))
        raise NumericalFailure("position sampling did not converge", residual=worst)
    return np.minimum(y, np.nextafter(np.pi, 0.0))


def sample_position(f: FringeParams, u) -> float | np.ndarray:
    """Position with cumulative probability ``u`` under the fringe ``f``.

    Solves ``x + (V/2k)[sin(2kx - phi) + sin(phi)] = u pi/k`` by safeguarded
    Newton steps, falling back to bisection (and using bisection alone
    when ``V = 1``).

    Examples
    --------
    >>> sample_position(FringeParams(0.0, 0.0, 2.0), 0.25) == 0.25 * np.pi / 2.0
    True
    """
    ua = np.asarray(u, dtype=float)
    if np.any(ua < 0.0) or np.any(ua >= 1.0):
        raise InvalidParameter("u must lie in [0, 1)")
    if f.V == 0.0:
        x = ua * np.pi / f.k
    else:
        x = _solve_cdf(ua, f.V, f.phi) / f.k
    return float(x) if np.ndim(u) == 0 else x


def fringe_cdf(f: FringeParams, x):
    """Cumulative probability of ``x`` in ``[0, pi/k)``."""
    y = f.k * np.asarray(x, dtype=float)
    return (y + 0.5 * f.V * (np.sin(2.0 * y - f.phi) + np.sin(f.phi))) / np.pi


# ---------------------------------------------------------------------------
# simulation


def _uniforms(seed: int, index: int, D: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    return rng.random(D)


def _simulate_block(spec: CondensateSpec, u: np.ndarray, k: float):
    """Advance a block of runs in lockstep; ``u`` has shape (B, D)."""
    B, D = u.shape
    c = _start_coeffs(B, D)
    x = np.zeros((B, D))
    V_hist = np.zeros((B, D))
    phi_hist = np.zeros((B, D))
    V = np.zeros(B)
    phi = np.zeros(B)
    for r in range(D):
        y = np.where(V == 0.0, np.pi * u[:, r], 0.0)
        live = V != 0.0
        if live.any():
            y[live] = _solve_cdf(u[live, r], V[live], phi[live])
        x[:, r] = y / k
        _push(c, r, y)
        V, phi = _fringe_arrays(c, spec, r + 1)
        V_hist[:, r] = V
        phi_hist[:, r] = phi
    return x, V_hist, phi_hist


def run_interference(
    spec: CondensateSpec, D_total: int, seed: int = 0, index: int = 0, k: float = 1.0
) -> AtomRecord:
    """Simulate ``D_total`` detections; the record holds the fringe after each.

    The run draws its uniforms from the stream keyed by ``(seed, index)``,
    so it equals row ``index`` of :func:`run_interference_batch`.
    """
    if D_total < 1:
        raise InvalidParameter("need at least one detection")
    _check_length(spec, D_total - 1)
    x, V, phi = _simulate_block(spec, _uniforms(seed, index, D_total)[None, :], k)
    hist = tuple(FringeParams(float(a), float(b), k) for a, b in zip(V[0], phi[0]))
    x0 = np.minimum(x[0], np.nextafter(np.pi / k, 0.0))
    return AtomRecord(x0, k, hist)


@dataclass(frozen=True, eq=False)
class InterferenceBatch:
    """Many independent runs of equal length.

    Attributes
    ----------
    positions, V, phi : ndarray, shape (n_runs, D)
        Detection positions and the fringe after each detection.
    seed : int
    k : float
    """

    positions: np.ndarray
    V: np.ndarray
    phi: np.ndarray
    seed: int
    k: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return self.positions.shape[0]

    def mean_visibility(self) -> np.ndarray:
        return self.V.mean(axis=0)

    def std_visibility(self) -> np.ndarray:
        return self.V.std(axis=0)

    def localization_rate(self) -> np.ndarray:
        """``-2 D ln(mean V)`` for ``D = 1..n``."""
        D = np.arange(1, self.V.shape[1] + 1)
        return -2.0 * D * np.log(self.mean_visibility())


def run_interference_batch(
    spec: CondensateSpec,
    D_total: int,
    n_runs: int,
    seed: int = 0,
    k: float = 1.0,
    block: int = 1000,
    threads: int | None = None,
) -> InterferenceBatch:
    """Independent runs advanced in lockstep blocks.

    Every run owns the stream ``(seed, index)``, so results do not depend
    on the block size or thread count. Blocks are merged in run order.
    """
    if D_total < 1 or n_runs < 1:
        raise InvalidParameter("need at least one run and one detection")
    _check_length(spec, D_total - 1)
    threads = threads or _thread_count()
    jobs = [range(s, min(s + block, n_runs)) for s in range(0, n_runs, block)]

    def work(idx):
        u = np.stack([_uniforms(seed, i, D_total) for i in idx])
        return _simulate_block(spec, u, k)

    if threads == 1:
        parts = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, jobs))
    x = np.concatenate([p[0] for p in parts])
    x = np.minimum(x, np.nextafter(np.pi / k, 0.0))
    V = np.concatenate([p[1] for p in parts])
    phi = np.concatenate([p[2] for p in parts])
    return InterferenceBatch(x, V, phi, int(seed), k)


# ---------------------------------------------------------------------------
# Bayesian comparison and the optical map


def bayesian_posterior(
    rec: AtomRecord, prior: PhaseGrid | None = None, n_grid: int = DEFAULT_N_GRID
) -> PhaseGrid:
    """Posterior over the relative phase from ``prod_j cos^2(k x_j - D/2)``.

    Parameters
    ----------
    rec : AtomRecord
    prior : PhaseGrid, optional
        Prior density; flat when omitted.
    """
    if prior is None:
        prior = PhaseGrid.uniform(n_grid)
    theta = prior.coordinates()
    logp = np.zeros(theta.size)
    with np.errstate(divide="ignore"):
        for x in rec.positions:
            logp += 2.0 * np.log(np.abs(np.cos(rec.k * x - 0.5 * theta)))
        logp += np.log(prior.values)
    top = np.max(logp)
    if not np.isfinite(top):
        raise InvalidRecord("record has zero probability under the prior")
    return PhaseGrid(np.exp(logp - top)).normalize()


def posterior_fringe(posterior: PhaseGrid, k: float = 1.0) -> FringeParams:
    """Fringe implied by a relative-phase density of equal-intensity pairs."""
    p = posterior.normalize()
    z = p.spacing * np.sum(p.values * np.exp(1j * p.coordinates()))
    return FringeParams(float(min(abs(z), 1.0)), float(np.angle(z)), k)


def optical_record(rec: AtomRecord) -> OutcomeRecord:
    """Equivalent optical record with offsets ``tau = 2 k x``.

    A detection in ``[pi/2k, pi/k)`` is folded back by ``pi/2k`` and
    counted behind the difference port.
    """
    half = 0.5 * np.pi / rec.k
    ev = []
    for x in rec.positions:
        if x < half:
            ev.append(("R", 2.0 * rec.k * x))
        else:
            ev.append(("L", 2.0 * rec.k * (x - half)))
    return OutcomeRecord.from_events(ev)


# ---------------------------------------------------------------------------
# Gaussian description of the localized phase


def gaussian_visibility(sigma):
    """Visibility ``exp(-sigma^2 / 2)`` of a Gaussian phase density."""
    s = np.asarray(sigma, dtype=float)
    if np.any(s < 0):
        raise InvalidParameter("sigma must be nonnegative")
    out = np.exp(-0.5 * s**2)
    return float(out) if out.ndim == 0 else out


def gaussian_normalization(sigma: float) -> float:
    """Mass of a centred Gaussian of width ``sigma`` inside ``[-pi, pi]``."""
    if not sigma > 0:
        raise InvalidParameter("sigma must be positive")
    return float(erf(np.pi / (sigma * math.sqrt(2.0))))


def gaussian_error_ladder(r: int, n_grid: int = 1024) -> float:
    """Fractional error of ``exp(-sigma^2/2)`` against the grid visibility of
    ``cos^(2r)(D/2)`` with ``sigma = sqrt(2/r)``."""
    if r < 1:
        raise InvalidParameter("r must be positive")
    g = PhaseGrid.from_function(lambda t: np.cos(0.5 * t) ** (2 * r), n_grid)
    exact = visibility_of_grid(g)
    return abs(gaussian_visibility(math.sqrt(2.0 / r)) - exact) / exact


def width_prediction(M: int) -> tuple[float, float]:
    """Band ``(sqrt(1/2M), sqrt(1/M))`` for the phase width after ``M``
    detections at each of two offsets."""
    if not M > 0:
        raise InvalidParameter("M must be positive")
    return math.sqrt(0.5 / M), math.sqrt(1.0 / M)


# ---------------------------------------------------------------------------
# two-offset device: M counts at offset 0 and M at offset pi/2


@dataclass(frozen=True)
class DualSettingEvent:
    """Counts ``(l1, r1)`` at offset 0 and ``(l2, r2)`` at offset pi/2."""

    l1: int
    r1: int
    l2: int
    r2: int
    probability: float


def _dual_factor(theta, l1, r1, l2, r2):
    a = 0.5 * theta
    b = 0.5 * (theta - 0.5 * np.pi)
    return (
        np.cos(a) ** (2 * r1)
        * np.sin(a) ** (2 * l1)
        * np.cos(b) ** (2 * r2)
        * np.sin(b) ** (2 * l2)
    )


def dual_setting_density(l1, r1, l2, r2, n_grid: int = DEFAULT_N_GRID) -> PhaseGrid:
    """Relative-phase density after the two-offset record."""
    return PhaseGrid.from_function(lambda t: _dual_factor(t, l1, r1, l2, r2), n_grid).normalize()


def dual_setting_events(M: int, n_grid: int | None = None) -> list[DualSettingEvent]:
    """Every two-offset outcome with its probability for equal coherent inputs.

    Given the relative phase, each count behind the sum port at offset
    ``tau`` has probability ``cos^2((D - tau)/2)``; the outcome probability
    averages the two binomial laws over a flat phase. The average is exact
    on a grid finer than ``4M``.
    """
    if M < 1:
        raise InvalidParameter("M must be positive")
    n = n_grid or 4 * M + 8
    theta = TWO_PI * np.arange(n) / n
    lb = gammaln(M + 1) - gammaln(np.arange(M + 1) + 1) - gammaln(M - np.arange(M + 1) + 1)
    out = []
    for r1 in range(M + 1):
        for r2 in range(M + 1):
            f = _dual_factor(theta, M - r1, r1, M - r2, r2)
            p = math.exp(lb[r1] + lb[r2]) * float(np.mean(f))
            out.append(DualSettingEvent(M - r1, r1, M - r2, r2, p))
    return out


def likely_events(M: int) -> list[DualSettingEvent]:
    """Outcomes more probable than ``1/(M+1)^2``."""
    cut = 1.0 / (M + 1) ** 2
    return [e for e in dual_setting_events(M) if e.probability > cut]


def dual_setting_width(M: int, n_grid: int = DEFAULT_N_GRID) -> tuple[float, float]:
    """Typical phase width over the likely two-offset outcomes.

    Returns
    -------
    sigma : float
        Probability-weighted mean of the fitted Gaussian widths.
    in_band : float
        Probability share of likely outcomes whose width lies inside
        :func:`width_prediction`.
    """
    ev = likely_events(M)
    p = np.array([e.probability for e in ev])
    s = np.array(
        [fit_gaussian(dual_setting_density(e.l1, e.r1, e.l2, e.r2, n_grid)).sigma for e in ev]
    )
    lo, hi = width_prediction(M)
    inside = (s >= lo) & (s <= hi)
    return float(np.sum(p * s) / np.sum(p)), float(np.sum(p * inside) / np.sum(p))
