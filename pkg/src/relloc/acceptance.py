"""Acceptance checks with their measured values.

Each check returns a :class:`CriterionResult`; :func:`run_all` runs the
requested checks in order. Stated runtime limits are part of each check.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import j0
from scipy.stats import poisson

from . import bec, fock, optical, scattering
from .errors import InfiniteRatio
from .phase_dist import TWO_PI, PhaseGrid, visibility_of_grid

__all__ = ["CRITERIA", "CriterionResult", "run_all", "run_criterion"]


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.title}: {self.measured} ({self.seconds:.1f} s)"


def _timed(limit):
    """Decorator adding wall-clock time and the runtime limit to a check."""

    def wrap(fn):
        def run():
            t0 = time.perf_counter()
            ok, measured = fn()
            dt = time.perf_counter() - t0
            fast = dt < limit
            if not fast:
                measured += f"; runtime {dt:.1f} s over the {limit:g} s limit"
            return ok and fast, measured, dt

        run.__doc__ = fn.__doc__
        return run

    return wrap


# ---------------------------------------------------------------------------


@_timed(1.0)
def _c1():
    """Closed-form and split visibilities."""
    ok = True
    v_p = optical.visibility_closed_form("poissonian", 0, 1)
    v_t = optical.visibility_closed_form("thermal", 0, 1)
    ok &= v_p == 0.5 and v_t == 1.0 / 3.0
    # the densities themselves carry the same visibilities
    g_p = optical.localizing_density(
        optical.OutcomeRecord(0, 1), optical.InitialState.poissonian(10.0), 1024
    )
    g_t = optical.thermal_density(0, 1, n_grid=1024)
    gv_p, gv_t = visibility_of_grid(g_p), visibility_of_grid(g_t)
    ok &= abs(gv_p - 0.5) < 1e-12 and abs(gv_t - 1.0 / 3.0) < 1e-10
    lam = {}
    for D, target in ((2, 1.27), (4, 1.13), (10, 1.05)):
        lam[D] = optical.split_visibility(D // 2, D // 2) * (D + 1) / D
        ok &= abs(lam[D] - target) <= 0.005
    msg = (
        f"V(0,1) poissonian={v_p:.12g} (grid {gv_p:.12f}), thermal={v_t:.12g} "
        f"(grid {gv_t:.12f}); lambda D=2,4,10: "
        + ", ".join(f"{lam[D]:.4f}" for D in (2, 4, 10))
    )
    return ok, msg


@_timed(30.0)
def _c2():
    """Oracle against the approximate Fock record probabilities."""
    N = 20
    ok = True
    parts = []
    for eps in (0.05, 0.1, 0.2):
        exact = fock.plr_exact_table(N, eps, n_cut=2 * N + 2)
        l, r = np.meshgrid(np.arange(2 * N + 1), np.arange(2 * N + 1), indexing="ij")
        approx = optical.plr_fock_approx(N, eps, l, r)
        keep = exact > 1e-4
        err = float(np.max(np.abs(approx[keep] - exact[keep]) / exact[keep]))
        ok &= err <= eps
        parts.append(f"eps={eps}: {err:.4f} ({err / eps:.2f} eps)")
    return ok, "max relative error " + ", ".join(parts) + " (limit 1.0 eps)"


def _intensities_for(R):
    t = (1.0 - math.sqrt(1.0 - R * R)) / R
    return 1.0, t * t


def _direct_split(l, r, R):
    D = l + r

    def f(th):
        c = math.cos(th)
        return (1.0 + R * c) ** r * (1.0 - R * c) ** l

    val, _ = quad(f, 0.0, math.pi, epsabs=0.0, epsrel=1e-13, limit=200)
    return math.comb(D, l) * 2.0**-D * val / math.pi


@_timed(60.0)
def _c3():
    """Asymmetric Legendre formula and restricted visibilities."""
    ok = True
    worst = 0.0
    eps = 0.1
    for R_target in (0.2, 0.57, 0.94):
        nbar, mbar = _intensities_for(R_target)
        R = optical.AsymmetryRatio.from_intensities(nbar, mbar).R
        lam = eps * (nbar + mbar)
        for D in range(21):
            pois = float(poisson.pmf(D, lam))
            for l in range(D + 1):
                got = optical.plr_asymmetric(nbar, mbar, eps, l, D - l)
                ref = pois * _direct_split(l, D - l, R)
                worst = max(worst, abs(got - ref) / ref)
    ok &= worst <= 1e-8
    vis = []
    for R, target in ((0.94, 0.98), (0.57, 0.94), (0.2, 0.81)):
        v = float(
            optical.expected_visibility_curve(
                "asym_poissonian", [100.0], restrict_single_valued=True, R=R
            )[0]
        )
        vis.append(v)
        ok &= abs(v - target) <= 0.01
    msg = f"max relative deviation {worst:.2e}; restricted V at 100 counts for R=0.94/0.57/0.2: " + " / ".join(
        f"{v:.4f}" for v in vis
    )
    return ok, msg


@_timed(5.0)
def _c4():
    """Two-photon interference ratios from the oracle."""
    worst = 0.0
    ok = True
    n_checked = 0
    for tot in range(2, 13):
        for N in range(tot + 1):
            M = tot - N
            den = N * N + M * M - N - M
            if den == 0:
                try:
                    fock.hom_same_detector_ratio(N, M)
                    ok = False
                except InfiniteRatio:
                    pass
                continue
            ref = (den + 4 * N * M) / den
            got = fock.hom_same_detector_ratio(N, M)
            worst = max(worst, abs(got - ref))
            n_checked += 1
    ok &= worst <= 1e-10
    return ok, f"{n_checked} pairs, max deviation {worst:.2e}; N=M=1 raises InfiniteRatio"


@_timed(60.0)
def _c5():
    """Fock addition probabilities."""
    ok = True
    worst = 0.0
    for N in range(1, 21):
        p0 = fock.fock_addition_basic(N).p0
        ref = math.comb(2 * N, N) / 4.0**N
        worst = max(worst, abs(p0 - ref))
    ok &= worst <= 1e-10
    w1 = max(
        abs(fock.fock_addition_localized(N, 1) / fock.fock_addition_basic(N).p0 - 2.0)
        for N in (2, 5, 10)
    )
    ok &= w1 <= 1e-10
    r2 = fock.fock_addition_localized(2, 2) / fock.fock_addition_basic(2).p0
    r30 = fock.fock_addition_localized(30, 2) / fock.fock_addition_basic(30).p0
    ok &= abs(r2 - 2.6) <= 0.05 and abs(r30 - 2.9) <= 0.05
    msg = (
        f"P0 max deviation {worst:.2e}; W=1 ratio deviation from 2 {w1:.1e}; "
        f"W=2 ratio N=2 {r2:.4f}, N=30 {r30:.4f}"
    )
    return ok, msg


BEC_SEED = 20240601


@_timed(300.0)
def _c6():
    """Condensate interference Monte Carlo and the Bayesian posterior."""
    spec = bec.CondensateSpec.poissonian(1000.0)
    batch = bec.run_interference_batch(spec, 50, 5000, seed=BEC_SEED)
    v1 = batch.V[:, 0]
    ok = bool(np.all(np.abs(v1 - 0.5) <= 1e-12))
    rate = batch.localization_rate()[9:50]
    ok &= bool(np.all((rate >= 0.8) & (rate <= 2.0)))
    worst = 0.0
    for i in range(100):
        rec = bec.run_interference(spec, 20, seed=BEC_SEED + 1, index=i)
        q = bec.phase_density(rec, spec, 1024)
        b = bec.bayesian_posterior(rec, n_grid=1024)
        worst = max(worst, float(np.max(np.abs(q.values - b.values))))
    ok &= worst <= 1e-10
    mv = batch.mean_visibility()
    msg = (
        f"mean V after 1 detection {v1.mean():.15f}; -2D ln(mean V) over D=10..50 in "
        f"[{rate.min():.3f}, {rate.max():.3f}]; mean V at D=50 {mv[49]:.4f}; "
        f"posterior vs quantum density max deviation {worst:.1e}"
    )
    return ok, msg


@_timed(1.0)
def _c7():
    """Gaussian visibility error ladder."""
    e = {r: bec.gaussian_error_ladder(r) for r in (1, 2, 3, 7, 23)}
    ok = (
        abs(e[1] - 0.26) <= 0.01
        and abs(e[2] - 0.09) <= 0.01
        and abs(e[3] - 0.04) <= 0.01
        and e[7] < 0.01
        and e[23] < 0.001
    )
    return ok, "fractional errors r=1,2,3,7,23: " + ", ".join(f"{e[r]:.4g}" for r in e)


SCATTER_K = 5.0
SCATTER_ENSEMBLE = scattering.ParticleEnsemble(0.0, 4.0, 0.2)


@_timed(30.0)
def _c8():
    """Scattering factors, symmetry and view-cone stability."""
    ok = True
    light = scattering.LightSpec.mono(SCATTER_K)
    r = np.linspace(-4.0, 4.0, 1601)
    fwd = scattering.forward_factor_mono(SCATTER_K, r, 0.0)
    dfl = scattering.deflect_factor_mono(SCATTER_K, r, 0.0)
    jj = j0(SCATTER_K * r)
    ferr = max(np.max(np.abs(fwd - 0.5 * (1 - jj))), np.max(np.abs(dfl - 0.5 * (1 + jj))))
    ok &= ferr <= 1e-9
    ens = SCATTER_ENSEMBLE
    g = scattering.free_particle_density(scattering.ScatterRecord.free(0, 5), light, ens)
    x = g.coordinates()
    at_zero = abs(x[int(np.argmax(g.values))]) < 1e-12
    ok &= at_zero
    asym = 0.0
    for F, S in ((0, 5), (5, 0), (2, 3), (3, 2), (1, 1)):
        for lt in (light, scattering.LightSpec.thermal(SCATTER_K, 5.0)):
            v = scattering.free_particle_density(scattering.ScatterRecord.free(F, S), lt, ens).values
            asym = max(asym, float(np.max(np.abs(v - v[::-1]))))
    ok &= asym <= 1e-12
    rec = scattering.ScatterRecord.free(2, 3)
    base = scattering.free_particle_density(rec, light, ens, scattering.ViewCone(0.0))
    l1 = 0.0
    for eps in np.linspace(0.0, 0.05, 6):
        gi = scattering.free_particle_density(rec, light, ens, scattering.ViewCone(float(eps)))
        l1 = max(l1, gi.__class__(np.abs(gi.values - base.values), gi.lower, gi.upper).integral())
    ok &= l1 < 0.01
    msg = (
        f"factor deviation {ferr:.1e}; all-deflected peak at 0: {at_zero}; "
        f"max asymmetry {asym:.1e}; view-cone L1 change up to 0.05 rad {l1:.4f} (limit 0.01)"
    )
    return ok, msg


@_timed(10.0)
def _c9():
    """Washout of the phase density by mixing over records."""
    state = optical.InitialState.poissonian(10.0)
    g = optical.mixing_washout(state, 0.1, n_grid=512)
    dev = float(np.max(np.abs(g.values - 1.0 / TWO_PI)))
    return dev <= 1e-8, f"max deviation from uniform {dev:.1e} at eps N = 1"


@_timed(120.0)
def _c10():
    """Record hashes independent of the thread count."""
    from .harness import record_hash

    def bec_hashes(threads):
        b = bec.run_interference_batch(
            bec.CondensateSpec.poissonian(1000.0), 50, 5000, seed=BEC_SEED, threads=threads
        )
        return [record_hash(row) for row in b.positions]

    def optical_hashes(threads):
        recs = optical.run_trajectories(
            optical.InitialState.poissonian(50.0), 0.1, 2000, seed=11, random_tau=True,
            threads=threads, block=500,
        )
        return [record_hash(r) for r in recs]

    def scatter_hashes(threads):
        recs = scattering.sample_scatter_batch(
            scattering.LightSpec.mono(SCATTER_K), SCATTER_ENSEMBLE, n_packets=5,
            n_runs=2000, seed=13, n_grid=801, threads=threads,
        )
        return [record_hash(r) for r in recs]

    same = True
    for fn in (bec_hashes, optical_hashes, scatter_hashes):
        a, b, c = fn(1), fn(1), fn(4)
        same &= a == b == c
    return same, f"BEC, optical and scattering record hashes identical for 1, 1 and 4 threads: {same}"


CRITERIA = {
    1: ("closed-form visibilities", _c1),
    2: ("oracle vs approximate record probabilities", _c2),
    3: ("asymmetric Legendre formula", _c3),
    4: ("two-photon interference ratios", _c4),
    5: ("Fock addition", _c5),
    6: ("condensate Monte Carlo", _c6),
    7: ("Gaussian error ladder", _c7),
    8: ("scattering densities", _c8),
    9: ("washout identity", _c9),
    10: ("determinism", _c10),
}


def run_criterion(number: int) -> CriterionResult:
    title, fn = CRITERIA[number]
    ok, measured, dt = fn()
    return CriterionResult(number, title, bool(ok), measured, dt)


def run_all(only=None) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if not only else sorted(set(only))
    return [run_criterion(n) for n in numbers]
