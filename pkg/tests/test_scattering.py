"""Relative-position localization by scattered light."""

import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import j0, jn_zeros

from relloc import optical as o
from relloc import scattering as sc
from relloc.errors import InvalidParameter, InvalidRecord
from relloc.phase_dist import SeparationGrid

K = 5.0
ENS = sc.ParticleEnsemble(0.0, 4.0, 0.2)
MONO = sc.LightSpec.mono(K)


def l1(a, b):
    return SeparationGrid(np.abs(a.values - b.values), a.lower, a.upper).integral()


def j0_series(x, terms=40):
    s = 0.0
    for m in range(terms):
        s += (-1) ** m * (x / 2) ** (2 * m) / math.factorial(m) ** 2
    return s


class TestTypes:
    def test_record_counts(self):
        rec = sc.ScatterRecord("free", ("F", "S", "S"))
        assert (rec.F, rec.S) == (1, 2) and rec.F + rec.S == len(rec.events)

    def test_bad(self):
        with pytest.raises(InvalidRecord):
            sc.ScatterRecord("free", ("L",))
        with pytest.raises(InvalidParameter):
            sc.LightSpec.mono(0.0)
        with pytest.raises(InvalidParameter):
            sc.LightSpec.thermal(1.0, 0.0)
        with pytest.raises(InvalidParameter):
            sc.ParticleEnsemble(1.0, 1.0, 0.2)
        with pytest.raises(InvalidParameter):
            sc.ViewCone(2.0)

    def test_photon_weights(self):
        K_max, p = sc.LightSpec.thermal(1.0, 5.0).photon_weights()
        assert p.size == K_max + 1
        assert p.sum() == pytest.approx(1.0, abs=1e-15)
        assert p[0] == pytest.approx(1 / 6, rel=1e-9)


class TestFactors:
    @pytest.mark.parametrize("x", [0.0, 0.1, 0.5, 1.0, 2.0, 3.0])
    def test_bessel_against_series(self, x):
        assert abs(j0(x) - j0_series(x)) <= 1e-15

    def test_mono_closed_form(self):
        r = np.linspace(-4, 4, 1601)
        jj = j0(K * r)
        np.testing.assert_allclose(sc.forward_factor_mono(K, r), (1 - jj) / 2, atol=1e-9)
        np.testing.assert_allclose(sc.deflect_factor_mono(K, r), (1 + jj) / 2, atol=1e-9)

    @given(st.floats(0.0, 0.5))
    def test_origin(self, eps):
        assert sc.deflect_factor_mono(K, 0.0, eps) == pytest.approx(1 - eps / np.pi, abs=1e-12)
        assert sc.forward_factor_mono(K, 0.0, eps) == pytest.approx(eps / np.pi, abs=1e-12)

    @given(st.floats(-10, 10), st.floats(0.0, 0.5))
    def test_completeness(self, r, eps):
        f = sc.forward_factor(MONO, r, sc.ViewCone(eps))
        d = sc.deflect_factor(MONO, r, sc.ViewCone(eps))
        assert f + d == pytest.approx(1.0, abs=1e-12)
        assert 0 <= f <= 1 and 0 <= d <= 1

    def test_thermal_factor_mixture(self):
        light = sc.LightSpec.thermal(K, 2.0)
        r = np.linspace(0, 2, 41)
        K_max, p = light.photon_weights()
        ref = sum(p[n] * (1 + j0(n * K * r)) / 2 for n in range(1, K_max + 1))
        np.testing.assert_allclose(sc.deflect_factor(light, r, sc.ViewCone(0.0)), ref, atol=1e-9)


class TestRubberCavity:
    def test_empty(self):
        g = sc.rubber_cavity_density(sc.ScatterRecord.rubber(0, 0), K, 0.0, 3.0, 301)
        np.testing.assert_allclose(g.values, 1 / 3.0, rtol=1e-12)

    def test_all_left_peaks(self):
        g = sc.rubber_cavity_density(sc.ScatterRecord.rubber(6, 0), K, 0.0, 4.0, 4001)
        x = g.coordinates()
        period = np.pi * math.sqrt(2) / K
        top = x[g.values > 0.999 * g.values.max()]
        phase = np.mod(top - period / 2, period)
        assert np.all(np.minimum(phase, period - phase) < 0.01)

    def test_optical_shape(self):
        l, r = 3, 5
        g = sc.rubber_cavity_density(sc.ScatterRecord.rubber(l, r), K, 0.0, 2.0, 801)
        delta = math.sqrt(2) * K * g.coordinates()
        ref = (1 + np.cos(delta)) ** r * (1 - np.cos(delta)) ** l
        np.testing.assert_allclose(g.values / g.values.max(), ref / ref.max(), atol=1e-12)

    def test_periodic_versus_free(self):
        rub = sc.rubber_cavity_density(sc.ScatterRecord.rubber(2, 2), K, -4.0, 4.0, 1601)
        free = sc.free_particle_density(sc.ScatterRecord.free(2, 2), MONO, ENS)

        def second_peak(v):
            v = v - v.mean()
            ac = np.correlate(v, v, "full")[v.size - 1 :]
            ac /= ac[0]
            lag = np.flatnonzero((ac[1:-1] > ac[:-2]) & (ac[1:-1] > ac[2:]))
            return ac[lag[0] + 1] if lag.size else 0.0

        assert second_peak(rub.values) > 0.9
        assert second_peak(free.values) < 0.6


class TestFreeParticle:
    def test_prior_limit(self):
        ens = sc.ParticleEnsemble(0.0, 2.0, 1e-9)
        g = sc.separation_prior(ens, 801).normalize()
        x = g.coordinates()
        np.testing.assert_allclose(g.values, (2.0 - np.abs(x)) / 4.0, atol=1e-8)

    def test_all_deflected_peak(self):
        for S in (1, 3, 8):
            g = sc.free_particle_density(sc.ScatterRecord.free(0, S), MONO, ENS)
            assert g.coordinates()[np.argmax(g.values)] == 0.0

    @given(st.integers(0, 6), st.integers(0, 6), st.sampled_from(["mono", "thermal"]))
    def test_symmetry_and_positivity(self, F, S, kind):
        light = MONO if kind == "mono" else sc.LightSpec.thermal(K, 3.0)
        g = sc.free_particle_density(sc.ScatterRecord.free(F, S), light, ENS, n_grid=401)
        assert np.max(np.abs(g.values - g.values[::-1])) <= 1e-12
        assert np.all(g.values >= 0) and g.integral() == pytest.approx(1.0, abs=1e-12)

    def test_all_forward_partial(self):
        g = sc.free_particle_density(sc.ScatterRecord.free(5, 0), MONO, ENS, sc.ViewCone(0.0))
        x = g.coordinates()
        assert g.values[x.size // 2] < 1e-3 * g.values.max()
        # maxima sit near the Bessel zeros where forward scattering is likeliest
        top = x[np.argmax(g.values)]
        assert top != 0.0
        assert g.values.max() / g.values.mean() < 10
        np.testing.assert_allclose(g.values, g.values[::-1], atol=1e-12 * g.values.max())

    @pytest.mark.parametrize("index", range(4))
    def test_long_sampled_runs_stay_partial(self, index):
        run = sc.sample_scatter_run(MONO, ENS, n_packets=200, seed=1, index=index)
        v, x = run.density.values, run.density.coordinates()
        assert v.max() / v.mean() < 20
        inner = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])) + 1
        strong = inner[v[inner] > 0.25 * v.max()]
        # several separated candidate separations survive
        assert len(set(np.round(np.abs(x[strong]), 2))) >= 3

    def test_thermal_differs_from_mono(self):
        rec = sc.ScatterRecord.free(3, 2)
        a = sc.free_particle_density(rec, MONO, ENS)
        b = sc.free_particle_density(rec, sc.LightSpec.thermal(K, 5.0), ENS)
        assert l1(a, b) > 0.01

    @pytest.mark.parametrize("eps", [0.01, 0.02])
    def test_view_cone_small_change(self, eps):
        rec = sc.ScatterRecord.free(2, 3)
        a = sc.free_particle_density(rec, MONO, ENS, sc.ViewCone(0.0))
        b = sc.free_particle_density(rec, MONO, ENS, sc.ViewCone(eps))
        assert l1(a, b) < 0.02


class TestEventProbabilities:
    def test_sum(self):
        g = sc.free_particle_density(sc.ScatterRecord.free(1, 2), MONO, ENS)
        p_f, p_d = sc.event_probabilities(MONO, g)
        assert p_f + p_d == pytest.approx(1.0, abs=1e-12)

    def test_uniform_prior(self):
        wide = sc.ParticleEnsemble(0.0, 40.0, 0.2)
        prior = sc.separation_prior(wide, 8001)
        p_f, p_d = sc.event_probabilities(MONO, prior, sc.ViewCone(0.0))
        assert abs(p_d - 0.5) < 0.05

    def test_bessel_zero(self):
        z = jn_zeros(0, 1)[0] / K
        x = np.linspace(z - 1, z + 1, 2001)
        v = np.zeros_like(x)
        v[1000] = 1.0
        p_f, p_d = sc.event_probabilities(MONO, SeparationGrid(v, x[0], x[-1]), sc.ViewCone(0.0))
        assert p_f == pytest.approx(0.5, abs=1e-12)

    def test_dim_thermal_light(self):
        prior = sc.separation_prior(ENS)
        p_f, _ = sc.event_probabilities(sc.LightSpec.thermal(K, 1e-6), prior)
        assert p_f > 1 - 1e-5


class TestSampling:
    def test_no_packets(self):
        run = sc.sample_scatter_run(MONO, ENS, n_packets=0, n_grid=401)
        prior = sc.separation_prior(ENS, 401).normalize()
        np.testing.assert_allclose(run.density.values, prior.values, rtol=1e-12)

    def test_histogram(self):
        n_grid, n = 801, 5
        view = sc.ViewCone()
        prior = sc.separation_prior(ENS, n_grid).normalize()
        # exact law of F by chaining event probabilities over all sequences
        law = np.zeros(n + 1)
        for seq in product("FS", repeat=n):
            g, p = prior, 1.0
            for e in seq:
                p_f, p_d = sc.event_probabilities(MONO, g, view)
                p *= p_f if e == "F" else p_d
                x = g.coordinates()
                fac = sc.forward_factor(MONO, x, view) if e == "F" else sc.deflect_factor(MONO, x, view)
                g = SeparationGrid(g.values * fac, g.lower, g.upper).normalize()
            law[seq.count("F")] += p
        recs = sc.sample_scatter_batch(MONO, ENS, view, n, 10_000, seed=8, n_grid=n_grid)
        obs = np.bincount([r.F for r in recs], minlength=n + 1)
        sd = np.sqrt(10_000 * law * (1 - law))
        assert np.all(np.abs(obs - 10_000 * law) <= 3 * sd + 1)

    def test_batch_matches_runs(self):
        recs = sc.sample_scatter_batch(MONO, ENS, n_packets=4, n_runs=50, seed=3, n_grid=401, block=7)
        for i in (0, 17, 49):
            run = sc.sample_scatter_run(MONO, ENS, n_packets=4, seed=3, index=i, n_grid=401)
            assert run.record == recs[i]
            assert len(run.history) == 5

    def test_thread_invariance(self):
        a = sc.sample_scatter_batch(MONO, ENS, n_packets=5, n_runs=600, seed=1, n_grid=401, threads=1)
        b = sc.sample_scatter_batch(MONO, ENS, n_packets=5, n_runs=600, seed=1, n_grid=401, threads=3, block=41)
        assert a == b
