"""Phase and separation grids, visibility and the Gaussian fit."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relloc.errors import (
    BimodalDistribution,
    DegenerateDistribution,
    GridMismatch,
    InvalidParameter,
)
from relloc.phase_dist import (
    PhaseGrid,
    SeparationGrid,
    fit_gaussian,
    grid_to_json_text,
    pointwise_product,
    visibility_of_grid,
)

TWO_PI = 2 * np.pi

positive_grids = arrays(
    np.float64,
    st.integers(8, 64),
    elements=st.floats(1e-3, 10.0, allow_nan=False, allow_infinity=False),
)


def wrapped_gaussian(n, mu, sigma):
    t = TWO_PI * np.arange(n) / n
    k = np.arange(-6, 7)[:, None]
    return np.exp(-0.5 * ((t - mu + TWO_PI * k) / sigma) ** 2).sum(axis=0)


class TestPhaseGrid:
    def test_normalize(self):
        g = PhaseGrid(np.arange(1.0, 17.0)).normalize()
        assert abs(g.integral() - 1.0) <= 1e-12

    def test_rejects_negative_and_nan(self):
        with pytest.raises(InvalidParameter):
            PhaseGrid([1.0, -0.1, 2.0])
        with pytest.raises(InvalidParameter):
            PhaseGrid([1.0, np.nan])

    def test_zero_mass(self):
        with pytest.raises(DegenerateDistribution):
            PhaseGrid(np.zeros(8)).normalize()
        with pytest.raises(DegenerateDistribution):
            visibility_of_grid(PhaseGrid(np.zeros(8)))

    def test_rotation_wraps(self):
        g = PhaseGrid([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(g.rotate(1).values, [4.0, 1.0, 2.0, 3.0])

    def test_json_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(3)
        g = PhaseGrid(rng.random(257))
        back = PhaseGrid.from_json(json.loads(grid_to_json_text(g)))
        assert back.values.tobytes() == g.values.tobytes()
        s = SeparationGrid(rng.random(33), -1.5, 2.25)
        back = SeparationGrid.from_json(json.loads(grid_to_json_text(s)))
        assert back.values.tobytes() == s.values.tobytes()
        assert (back.lower, back.upper) == (-1.5, 2.25)

    def test_csv_round_trip(self, tmp_path):
        g = PhaseGrid(np.random.default_rng(4).random(64))
        g.to_csv(tmp_path / "g.csv")
        np.testing.assert_array_equal(PhaseGrid.from_csv(tmp_path / "g.csv").values, g.values)
        s = SeparationGrid(np.random.default_rng(5).random(11), 0.0, 1.0)
        s.to_csv(tmp_path / "s.csv")
        back = SeparationGrid.from_csv(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.values, s.values)


class TestSeparationGrid:
    def test_trapezoid_normalize(self):
        g = SeparationGrid(np.linspace(0.0, 1.0, 101) ** 2, 0.0, 1.0).normalize()
        assert abs(g.integral() - 1.0) <= 1e-12

    def test_bad_bounds(self):
        with pytest.raises(InvalidParameter):
            SeparationGrid(np.ones(4), 1.0, 1.0)


class TestVisibility:
    def test_uniform_is_zero(self):
        assert visibility_of_grid(PhaseGrid.uniform(4096)) < 1e-15

    def test_spike_is_one(self):
        v = np.zeros(4096)
        v[1234] = 1.0
        assert abs(visibility_of_grid(PhaseGrid(v)) - 1.0) <= 1e-3

    def test_against_fft(self):
        rng = np.random.default_rng(11)
        v = rng.random(300)
        ref = abs(np.fft.fft(v)[1]) / v.sum()
        assert abs(visibility_of_grid(PhaseGrid(v)) - ref) <= 1e-13

    def test_gaussian_sigma_half(self):
        g = PhaseGrid(wrapped_gaussian(4096, 1.0, 0.5))
        assert abs(visibility_of_grid(g) - np.exp(-0.125)) <= 1e-12

    @given(st.floats(0.05, 1.0), st.floats(0.0, TWO_PI))
    def test_gaussian_law(self, sigma, mu):
        g = PhaseGrid(wrapped_gaussian(4096, mu, sigma))
        ref = np.exp(-0.5 * sigma**2)
        assert abs(visibility_of_grid(g) - ref) / ref <= 1e-3

    @given(positive_grids, st.integers(-100, 100))
    def test_rotation_invariance(self, values, shift):
        g = PhaseGrid(values)
        assert abs(visibility_of_grid(g.rotate(shift)) - visibility_of_grid(g)) <= 1e-12

    @given(positive_grids, st.floats(1e-6, 1e6))
    def test_scale_invariance(self, values, alpha):
        g = PhaseGrid(values)
        assert abs(visibility_of_grid(PhaseGrid(alpha * values)) - visibility_of_grid(g)) <= 1e-12


class TestPointwiseProduct:
    def test_mismatch(self):
        with pytest.raises(GridMismatch):
            pointwise_product(PhaseGrid(np.ones(4)), PhaseGrid(np.ones(8)))

    def test_uniform_identity(self):
        b = PhaseGrid(np.random.default_rng(1).random(64))
        out = pointwise_product(PhaseGrid.uniform(64), b).normalize()
        np.testing.assert_allclose(out.values, b.normalize().values, rtol=1e-13)

    def test_cos_sin_product(self):
        n = 1024
        c = PhaseGrid.from_function(lambda t: np.cos(t / 2) ** 2, n)
        s = PhaseGrid.from_function(lambda t: np.sin(t / 2) ** 2, n)
        out = pointwise_product(c, s)
        t = c.coordinates()
        np.testing.assert_allclose(out.values, 0.25 * np.sin(t) ** 2, atol=1e-15)
        i = np.argsort(out.values)[-2:]
        np.testing.assert_allclose(np.sort(t[i]), [np.pi / 2, 3 * np.pi / 2])

    def test_shifted_powers_single_peak(self):
        n = 4096
        a = PhaseGrid.from_function(lambda t: np.cos(t / 2) ** 20, n)
        b = PhaseGrid.from_function(lambda t: np.cos((t - np.pi / 2) / 2) ** 20, n)
        out = pointwise_product(a, b)
        peak = out.coordinates()[np.argmax(out.values)]
        assert abs(peak - np.pi / 4) <= 2 * TWO_PI / n
        fit_gaussian(out)  # unimodal

    @given(positive_grids, st.data())
    def test_commutative_associative(self, a_vals, data):
        n = a_vals.size
        elems = st.floats(1e-3, 10.0)
        b_vals = data.draw(arrays(np.float64, n, elements=elems))
        c_vals = data.draw(arrays(np.float64, n, elements=elems))
        a, b, c = PhaseGrid(a_vals), PhaseGrid(b_vals), PhaseGrid(c_vals)
        np.testing.assert_array_equal(pointwise_product(a, b).values, pointwise_product(b, a).values)
        left = pointwise_product(pointwise_product(a, b), c).values
        right = pointwise_product(a, pointwise_product(b, c)).values
        np.testing.assert_allclose(left, right, rtol=4e-16, atol=0)


class TestFitGaussian:
    def test_self_consistency(self):
        n = 4096
        g = PhaseGrid(wrapped_gaussian(n, np.pi, 0.3))
        fit = fit_gaussian(g)
        assert abs(fit.sigma - 0.3) <= 0.003
        assert abs(fit.mean - np.pi) <= TWO_PI / n
        assert fit.goodness < 1e-8

    def test_cos_power_width(self):
        g = PhaseGrid.from_function(lambda t: np.cos(t / 2) ** 100, 4096)
        ref = np.sqrt(2 / 50)
        assert 0.9 * ref <= fit_gaussian(g).sigma <= 1.1 * ref

    def test_bimodal(self):
        g = PhaseGrid.from_function(lambda t: np.sin(t / 2) ** 20 * np.cos(t / 2) ** 20, 4096)
        with pytest.raises(BimodalDistribution) as info:
            fit_gaussian(g)
        peaks = sorted(info.value.peaks)
        np.testing.assert_allclose(peaks, [np.pi / 2, 3 * np.pi / 2], atol=2e-3)
