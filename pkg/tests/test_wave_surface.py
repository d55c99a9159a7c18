import math

import numpy as np
import pytest

from owcsim.wave_surface import (
    SpectralGrid,
    SpectrumParams,
    SurfaceRealization,
    realize_surface,
    spectrum_density,
    surface_gradient,
    surface_height,
    surface_unit_normal,
    write_surface_f32,
)


def reference_density(p: SpectrumParams, omega: float, theta: float) -> float:
    """Independent scalar transcription of the spectrum, term by term."""
    sigma = p.sigma_low if omega <= p.omega_peak else p.sigma_high
    r = math.exp(-((omega - p.omega_peak) ** 2) / (2 * sigma**2 * p.omega_peak**2))
    freq = (p.phillips_alpha * p.gravity**2 / omega**5
            * math.exp(-1.25 * (p.omega_peak / omega) ** 4)
            * p.peak_enhancement**r)
    direc = (1 + p.spread_p * math.cos(2 * theta) + p.spread_q * math.cos(4 * theta)) / math.pi
    return freq * direc


class TestSpectrumParams:
    def test_derived_closures(self, desk_params):
        g, u10, fetch = 9.80, 10.0, 2.0e4
        x_tilde = g * fetch / u10**2
        assert desk_params.phillips_alpha == pytest.approx(0.076 * x_tilde**-0.22, rel=1e-12)
        assert desk_params.omega_peak == pytest.approx(22 * (g**2 / (u10 * fetch)) ** (1 / 3), rel=1e-12)

    def test_explicit_overrides_win(self):
        p = SpectrumParams(phillips_alpha=0.02, omega_peak=1.5)
        assert p.phillips_alpha == 0.02
        assert p.omega_peak == 1.5

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError):
            SpectrumParams(wind_speed_10m=0.0)
        with pytest.raises(ValueError):
            SpectrumParams(peak_enhancement=0.5)
        with pytest.raises(ValueError):
            SpectrumParams(spread_p=2.0, spread_q=0.0)  # negative spreading lobe


class TestSpectrumDensity:
    def test_directional_factor_at_pi_over_2(self, desk_params):
        w = desk_params.omega_peak
        full = spectrum_density(desk_params, w, math.pi / 2)
        at_zero_dir = spectrum_density(desk_params, w, 0.0)
        freq_part = at_zero_dir / ((1 + 0.5 + 0.25) / math.pi)
        assert full == pytest.approx(freq_part * (1 - 0.5 + 0.25) / math.pi, rel=1e-12)

    def test_low_frequency_limit_vanishes(self, desk_params):
        assert spectrum_density(desk_params, desk_params.omega_peak / 5, 0.0) < 1e-200

    def test_peak_value_matches_reference(self, desk_params):
        w = desk_params.omega_peak
        assert spectrum_density(desk_params, w, 0.0) == pytest.approx(
            reference_density(desk_params, w, 0.0), rel=1e-13)
        # off-peak samples, both sigma branches
        for omega in (0.7 * w, 1.6 * w, 3.0 * w):
            for theta in (-1.2, 0.3, 1.5):
                assert spectrum_density(desk_params, omega, theta) == pytest.approx(
                    reference_density(desk_params, omega, theta), rel=1e-13)

    def test_domain_errors(self, desk_params):
        with pytest.raises(ValueError):
            spectrum_density(desk_params, 0.0, 0.0)
        with pytest.raises(ValueError):
            spectrum_density(desk_params, 1.0, 2.0)

    def test_non_negative_finite_on_grid(self, desk_params):
        grid = SpectralGrid.default(desk_params)
        om, th = np.meshgrid(grid.omegas, grid.thetas, indexing="ij")
        s = spectrum_density(desk_params, om, th)
        assert np.all(s >= 0) and np.all(np.isfinite(s))


class TestSpectralGrid:
    def test_default_shape_and_spacing(self, desk_params):
        grid = SpectralGrid.default(desk_params)
        assert grid.omegas.size == 64 and grid.thetas.size == 36
        assert np.all(np.diff(grid.omegas) > 0)
        assert np.allclose(np.diff(grid.omegas), grid.d_omega, rtol=1e-12)
        assert np.allclose(np.diff(grid.thetas), grid.d_theta, rtol=1e-12)
        assert np.all(np.abs(grid.thetas) < math.pi / 2)

    def test_nonuniform_rejected(self):
        with pytest.raises(ValueError):
            SpectralGrid(omegas=np.array([1.0, 2.0, 4.0]), thetas=np.array([0.0]),
                         d_omega=1.0, d_theta=0.1)

    def test_single_cell_allowed(self):
        grid = SpectralGrid(omegas=np.array([2.0]), thetas=np.array([0.0]),
                            d_omega=0.5, d_theta=0.2)
        assert grid.omegas.size == 1


class TestRealizeSurface:
    def test_zero_spectrum_gives_zero_amplitudes(self, desk_grid):
        params = SpectrumParams(phillips_alpha=0.0)
        surf = realize_surface(params, desk_grid, seed=3)
        assert np.all(surf.amplitudes == 0.0)
        assert surf.amplitude_sum == 0.0

    def test_single_cell_closed_form(self, desk_params):
        grid = SpectralGrid(omegas=np.array([2.0]), thetas=np.array([0.3]),
                            d_omega=0.25, d_theta=0.1)
        surf = realize_surface(desk_params, grid, seed=11)
        assert surf.n_components == 1
        expected = math.sqrt(spectrum_density(desk_params, 2.0, 0.3) * 0.25 * 0.1)
        assert surf.amplitudes[0] == pytest.approx(expected, rel=1e-14)
        k = 4.0 / desk_params.gravity
        assert surf.k_x[0] == pytest.approx(k * math.cos(0.3), rel=1e-14)
        assert surf.k_y[0] == pytest.approx(k * math.sin(0.3), rel=1e-14)

    def test_determinism_bit_identical(self, desk_params, desk_grid):
        s1 = realize_surface(desk_params, desk_grid, seed=77)
        s2 = realize_surface(desk_params, desk_grid, seed=77)
        for name in ("amplitudes", "omegas", "k_x", "k_y", "phases"):
            assert np.array_equal(getattr(s1, name), getattr(s2, name))
        s3 = realize_surface(desk_params, desk_grid, seed=78)
        assert np.any(s3.phases != s1.phases)

    def test_phases_in_range(self, desk_surface):
        assert np.all((desk_surface.phases >= 0) & (desk_surface.phases < 2 * math.pi))


def single_component_surface(amplitude=0.5, omega=2.0, theta=0.0, phase=0.0, g=9.80):
    k = omega**2 / g
    return SurfaceRealization(
        amplitudes=np.array([amplitude]), omegas=np.array([omega]),
        k_x=np.array([k * math.cos(theta)]), k_y=np.array([k * math.sin(theta)]),
        phases=np.array([phase]), seed=0)


class TestEvaluation:
    def test_zero_amplitude_height(self, flat_surface):
        assert surface_height(flat_surface, 3.0, -7.0, 2.5) == 0.0
        assert surface_gradient(flat_surface, 3.0, -7.0, 2.5) == (0.0, 0.0)

    def test_single_component_at_origin(self):
        surf = single_component_surface(amplitude=0.37)
        assert surface_height(surf, 0.0, 0.0, 0.0) == pytest.approx(0.37, abs=1e-15)

    def test_amplitude_bound(self, desk_surface):
        rng = np.random.default_rng(0)
        x, y = rng.uniform(-100, 100, (2, 1000))
        for t in (0.0, 1.7, 12.3):
            w = surface_height(desk_surface, x, y, t)
            assert np.max(np.abs(w)) <= desk_surface.amplitude_sum + 1e-12

    def test_gradient_matches_finite_differences(self, desk_surface):
        rng = np.random.default_rng(1)
        x, y = rng.uniform(-50, 50, (2, 1000))
        t = 2.0
        h = 1e-4
        wx, wy = surface_gradient(desk_surface, x, y, t)
        fx = (surface_height(desk_surface, x + h, y, t)
              - surface_height(desk_surface, x - h, y, t)) / (2 * h)
        fy = (surface_height(desk_surface, x, y + h, t)
              - surface_height(desk_surface, x, y - h, t)) / (2 * h)
        tol = np.maximum(1e-6, 1e-4 * np.hypot(wx, wy))
        assert np.all(np.abs(wx - fx) <= tol)
        assert np.all(np.abs(wy - fy) <= tol)

    def test_single_component_along_x_has_zero_dy(self):
        surf = single_component_surface(theta=0.0)
        rng = np.random.default_rng(2)
        for _ in range(20):
            x, y, t = rng.uniform(-10, 10, 3)
            _, wy = surface_gradient(surf, x, y, t)
            assert wy == 0.0

    def test_stationarity_mean_near_zero(self, desk_surface):
        rng = np.random.default_rng(3)
        n = 120_000
        x = rng.uniform(-200, 200, n)
        y = rng.uniform(-200, 200, n)
        t = rng.uniform(0, 60)
        w = surface_height(desk_surface, x, y, t)
        stderr = w.std(ddof=1) / math.sqrt(n)
        assert abs(w.mean()) < 3 * stderr

    def test_unit_normal_is_unit_and_upward(self, desk_surface):
        n = surface_unit_normal(desk_surface, np.array([0.0, 1.0]), np.array([2.0, -1.0]), 0.5)
        assert np.allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-12)
        assert np.all(n[:, 2] > 0)

    def test_batch_matches_scalar_bitwise(self, desk_surface):
        xs = np.array([0.3, -4.0, 17.2])
        ys = np.array([1.0, 2.0, -9.0])
        batch = surface_height(desk_surface, xs, ys, 1.25)
        singles = [surface_height(desk_surface, float(x), float(y), 1.25)
                   for x, y in zip(xs, ys)]
        assert np.array_equal(batch, np.array(singles))


def test_heightmap_export_roundtrip(tmp_path, desk_surface):
    path = tmp_path / "surface.f32"
    write_surface_f32(desk_surface, path, t=0.5, x0=-2.0, y0=-3.0,
                      dx=0.5, dy=0.25, rows=6, cols=9)
    raw = path.read_bytes()
    assert raw[:8] == b"OWCSURF1"
    rows = int.from_bytes(raw[8:12], "little")
    cols = int.from_bytes(raw[12:16], "little")
    dx = np.frombuffer(raw[16:20], dtype="<f4")[0]
    dy = np.frombuffer(raw[20:24], dtype="<f4")[0]
    assert (rows, cols) == (6, 9)
    assert (dx, dy) == (np.float32(0.5), np.float32(0.25))
    data = np.frombuffer(raw[24:], dtype="<f4").reshape(6, 9)
    expect = np.array([[surface_height(desk_surface, -2.0 + j * 0.5, -3.0 + i * 0.25, 0.5)
                        for j in range(9)] for i in range(6)], dtype=np.float32)
    assert np.array_equal(data, expect)
