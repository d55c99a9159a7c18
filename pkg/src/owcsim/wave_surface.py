"""Directional ocean-wave spectrum and harmonic sea-surface synthesis.

The sea surface is modeled as a stationary Gaussian process built from a
JONSWAP-type frequency spectrum with a cos(2*theta)/cos(4*theta) directional
spreading factor. A realization is a finite sum of deep-water harmonics

    W(x, y, t) = sum_ij A_ij * cos(omega_i*t - k_x*x - k_y*y + eps_ij)

with A_ij = sqrt(S(omega_i, theta_j) * d_omega * d_theta), wavenumber
k = omega^2 / g (deep water), and i.i.d. uniform phases eps_ij drawn from a
seeded xoshiro256** stream. Realizations are immutable and cheap to evaluate
at arbitrary (x, y, t), which is what the refraction solver and the renderer
need.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import Xoshiro256StarStar

GRAVITY_DEFAULT = 9.80


def _directional_minimum(p: float, q: float) -> float:
    """Minimum of 1 + p*cos(2t) + q*cos(4t) over |t| <= pi/2.

    With u = cos(2t) in [-1, 1] the factor is 2q*u^2 + p*u + (1 - q); the
    minimum is at an interval endpoint or the parabola vertex.
    """
    candidates = [1.0 + p + q, 1.0 - p + q]
    if abs(q) > 0.0:
        u_star = -p / (4.0 * q)
        if -1.0 <= u_star <= 1.0:
            candidates.append(2.0 * q * u_star * u_star + p * u_star + (1.0 - q))
    return min(candidates)


@dataclass(frozen=True)
class SpectrumParams:
    """Inputs of the directional wave spectrum.

    phillips_alpha and omega_peak may be passed explicitly; when left None
    they are filled from the standard fetch-limited empirical relations

        x_tilde = g*fetch/U10^2
        alpha   = 0.076 * x_tilde**-0.22
        omega_p = 22 * (g^2 / (U10*fetch))**(1/3)
    """

    gravity: float = GRAVITY_DEFAULT
    wind_speed_10m: float = 10.0
    fetch: float = 2.0e4
    peak_enhancement: float = 3.3
    spread_p: float = 0.5
    spread_q: float = 0.25
    sigma_low: float = 0.07
    sigma_high: float = 0.09
    phillips_alpha: float | None = None
    omega_peak: float | None = None

    def __post_init__(self):
        if self.gravity <= 0 or self.wind_speed_10m <= 0 or self.fetch <= 0:
            raise ValueError("gravity, wind speed, and fetch must be positive")
        if self.peak_enhancement < 1.0:
            raise ValueError("peak enhancement factor must be >= 1")
        if self.sigma_low <= 0 or self.sigma_high <= 0:
            raise ValueError("spectral widths must be positive")
        if _directional_minimum(self.spread_p, self.spread_q) < -1e-12:
            raise ValueError(
                "directional factor 1 + p*cos(2t) + q*cos(4t) is negative "
                f"for p={self.spread_p}, q={self.spread_q}"
            )
        if self.phillips_alpha is None:
            x_tilde = self.gravity * self.fetch / self.wind_speed_10m**2
            object.__setattr__(self, "phillips_alpha", 0.076 * x_tilde**-0.22)
        if self.omega_peak is None:
            wp = 22.0 * (self.gravity**2 / (self.wind_speed_10m * self.fetch)) ** (1.0 / 3.0)
            object.__setattr__(self, "omega_peak", wp)
        if self.omega_peak <= 0:
            raise ValueError("peak frequency must be positive")
        if self.phillips_alpha < 0:
            raise ValueError("spectrum scale constant must be non-negative")


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform (omega, theta) sampling cells for harmonic synthesis."""

    omegas: np.ndarray
    thetas: np.ndarray
    d_omega: float
    d_theta: float

    def __post_init__(self):
        omegas = np.asarray(self.omegas, dtype=np.float64)
        thetas = np.asarray(self.thetas, dtype=np.float64)
        omegas.setflags(write=False)
        thetas.setflags(write=False)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "thetas", thetas)
        if omegas.size == 0 or thetas.size == 0:
            raise ValueError("spectral grid must be non-empty")
        if self.d_omega <= 0 or self.d_theta <= 0:
            raise ValueError("grid spacings must be positive")
        if np.any(omegas <= 0):
            raise ValueError("angular frequencies must be positive")
        if np.any(np.abs(thetas) > math.pi / 2 + 1e-12):
            raise ValueError("direction angles must lie in [-pi/2, pi/2]")
        for vals, d, name in ((omegas, self.d_omega, "omega"), (thetas, self.d_theta, "theta")):
            if vals.size > 1:
                diffs = np.diff(vals)
                if np.any(diffs <= 0):
                    raise ValueError(f"{name} grid must be strictly increasing")
                if np.max(np.abs(diffs - d)) > 1e-12 * d:
                    raise ValueError(f"{name} grid spacing is not uniform")

    @classmethod
    def default(cls, params: SpectrumParams, n_omega: int = 64, n_theta: int = 36,
                omega_lo_factor: float = 0.5, omega_hi_factor: float = 5.0) -> "SpectralGrid":
        """Cell-midpoint grid over [lo, hi]*omega_peak x [-pi/2, pi/2]."""
        wp = params.omega_peak
        lo, hi = omega_lo_factor * wp, omega_hi_factor * wp
        d_omega = (hi - lo) / n_omega
        omegas = lo + (np.arange(n_omega) + 0.5) * d_omega
        d_theta = math.pi / n_theta
        thetas = -math.pi / 2 + (np.arange(n_theta) + 0.5) * d_theta
        return cls(omegas=omegas, thetas=thetas, d_omega=d_omega, d_theta=d_theta)


def spectrum_density(params: SpectrumParams, omega, theta):
    """Directional spectral density S(omega, theta) in m^2 s / rad^2.

    Product of the JONSWAP-style frequency spectrum

        a*g^2/omega^5 * exp(-1.25*(omega_p/omega)^4) * gamma**r,
        r = exp(-(omega - omega_p)^2 / (2*(sigma*omega_p)^2))

    (sigma = sigma_low for omega <= omega_p, else sigma_high) and the
    normalized spreading factor (1/pi)*(1 + p*cos(2*theta) + q*cos(4*theta)).
    Accepts scalars or broadcastable arrays; raises on omega <= 0 or
    |theta| > pi/2.
    """
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(omega <= 0):
        raise ValueError("spectral density requires omega > 0")
    if np.any(np.abs(theta) > math.pi / 2 + 1e-15):
        raise ValueError("spectral density requires |theta| <= pi/2")
    g = params.gravity
    wp = params.omega_peak
    a = params.phillips_alpha
    sigma = np.where(omega <= wp, params.sigma_low, params.sigma_high)
    peak_shape = np.exp(-((omega - wp) ** 2) / (2.0 * (sigma * wp) ** 2))
    freq_part = (
        a * g * g / omega**5
        * np.exp(-1.25 * (wp / omega) ** 4)
        * params.peak_enhancement**peak_shape
    )
    dir_part = (1.0 + params.spread_p * np.cos(2.0 * theta)
                + params.spread_q * np.cos(4.0 * theta)) / math.pi
    out = freq_part * dir_part
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SurfaceRealization:
    """Frozen harmonic decomposition of one sea-surface realization.

    Component arrays are flat (one entry per (omega, theta) cell, omega-major)
    and read-only; evaluation at any (x, y, t) is a pure function of them, so
    concurrent reads are safe.
    """

    amplitudes: np.ndarray
    omegas: np.ndarray
    k_x: np.ndarray
    k_y: np.ndarray
    phases: np.ndarray
    seed: int
    amplitude_sum: float = field(init=False)
    slope_bound: float = field(init=False)
    rate_bound: float = field(init=False)

    def __post_init__(self):
        for name in ("amplitudes", "omegas", "k_x", "k_y", "phases"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be non-negative")
        if np.any((self.phases < 0) | (self.phases >= 2 * math.pi)):
            raise ValueError("phases must lie in [0, 2*pi)")
        k_mag = np.hypot(self.k_x, self.k_y)
        object.__setattr__(self, "amplitude_sum", float(np.add.reduce(self.amplitudes)))
        object.__setattr__(self, "slope_bound", float(np.add.reduce(self.amplitudes * k_mag)))
        object.__setattr__(self, "rate_bound", float(np.add.reduce(self.amplitudes * self.omegas)))

    @property
    def n_components(self) -> int:
        return self.amplitudes.size

    @property
    def max_wavenumber(self) -> float:
        k_mag = np.hypot(self.k_x, self.k_y)
        return float(np.max(k_mag)) if k_mag.size else 0.0

    def height(self, x, y, t: float):
        return surface_height(self, x, y, t)

    def gradient(self, x, y, t: float):
        return surface_gradient(self, x, y, t)


def realize_surface(params: SpectrumParams, grid: SpectralGrid, seed: int) -> SurfaceRealization:
    """Draw one surface realization from the spectrum on the given grid.

    Amplitudes are sqrt(S * d_omega * d_theta) per cell; phases come from a
    xoshiro256** stream seeded with `seed`, in omega-major cell order, so the
    same (params, grid, seed) triple always yields a bit-identical realization.
    """
    omegas_2d, thetas_2d = np.meshgrid(grid.omegas, grid.thetas, indexing="ij")
    density = spectrum_density(params, omegas_2d, thetas_2d)
    amplitudes = np.sqrt(density * grid.d_omega * grid.d_theta).ravel()
    k_mag = (omegas_2d**2 / params.gravity).ravel()
    thetas_flat = thetas_2d.ravel()
    rng = Xoshiro256StarStar(seed)
    phases = rng.phases(amplitudes.size)
    return SurfaceRealization(
        amplitudes=amplitudes,
        omegas=omegas_2d.ravel(),
        k_x=k_mag * np.cos(thetas_flat),
        k_y=k_mag * np.sin(thetas_flat),
        phases=phases,
        seed=seed,
    )


def _component_phase(surf: SurfaceRealization, x, y, t: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return (
        surf.omegas * t + surf.phases
        - surf.k_x * x[..., np.newaxis]
        - surf.k_y * y[..., np.newaxis]
    )


def surface_height(surf: SurfaceRealization, x, y, t: float):
    """Elevation W(x, y, t); x and y may be arrays of matching shape.

    The component reduction uses np.add.reduce along the component axis so
    the summation order (and hence the result, bit for bit) is independent of
    how many points are evaluated per call.
    """
    phase = _component_phase(surf, x, y, t)
    w = np.add.reduce(surf.amplitudes * np.cos(phase), axis=-1)
    return float(w) if w.ndim == 0 else w


def surface_gradient(surf: SurfaceRealization, x, y, t: float):
    """Spatial gradient (dW/dx, dW/dy), term-wise analytic."""
    phase = _component_phase(surf, x, y, t)
    s = np.sin(phase)
    wx = np.add.reduce(surf.amplitudes * surf.k_x * s, axis=-1)
    wy = np.add.reduce(surf.amplitudes * surf.k_y * s, axis=-1)
    if wx.ndim == 0:
        return float(wx), float(wy)
    return wx, wy


def surface_unit_normal(surf: SurfaceRealization, x, y, t: float):
    """Upward unit normal(s) of the surface at (x, y).

    The raw downward normal of the graph z = W is [dW/dx, dW/dy, -1]; this
    returns its negated, normalized counterpart pointing into the air, which
    is the orientation the optics code expects.
    """
    wx, wy = surface_gradient(surf, x, y, t)
    wx = np.asarray(wx, dtype=np.float64)
    wy = np.asarray(wy, dtype=np.float64)
    norm = np.sqrt(wx * wx + wy * wy + 1.0)
    n = np.stack([-wx / norm, -wy / norm, np.full_like(wx, 1.0) / norm], axis=-1)
    return n


def write_surface_f32(surf: SurfaceRealization, path, t: float,
                      x0: float, y0: float, dx: float, dy: float,
                      rows: int, cols: int) -> None:
    """Export a heightmap snapshot for visual inspection.

    Binary layout: 8-byte magic "OWCSURF1", u32 rows, u32 cols, f32 dx,
    f32 dy (all little-endian), then rows*cols row-major little-endian f32
    heights sampled at (x0 + j*dx, y0 + i*dy).
    """
    xs = x0 + np.arange(cols) * dx
    ys = y0 + np.arange(rows) * dy
    gx, gy = np.meshgrid(xs, ys)
    z = surface_height(surf, gx.ravel(), gy.ravel(), t).astype("<f4")
    header = b"OWCSURF1" + struct.pack("<IIff", rows, cols, dx, dy)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(z.tobytes())
