"""Direct-path geometry across the interface and the link gain chain.

The direct path from a submerged transmitter T to an airborne receiver R
crosses the surface at the point S that minimizes the optical path length
n_water*|T-S| + n_air*|S-R| subject to S lying on the instantaneous surface.
At that minimum the path satisfies Snell's law against the local surface
normal, which is what `snell_residual` checks.

The received intensity is transmit intensity times four multiplicative
factors: emitter directivity (departure-angle roll-off), receiver
concentrator gain with a hard field-of-view cutoff, Beer-Lambert plus
inverse-square path attenuation, and unpolarized Fresnel transmittance at
the interface. All operations here are pure functions of immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .wave_surface import SurfaceRealization, surface_height, surface_unit_normal

REFINE_XATOL = 1e-8
REFINE_FATOL = 1e-10


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def angle_between(u, v) -> float:
    """Angle in [0, pi] between two vectors (not required to be unit)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    c = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.acos(min(1.0, max(-1.0, c)))


@dataclass(frozen=True)
class OpticalConstants:
    """Refractive, attenuation, and transceiver constants of one link."""

    n_water: float = 1.33
    n_air: float = 1.0003
    wavelength: float = 532e-9
    absorb_water: float = 1.80e-2
    scatter_water: float = 3.81e-3
    absorb_air: float = 1e-7
    scatter_air: float = 2.96e-5
    max_departure_angle: float = math.pi / 600
    max_arrival_angle: float = math.pi / 3
    transmit_intensity: float = 1.0
    # Beacon disc radius. Large enough that the pixel-ray lattice cannot
    # step over the disc at 10-25 m slant range, small enough that disc
    # parallax re-images within ~2 pixels for transmitters 10 m down.
    source_radius: float = 0.1

    def __post_init__(self):
        if not self.n_water > self.n_air >= 1.0:
            raise ValueError("need n_water > n_air >= 1")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        for name in ("absorb_water", "scatter_water", "absorb_air", "scatter_air"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.max_departure_angle < self.max_arrival_angle < math.pi / 2:
            raise ValueError("need 0 < max_departure_angle < max_arrival_angle < pi/2")
        if self.transmit_intensity <= 0 or self.source_radius <= 0:
            raise ValueError("transmit intensity and source radius must be positive")

    @property
    def critical_sine(self) -> float:
        """sin of the water-side total-internal-reflection angle."""
        return self.n_air / self.n_water


@dataclass(frozen=True)
class LinkGeometry:
    """One scene snapshot: transceiver placement over a surface realization."""

    transmitter: np.ndarray
    receiver: np.ndarray
    tx_boresight: np.ndarray
    rx_boresight: np.ndarray
    t: float
    surf: SurfaceRealization

    def __post_init__(self):
        for name in ("transmitter", "receiver", "tx_boresight", "rx_boresight"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("tx_boresight", "rx_boresight"):
            if abs(float(np.linalg.norm(getattr(self, name))) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be unit-norm")
        w_t = surface_height(self.surf, self.transmitter[0], self.transmitter[1], self.t)
        w_r = surface_height(self.surf, self.receiver[0], self.receiver[1], self.t)
        if not self.transmitter[2] < w_t:
            raise ValueError("transmitter must be below the surface")
        if not self.receiver[2] > w_r:
            raise ValueError("receiver must be above the surface")


@dataclass(frozen=True)
class RefractionSolution:
    """Minimum-OPL crossing point and the angles it makes with the normal."""

    point: np.ndarray
    opl: float
    d_water: float
    d_air: float
    theta_incidence: float
    theta_transmission: float
    converged: bool
    iterations: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.point, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "point", arr)


@dataclass(frozen=True)
class GainBreakdown:
    """The four gain factors, their product, and the angles that set them."""

    g_departure: float
    g_arrival: float
    g_path: float
    g_fresnel: float
    g_total: float
    alpha_departure: float
    alpha_arrival: float
    converged: bool = True

    @classmethod
    def failed(cls, alpha_departure: float = 0.0, alpha_arrival: float = 0.0) -> "GainBreakdown":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, alpha_departure, alpha_arrival, converged=False)


def _opl_of_xy(xs, ys, geom: LinkGeometry, const: OpticalConstants):
    """Optical path length at surface points above (xs, ys); vectorized."""
    z = surface_height(geom.surf, xs, ys, geom.t)
    tx, ty, tz = geom.transmitter
    rx, ry, rz = geom.receiver
    d_w = np.sqrt((xs - tx) ** 2 + (ys - ty) ** 2 + (z - tz) ** 2)
    d_a = np.sqrt((xs - rx) ** 2 + (ys - ry) ** 2 + (z - rz) ** 2)
    return const.n_water * d_w + const.n_air * d_a


def solve_refraction_point(geom: LinkGeometry, const: OpticalConstants,
                           grid_points: int = 41, pad: float = 2.0,
                           max_iter: int = 500) -> RefractionSolution:
    """Find the surface point minimizing the optical path length.

    A grid_points x grid_points coarse scan over the transceiver footprint
    (padded by `pad` meters) seeds a Nelder-Mead refinement on (x, y) with
    the surface constraint substituted in. Non-convergence is reported via
    the flag, never raised; on rough seas with several local minima the
    lowest value found is returned.
    """
    tx, ty = geom.transmitter[0], geom.transmitter[1]
    rx, ry = geom.receiver[0], geom.receiver[1]
    xs = np.linspace(min(tx, rx) - pad, max(tx, rx) + pad, grid_points)
    ys = np.linspace(min(ty, ry) - pad, max(ty, ry) + pad, grid_points)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    opl_grid = _opl_of_xy(gx.ravel(), gy.ravel(), geom, const)
    best = int(np.argmin(opl_grid))
    x0 = np.array([gx.ravel()[best], gy.ravel()[best]])

    res = minimize(
        lambda xy: float(_opl_of_xy(xy[0], xy[1], geom, const)),
        x0,
        method="Nelder-Mead",
        options=dict(xatol=REFINE_XATOL, fatol=REFINE_FATOL,
                     maxiter=max_iter, maxfev=4 * max_iter),
    )
    x_s, y_s = float(res.x[0]), float(res.x[1])
    z_s = surface_height(geom.surf, x_s, y_s, geom.t)
    point = np.array([x_s, y_s, z_s])
    d_w = float(np.linalg.norm(point - geom.transmitter))
    d_a = float(np.linalg.norm(geom.receiver - point))
    opl = const.n_water * d_w + const.n_air * d_a

    normal = surface_unit_normal(geom.surf, x_s, y_s, geom.t)
    theta_i = angle_between(point - geom.transmitter, normal)
    theta_t = angle_between(geom.receiver - point, normal)
    return RefractionSolution(
        point=point, opl=opl, d_water=d_w, d_air=d_a,
        theta_incidence=theta_i, theta_transmission=theta_t,
        converged=bool(res.success), iterations=int(res.nit),
    )


def snell_residual(sol: RefractionSolution, const: OpticalConstants) -> float:
    """|n_water*sin(theta_i) - n_air*sin(theta_t)|; ~0 at a true minimum."""
    return abs(const.n_water * math.sin(sol.theta_incidence)
               - const.n_air * math.sin(sol.theta_transmission))


def gain_departure(alpha: float, const: OpticalConstants) -> float:
    """Emitter directivity factor in (0, 1]; 1 at boresight.

    exp(-2*sin^2(a) / (w_D^2 * (1 + (lambda*cos(a)/(pi*w_D^2))^2))) for
    a in [0, pi/2); beyond a right angle the emitter radiates nothing and
    the factor is 0. Negative or non-finite angles are rejected.
    """
    if not math.isfinite(alpha) or alpha < 0:
        raise ValueError("departure angle must be finite and non-negative")
    if alpha >= math.pi / 2:
        return 0.0
    w2 = const.max_departure_angle**2
    corr = 1.0 + (const.wavelength * math.cos(alpha) / (math.pi * w2)) ** 2
    return math.exp(-2.0 * math.sin(alpha) ** 2 / (w2 * corr))


def gain_arrival(alpha: float, const: OpticalConstants) -> float:
    """Receiver concentrator gain with hard field-of-view cutoff.

    n_air^2 * cos(a) / sin^2(w_A) for a <= w_A; 0 beyond the field of view
    (a receiver cannot collect light arriving outside its acceptance cone).
    """
    if not math.isfinite(alpha) or alpha < 0 or alpha > math.pi:
        raise ValueError("arrival angle must lie in [0, pi]")
    if alpha > const.max_arrival_angle:
        return 0.0
    return const.n_air**2 * math.cos(alpha) / math.sin(const.max_arrival_angle) ** 2


def gain_path(d_water: float, d_air: float, const: OpticalConstants) -> float:
    """Beer-Lambert medium attenuation over inverse-square spreading."""
    if d_water < 0 or d_air < 0:
        raise ValueError("propagation distances must be non-negative")
    total = d_water + d_air
    if total <= 0:
        raise ValueError("total propagation distance must be positive")
    decay = ((const.absorb_water + const.scatter_water) * d_water
             + (const.absorb_air + const.scatter_air) * d_air)
    return math.exp(-decay) / total**2


def gain_fresnel(theta_i: float, theta_t: float, const: OpticalConstants) -> float:
    """Unpolarized Fresnel transmittance for the water-to-air crossing.

    1 - (R_s + R_p)/2 with the water side as the incidence medium; returns 0
    at or beyond the critical angle (total internal reflection).
    """
    if not 0.0 <= theta_i < math.pi / 2:
        raise ValueError("incidence angle must lie in [0, pi/2)")
    if math.sin(theta_i) >= const.critical_sine:
        return 0.0
    n1, n2 = const.n_water, const.n_air
    c1, c2 = math.cos(theta_i), math.cos(theta_t)
    r_s = ((n1 * c1 - n2 * c2) / (n1 * c1 + n2 * c2)) ** 2
    r_p = ((n2 * c1 - n1 * c2) / (n2 * c1 + n1 * c2)) ** 2
    return min(1.0, max(0.0, 1.0 - 0.5 * (r_s + r_p)))


def gain_total(geom: LinkGeometry, const: OpticalConstants,
               solution: RefractionSolution | None = None) -> GainBreakdown:
    """Solve the crossing (unless given) and multiply the four factors.

    alpha_departure is the angle between the transmitter boresight and the
    outgoing ray T->S; alpha_arrival between the receiver boresight and the
    line of sight R->S. Solver non-convergence yields a flagged zero-gain
    breakdown instead of an exception.
    """
    sol = solution if solution is not None else solve_refraction_point(geom, const)
    alpha_d = angle_between(geom.tx_boresight, sol.point - geom.transmitter)
    alpha_a = angle_between(geom.rx_boresight, sol.point - geom.receiver)
    if not sol.converged:
        return GainBreakdown.failed(alpha_d, alpha_a)
    g_d = gain_departure(alpha_d, const) if alpha_d < math.pi / 2 else 0.0
    g_a = gain_arrival(alpha_a, const)
    g_p = gain_path(sol.d_water, sol.d_air, const)
    g_f = gain_fresnel(min(sol.theta_incidence, math.nextafter(math.pi / 2, 0.0)),
                       sol.theta_transmission, const)
    return GainBreakdown(
        g_departure=g_d, g_arrival=g_a, g_path=g_p, g_fresnel=g_f,
        g_total=g_d * g_a * g_p * g_f,
        alpha_departure=alpha_d, alpha_arrival=alpha_a,
    )
