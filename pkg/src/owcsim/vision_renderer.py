"""Backward ray-traced imaging of the submerged beacon onto a screen.

One ray per pixel leaves the screen through the focus point, descends to the
moving surface, refracts into the water, and is tested against a disc of
radius R0 around the transmitter. Pixels whose refracted rays pass the disc
test receive the full channel gain evaluated along their own path; the rest
stay dark. Rendering a frame is a pure function of the scene, bit-identical
regardless of how the pixel grid is chunked across workers.

The ray-surface intersection is the hot path. Rays are first advanced
analytically to just above the highest point the surface can reach (a bound
sharpened per frame by a coarse scan plus a Lipschitz margin), then marched
in fixed steps until the elevation residual changes sign, and finally
polished inside that bracket with a safeguarded false-position iteration to
sub-nanometer residual. All stages operate on the whole active ray set at
once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel_optics import (
    GainBreakdown,
    LinkGeometry,
    OpticalConstants,
    gain_total,
    solve_refraction_point,
    unit,
)
from .wave_surface import SurfaceRealization, surface_gradient, surface_height

MARCH_STEP = 0.05
MAX_RANGE = 500.0
RESIDUAL_TOL = 1e-10
WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: screen plane at `position`, focus behind it."""

    position: np.ndarray
    boresight: np.ndarray
    e_i: np.ndarray
    e_j: np.ndarray
    focal_length: float = 0.015
    pixel_pitch: float = 1e-4
    rows: int = 64
    cols: int = 64

    def __post_init__(self):
        for name in ("position", "boresight", "e_i", "e_j"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.focal_length <= 0 or self.pixel_pitch <= 0:
            raise ValueError("focal length and pixel pitch must be positive")
        if self.rows < 8 or self.cols < 8:
            raise ValueError("image must be at least 8x8")
        basis = np.stack([self.e_i, self.e_j, self.boresight])
        if not np.allclose(basis @ basis.T, np.eye(3), atol=1e-12):
            raise ValueError("screen basis {e_i, e_j, boresight} must be orthonormal")

    @classmethod
    def from_boresight(cls, position, boresight, focal_length: float = 0.015,
                       pixel_pitch: float = 1e-4, rows: int = 64, cols: int = 64) -> "CameraModel":
        """Build the screen basis by Gram-Schmidt of world-up against the boresight.

        A straight-up or straight-down boresight degenerates the projection;
        it falls back to the world x/y axes.
        """
        b = unit(boresight)
        residual = WORLD_UP - np.dot(WORLD_UP, b) * b
        if np.linalg.norm(residual) < 1e-9:
            e_i = np.array([1.0, 0.0, 0.0])
            e_j = np.array([0.0, 1.0, 0.0])
        else:
            e_i = residual / np.linalg.norm(residual)
            e_j = np.cross(b, e_i)
        return cls(position=np.asarray(position, dtype=np.float64), boresight=b,
                   e_i=e_i, e_j=e_j, focal_length=focal_length,
                   pixel_pitch=pixel_pitch, rows=rows, cols=cols)

    @property
    def focus(self) -> np.ndarray:
        return self.position - self.focal_length * self.boresight

    def center_crop(self, rows: int, cols: int) -> "CameraModel":
        """Camera seeing only the centered rows x cols window of the screen.

        Requires matching parity so the crop keeps the optical center; the
        cropped camera's pixel (i, j) coincides with the full camera's pixel
        (i + (M - rows)/2, j + (N - cols)/2).
        """
        if rows > self.rows or cols > self.cols:
            raise ValueError("crop exceeds sensor size")
        if (self.rows - rows) % 2 or (self.cols - cols) % 2:
            raise ValueError("crop must preserve the screen center")
        return CameraModel(position=self.position, boresight=self.boresight,
                           e_i=self.e_i, e_j=self.e_j, focal_length=self.focal_length,
                           pixel_pitch=self.pixel_pitch, rows=rows, cols=cols)


@dataclass(frozen=True)
class TraceRay:
    origin: np.ndarray
    direction: np.ndarray
    stage: str = "screen"

    def __post_init__(self):
        for name in ("origin", "direction"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if abs(float(np.linalg.norm(self.direction)) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit-norm")


@dataclass(frozen=True)
class FrameTruth:
    """Ground truth attached to a rendered frame."""

    direction: np.ndarray
    refraction_point: np.ndarray
    gain: GainBreakdown

    def __post_init__(self):
        for name in ("direction", "refraction_point"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class IntensityFrame:
    pixels: np.ndarray
    t: float
    camera: CameraModel
    truth: Optional[FrameTruth] = None

    def __post_init__(self):
        arr = np.ascontiguousarray(self.pixels, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)
        if arr.shape != (self.camera.rows, self.camera.cols):
            raise ValueError("pixel grid does not match camera dimensions")
        if np.any(~np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("pixel intensities must be finite and non-negative")


def _pixel_origins(camera: CameraModel, i, j) -> np.ndarray:
    """Screen positions for 1-based (fractional) pixel indices."""
    i = np.asarray(i, dtype=np.float64)
    j = np.asarray(j, dtype=np.float64)
    off_i = (i - camera.rows / 2.0) * camera.pixel_pitch
    off_j = (j - camera.cols / 2.0) * camera.pixel_pitch
    return (camera.position
            + off_i[..., np.newaxis] * camera.e_i
            + off_j[..., np.newaxis] * camera.e_j)


def pixel_ray(camera: CameraModel, i, j) -> TraceRay:
    """Backward ray of pixel (i, j), 1-based, i in [1, M], j in [1, N].

    Fractional indices are allowed (sub-pixel rays); the direction runs from
    the focus point through the screen position, so the central pixel
    (M/2, N/2) looks exactly along the boresight.
    """
    if not (1 <= i <= camera.rows and 1 <= j <= camera.cols):
        raise IndexError("pixel index out of range")
    origin = _pixel_origins(camera, float(i), float(j))
    direction = unit(origin - camera.focus)
    return TraceRay(origin=origin, direction=direction, stage="screen")


def _tight_z_bounds(surf: SurfaceRealization, origins, dirs, t, z_hi, z_lo, active):
    """Shrink the amplitude-bound elevation band using a coarse surface scan.

    The scan covers the xy bounding box of every active ray's track through
    the global band; max/min over the scan plus a slope-Lipschitz margin per
    cell bounds the surface over that box, so no crossing can escape the
    returned band.
    """
    if surf.n_components == 0 or surf.amplitude_sum == 0.0 or not np.any(active):
        return z_hi, z_lo
    k_hi = (z_hi - origins[active, 2]) / dirs[active, 2]
    k_lo = (z_lo - origins[active, 2]) / dirs[active, 2]
    k_hi = np.maximum(k_hi, 0.0)
    pts = np.concatenate([
        origins[active, :2] + k_hi[:, None] * dirs[active, :2],
        origins[active, :2] + k_lo[:, None] * dirs[active, :2],
    ])
    x0, y0 = pts[:, 0].min(), pts[:, 1].min()
    x1, y1 = pts[:, 0].max(), pts[:, 1].max()
    extent = max(x1 - x0, y1 - y0, 1e-6)
    if extent > 400.0:
        return z_hi, z_lo
    n = int(min(96, max(24, math.ceil(extent / 0.35))))
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    gx, gy = np.meshgrid(xs, ys)
    w = surface_height(surf, gx.ravel(), gy.ravel(), t)
    cell = extent / (n - 1)
    margin = surf.slope_bound * cell * 0.7071 + 1e-9
    return min(z_hi, float(w.max()) + margin), max(z_lo, float(w.min()) - margin)


def intersect_rays(origins, dirs, surf: SurfaceRealization, t: float,
                   step: float = MARCH_STEP, max_range: float = MAX_RANGE):
    """First surface crossing for a batch of downward rays.

    Returns (points (P, 3), hit (P,), k (P,)). Rays that do not descend, or
    whose crossing would lie beyond max_range, are misses. Hit points satisfy
    |z - W(x, y, t)| < 1e-9 m.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = origins.shape[0]
    points = np.zeros((n, 3))
    k_out = np.full(n, np.nan)
    hit = np.zeros(n, dtype=bool)

    rz = dirs[:, 2]
    active = rz < -1e-12
    if not np.any(active):
        return points, hit, k_out

    bound = surf.amplitude_sum + 1e-7
    z_hi, z_lo = _tight_z_bounds(surf, origins, dirs, t, bound, -bound, active)

    # Above z_hi the residual f = z - W is positive by construction, so the
    # march can start there; below z_lo it is negative, so a sign change is
    # guaranteed before k reaches k_end (unless capped by max_range).
    k_start = np.zeros(n)
    k_end = np.zeros(n)
    k_start[active] = np.maximum((z_hi - origins[active, 2]) / rz[active], 0.0)
    k_end[active] = (z_lo - origins[active, 2]) / rz[active]
    feasible = active & (k_start <= max_range) & (k_end > 0)
    k_end = np.minimum(k_end, max_range)

    idx = np.flatnonzero(feasible)
    if idx.size == 0:
        return points, hit, k_out

    def residual(sub_idx, k):
        p = origins[sub_idx] + k[:, None] * dirs[sub_idx]
        return p[:, 2] - surface_height(surf, p[:, 0], p[:, 1], t)

    # March until the residual flips sign; per-ray brackets [a, b].
    a = np.zeros(n)
    fa = np.zeros(n)
    b = np.zeros(n)
    fb = np.zeros(n)
    bracketed = np.zeros(n, dtype=bool)

    cur_k = k_start.copy()
    cur_f = np.zeros(n)
    cur_f[idx] = residual(idx, cur_k[idx])
    below = idx[cur_f[idx] <= 0.0]
    # A non-positive residual at the start means the origin region already
    # intersects the band edge; treat the start as the bracket's far side.
    if below.size:
        a[below] = np.maximum(cur_k[below] - step, 0.0)
        fa[below] = residual(below, a[below])
        b[below] = cur_k[below]
        fb[below] = cur_f[below]
        bracketed[below] = True
    marching = np.setdiff1d(idx, below, assume_unique=True)
    while marching.size:
        prev_k = cur_k[marching]
        prev_f = cur_f[marching]
        next_k = np.minimum(prev_k + step, k_end[marching])
        next_f = residual(marching, next_k)
        crossed = next_f <= 0.0
        hit_rays = marching[crossed]
        a[hit_rays] = prev_k[crossed]
        fa[hit_rays] = prev_f[crossed]
        b[hit_rays] = next_k[crossed]
        fb[hit_rays] = next_f[crossed]
        bracketed[hit_rays] = True
        exhausted = ~crossed & (next_k >= k_end[marching])
        keep = ~crossed & ~exhausted
        cur_k[marching] = next_k
        cur_f[marching] = next_f
        marching = marching[keep]

    # Safeguarded false position (Illinois) inside each bracket.
    work = np.flatnonzero(bracketed)
    side = np.zeros(n, dtype=np.int8)
    root = np.where(np.abs(fb) <= RESIDUAL_TOL, b, np.nan)
    done_now = ~np.isnan(root[work])
    solved = work[done_now]
    work = work[~done_now]
    for _ in range(80):
        if work.size == 0:
            break
        denom = fb[work] - fa[work]
        c = np.where(np.abs(denom) > 0.0,
                     (a[work] * fb[work] - b[work] * fa[work]) / denom,
                     0.5 * (a[work] + b[work]))
        mid = 0.5 * (a[work] + b[work])
        inside = (c > a[work]) & (c < b[work])
        c = np.where(inside, c, mid)
        fc = residual(work, c)
        repl_a = fc > 0.0
        same_a = repl_a & (side[work] == 1)
        same_b = ~repl_a & (side[work] == -1)
        fb[work[same_a]] *= 0.5
        fa[work[same_b]] *= 0.5
        wa = work[repl_a]
        a[wa] = c[repl_a]
        fa[wa] = fc[repl_a]
        wb = work[~repl_a]
        b[wb] = c[~repl_a]
        fb[wb] = fc[~repl_a]
        side[work] = np.where(repl_a, 1, -1)
        finished = (np.abs(fc) <= RESIDUAL_TOL) | ((b[work] - a[work]) < 1e-12)
        root[work[finished]] = c[finished]
        solved = np.concatenate([solved, work[finished]])
        work = work[~finished]
    if work.size:
        root[work] = 0.5 * (a[work] + b[work])
        solved = np.concatenate([solved, work])

    k_hit = root[solved]
    pts = origins[solved] + k_hit[:, None] * dirs[solved]
    pts[:, 2] = surface_height(surf, pts[:, 0], pts[:, 1], t)
    points[solved] = pts
    k_out[solved] = k_hit
    hit[solved] = True
    return points, hit, k_out


def intersect_surface(ray: TraceRay, surf: SurfaceRealization, t: float,
                      step: float = MARCH_STEP, max_range: float = MAX_RANGE):
    """First surface crossing of one ray, or None if it misses."""
    pts, hit, _ = intersect_rays(ray.origin[None, :], ray.direction[None, :],
                                 surf, t, step=step, max_range=max_range)
    return pts[0] if hit[0] else None


def refract_directions(dirs, normals, const: OpticalConstants):
    """Vector Snell refraction of downward rays entering the water.

    dirs and normals are (P, 3); normals point up (against the rays). The
    index ratio is n_air/n_water since the traced rays travel air -> water.
    Returns (refracted (P, 3), tir (P,)); the radicand cannot go negative for
    this direction of travel, but the guard stays for safety.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    eta = const.n_air / const.n_water
    cos_i = -np.einsum("ij,ij->i", dirs, normals)
    rad = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    tir = rad < 0.0
    safe = np.sqrt(np.maximum(rad, 0.0))
    out = eta * dirs + (eta * cos_i - safe)[:, None] * normals
    norms = np.linalg.norm(out, axis=1)
    norms[norms == 0.0] = 1.0
    return out / norms[:, None], tir


def refract_backward(ray_dir, normal, const: OpticalConstants):
    """Single-ray refraction into the water; None on total internal reflection."""
    d = np.asarray(ray_dir, dtype=np.float64)
    nrm = np.asarray(normal, dtype=np.float64)
    if np.dot(d, nrm) >= 0:
        raise ValueError("ray must travel against the upward normal")
    out, tir = refract_directions(d[None, :], nrm[None, :], const)
    return None if tir[0] else out[0]


def source_miss_distance(origin, direction, target) -> float:
    """Disc-test metric: | |v|*r - v | with v the origin-to-target vector."""
    v = np.asarray(target, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    return float(np.linalg.norm(np.linalg.norm(v) * np.asarray(direction) - v))


def source_hit_test(ray: TraceRay, target, radius: float) -> bool:
    """True iff the ray passes within `radius` of the target, boundary
    inclusive, with the target on the forward side of the ray origin."""
    v = np.asarray(target, dtype=np.float64) - ray.origin
    if float(np.dot(v, ray.direction)) <= 0.0:
        return False
    return source_miss_distance(ray.origin, ray.direction, target) <= radius


def _render_chunk(camera: CameraModel, geom: LinkGeometry, const: OpticalConstants,
                  rows_1b: np.ndarray) -> np.ndarray:
    """Render the given 1-based pixel rows; returns (len(rows), N) intensities."""
    m, n = camera.rows, camera.cols
    ii, jj = np.meshgrid(rows_1b.astype(np.float64), np.arange(1, n + 1, dtype=np.float64),
                         indexing="ij")
    origins = _pixel_origins(camera, ii.ravel(), jj.ravel())
    focus = camera.focus
    dirs = origins - focus
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]

    out = np.zeros(origins.shape[0])
    b1, hit, _ = intersect_rays(origins, dirs, geom.surf, geom.t)
    if np.any(hit):
        h = np.flatnonzero(hit)
        wx, wy = surface_gradient(geom.surf, b1[h, 0], b1[h, 1], geom.t)
        denom = np.sqrt(wx * wx + wy * wy + 1.0)
        normals = np.stack([-wx / denom, -wy / denom, 1.0 / denom], axis=1)
        refr, tir = refract_directions(dirs[h], normals, const)
        h = h[~tir]
        refr = refr[~tir]
        normals = normals[~tir]
        if h.size:
            v = geom.transmitter[None, :] - b1[h]
            v_norm = np.linalg.norm(v, axis=1)
            miss = np.linalg.norm(v_norm[:, None] * refr - v, axis=1)
            passes = (miss <= const.source_radius) & (np.einsum("ij,ij->i", v, refr) > 0.0)
            h = h[passes]
            if h.size:
                refr = refr[passes]
                normals = normals[passes]
                up_water = -refr
                up_air = -dirs[h]
                cos_w = np.clip(np.einsum("ij,ij->i", up_water, normals), -1.0, 1.0)
                cos_a = np.clip(np.einsum("ij,ij->i", up_air, normals), -1.0, 1.0)
                alpha_d = np.arccos(np.clip(
                    np.einsum("ij,j->i", -refr, geom.tx_boresight), -1.0, 1.0))
                alpha_a = np.arccos(np.clip(
                    np.einsum("ij,j->i", dirs[h], geom.rx_boresight), -1.0, 1.0))
                d_w = np.linalg.norm(b1[h] - geom.transmitter[None, :], axis=1)
                d_a = np.linalg.norm(origins[h] - b1[h], axis=1)

                w2 = const.max_departure_angle**2
                corr = 1.0 + (const.wavelength * np.cos(alpha_d) / (math.pi * w2)) ** 2
                g_d = np.where(alpha_d < math.pi / 2,
                               np.exp(-2.0 * np.sin(alpha_d) ** 2 / (w2 * corr)), 0.0)
                g_a = np.where(alpha_a <= const.max_arrival_angle,
                               const.n_air**2 * np.cos(alpha_a)
                               / math.sin(const.max_arrival_angle) ** 2, 0.0)
                decay = ((const.absorb_water + const.scatter_water) * d_w
                         + (const.absorb_air + const.scatter_air) * d_a)
                g_p = np.exp(-decay) / (d_w + d_a) ** 2
                n1, n2 = const.n_water, const.n_air
                r_s = ((n1 * cos_w - n2 * cos_a) / (n1 * cos_w + n2 * cos_a)) ** 2
                r_p = ((n2 * cos_w - n1 * cos_a) / (n2 * cos_w + n1 * cos_a)) ** 2
                g_f = np.clip(1.0 - 0.5 * (r_s + r_p), 0.0, 1.0)
                out[h] = const.transmit_intensity * g_d * g_a * g_p * g_f
    return out.reshape(rows_1b.size, n)


def render(camera: CameraModel, geom: LinkGeometry, const: OpticalConstants,
           jobs: int = 1, with_truth: bool = True) -> IntensityFrame:
    """Trace every pixel of the screen and assemble the intensity frame.

    `jobs` controls how the pixel rows are chunked; every chunking yields a
    bit-identical frame because chunks are disjoint and each pixel's result
    is independent of batch shape. The camera must sit at the link geometry's
    receiver with the same boresight.
    """
    if not np.allclose(camera.position, geom.receiver, atol=1e-9):
        raise ValueError("camera position must coincide with the link receiver")
    if not np.allclose(camera.boresight, geom.rx_boresight, atol=1e-9):
        raise ValueError("camera boresight must match the receiver boresight")
    jobs = max(1, int(jobs))
    all_rows = np.arange(1, camera.rows + 1)
    chunks = np.array_split(all_rows, min(jobs, camera.rows))
    pixels = np.vstack([_render_chunk(camera, geom, const, rows) for rows in chunks])
    truth = None
    if with_truth:
        sol = solve_refraction_point(geom, const)
        gb = gain_total(geom, const, solution=sol)
        truth = FrameTruth(direction=unit(sol.point - geom.receiver),
                           refraction_point=sol.point, gain=gb)
    return IntensityFrame(pixels=pixels, t=geom.t, camera=camera, truth=truth)


def write_pgm16(frame: IntensityFrame, path) -> None:
    """Debug dump: 16-bit binary PGM (big-endian samples) plus a sidecar
    text file recording the linear min-max scaling."""
    lo = float(frame.pixels.min())
    hi = float(frame.pixels.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((frame.pixels - lo) / span * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.camera.cols} {frame.camera.rows}\n65535\n".encode())
        fh.write(scaled.tobytes())
    with open(str(path) + ".meta.txt", "w") as fh:
        fh.write(f"min_intensity = {lo!r}\nmax_intensity = {hi!r}\n"
                 f"scale = value/65535*(max-min)+min\nt = {frame.t!r}\n")
