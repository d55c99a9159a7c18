"""Flat key = value run configuration.

One namespace of typed keys covers every tunable of the simulator: spectrum
inputs, optical constants, camera intrinsics, dataset layout, tracker and
solver settings. Files are plain UTF-8 `key = value` lines with `#`
comments, no nesting, so diffs stay readable and any language can parse
them. Unknown keys are rejected; every value is validated on construction.

Precedence for the seed: built-in default < OWC_SEED environment variable <
config file < command-line flag. All other keys: default < file < flag.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Any, Callable

from .channel_optics import OpticalConstants
from .wave_surface import SpectralGrid, SpectrumParams


class ConfigError(ValueError):
    """Bad key, bad value, or unreadable config file."""


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_opt_float(s: str):
    low = s.strip().lower()
    if low in ("none", "null", ""):
        return None
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    return float(s)


def _parse_box(s: str) -> tuple[float, ...]:
    parts = [float(p) for p in s.replace(",", " ").split()]
    if len(parts) != 6:
        raise ValueError("box needs 6 numbers: x0 x1 y0 y1 z0 z1")
    for lo, hi in zip(parts[0::2], parts[1::2]):
        if lo > hi:
            raise ValueError("box bounds must satisfy lo <= hi")
    return tuple(parts)


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class KeySpec:
    default: Any
    parse: Callable[[str], Any]
    doc: str
    check: Callable[[Any], bool] = lambda v: True


def _positive(v) -> bool:
    return v is None or v > 0


def _non_negative(v) -> bool:
    return v is None or v >= 0


_KEYS: dict[str, KeySpec] = {
    # environment / wave spectrum
    "gravity": KeySpec(9.80, float, "gravitational acceleration, m/s^2", _positive),
    "wind_speed_10m": KeySpec(10.0, float, "wind speed at 10 m altitude, m/s", _positive),
    "fetch": KeySpec(2.0e4, float, "average wind fetch, m", _positive),
    "peak_enhancement": KeySpec(3.3, float, "spectrum peak-enhancement factor", lambda v: v >= 1),
    "spread_p": KeySpec(0.5, float, "cos(2 theta) directional spreading weight"),
    "spread_q": KeySpec(0.25, float, "cos(4 theta) directional spreading weight"),
    "sigma_low": KeySpec(0.07, float, "spectral width below the peak", _positive),
    "sigma_high": KeySpec(0.09, float, "spectral width above the peak", _positive),
    "phillips_alpha": KeySpec(None, _parse_opt_float,
                              "spectrum scale constant; none = fetch-limited closure",
                              _non_negative),
    "omega_peak": KeySpec(None, _parse_opt_float,
                          "spectral peak frequency, rad/s; none = fetch-limited closure",
                          _positive),
    "n_omega": KeySpec(8, int, "frequency cells of the synthesis grid (desk-scale default)",
                       _positive),
    "n_theta": KeySpec(6, int, "direction cells of the synthesis grid (desk-scale default)",
                       _positive),
    "omega_lo_factor": KeySpec(0.5, float, "grid lower edge as a multiple of omega_peak",
                               _positive),
    "omega_hi_factor": KeySpec(5.0, float, "grid upper edge as a multiple of omega_peak",
                               _positive),
    # optical constants
    "n_water": KeySpec(1.33, float, "refractive index of water", lambda v: v > 1),
    "n_air": KeySpec(1.0003, float, "refractive index of air", lambda v: v >= 1),
    "wavelength": KeySpec(532e-9, float, "carrier wavelength, m", _positive),
    "absorb_water": KeySpec(1.80e-2, float, "underwater absorption, 1/m", _non_negative),
    "scatter_water": KeySpec(3.81e-3, float, "underwater scattering, 1/m", _non_negative),
    "absorb_air": KeySpec(1e-7, float, "aerial absorption, 1/m", _non_negative),
    "scatter_air": KeySpec(2.96e-5, float, "aerial scattering, 1/m", _non_negative),
    "max_departure_angle": KeySpec(math.pi / 600, float, "emitter half-angle, rad", _positive),
    "max_arrival_angle": KeySpec(math.pi / 3, float, "receiver field-of-view half-angle, rad",
                                 lambda v: 0 < v < math.pi / 2),
    "transmit_intensity": KeySpec(1.0, float, "beacon intensity, arbitrary units", _positive),
    "source_radius": KeySpec(0.1, float, "beacon disc radius, m", _positive),
    # camera
    "focal_length": KeySpec(0.015, float, "equivalent focal length, m", _positive),
    "pixel_pitch": KeySpec(1e-4, float, "pixel interval, m", _positive),
    "image_rows": KeySpec(64, int, "rendered image rows", lambda v: 8 <= v <= 512),
    "image_cols": KeySpec(64, int, "rendered image cols", lambda v: 8 <= v <= 512),
    # dataset
    "n_samples": KeySpec(200, int, "samples to generate", _positive),
    "n_frames": KeySpec(16, int, "frames per sample", _positive),
    "fps": KeySpec(60.0, float, "screen sampling rate, frames/s", _positive),
    "crop_rows": KeySpec(32, int, "preprocessed frame rows", _positive),
    "crop_cols": KeySpec(32, int, "preprocessed frame cols", _positive),
    # Box depths keep the pixel-ray lattice spacing at the beacon below the
    # disc diameter (beacon always visible) while transmitters stay deep
    # enough that disc parallax re-images within ~2 pixels.
    "tx_box": KeySpec((-2.0, 2.0, -2.0, 2.0, -12.0, -9.0), _parse_box,
                      "transmitter placement box x0,x1,y0,y1,z0,z1 (m)"),
    "rx_box": KeySpec((-2.0, 2.0, -2.0, 2.0, 9.0, 12.0), _parse_box,
                      "receiver placement box x0,x1,y0,y1,z0,z1 (m)"),
    "pointing_error_deg": KeySpec(3.0, float, "max initial receiver mispointing, degrees",
                                  _non_negative),
    "noise_snr_db": KeySpec(None, _parse_opt_float,
                            "peak SNR of noise baked into generated frames; none = clean"),
    "render_crop_only": KeySpec(True, _parse_bool,
                                "render only the centered crop during generation "
                                "(bit-identical to cropping a full render)"),
    # training-time augmentation defaults (consumed by training pipelines)
    "aug_rotation_deg": KeySpec(5.0, float, "augmentation rotation range, degrees",
                                _non_negative),
    "aug_translation_px": KeySpec(5, int, "augmentation translation range, pixels",
                                  lambda v: v >= 0),
    "aug_noise_sigma": KeySpec(0.01, float, "augmentation pixel noise sigma", _non_negative),
    # tracking / evaluation
    "track_frames": KeySpec(600, int, "frames of a live tracking run", _positive),
    "track_noise_snr_db": KeySpec(None, _parse_opt_float,
                                  "peak SNR of vision noise during tracking; none = clean"),
    "closed_loop": KeySpec(True, _parse_bool,
                           "re-point the receiver to the tracker output between frames"),
    "transmitter_pointing": KeySpec("oracle", str,
                                    "transmitter-side pointing: oracle | frozen",
                                    lambda v: v in ("oracle", "frozen")),
    "meanshift_bandwidth": KeySpec(6.0, float, "mean-shift window radius, pixels", _positive),
    "meanshift_eps": KeySpec(0.05, float, "mean-shift convergence threshold, pixels", _positive),
    "meanshift_max_iters": KeySpec(30, int, "mean-shift iteration cap", _positive),
    "tracker_latency_frames": KeySpec(0, int, "actuation delay in frames", lambda v: v >= 0),
    # refraction solver / ray tracing
    "solver_grid_points": KeySpec(41, int, "coarse-grid resolution of the OPL seed",
                                  lambda v: v >= 3),
    "solver_pad": KeySpec(2.0, float, "footprint padding of the OPL seed grid, m", _positive),
    "solver_max_iter": KeySpec(500, int, "refinement iteration cap", _positive),
    "march_step": KeySpec(0.05, float, "ray-march step, m", _positive),
    "max_range": KeySpec(500.0, float, "ray-trace range cap, m", _positive),
    # run control
    "seed": KeySpec(42, int, "master seed"),
    "jobs": KeySpec(0, int, "worker cap; 0 = machine parallelism", lambda v: v >= 0),
    "out": KeySpec("out", str, "output directory"),
}

# CLI conveniences: shortened flag aliases mapping onto full key names.
FLAG_ALIASES = {
    "wind-speed": "wind_speed_10m",
    "samples": "n_samples",
    "noise-snr": "track_noise_snr_db",
}


class RunConfig:
    """Validated, immutable bag of every run parameter."""

    __slots__ = ("_values",)

    def __init__(self, **overrides: Any):
        values = {name: spec.default for name, spec in _KEYS.items()}
        unknown = set(overrides) - set(values)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(overrides)
        for name, value in values.items():
            if not _KEYS[name].check(value):
                raise ConfigError(f"config key {name} out of range: {value!r}")
        object.__setattr__(self, "_values", values)

    def __getattr__(self, name: str) -> Any:
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name) from None

    def __setattr__(self, name, value):
        raise AttributeError("RunConfig is immutable; use replace()")

    def replace(self, **overrides: Any) -> "RunConfig":
        merged = dict(self._values)
        unknown = set(overrides) - set(merged)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(overrides)
        return RunConfig(**merged)

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def lines(self) -> list[str]:
        return [f"{name} = {_fmt(self._values[name])}" for name in sorted(self._values)]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# effective configuration (rerunning from this file reproduces "
                     "the outputs)\n")
            fh.write("\n".join(self.lines()) + "\n")

    # domain-object builders -------------------------------------------------
    def spectrum_params(self) -> SpectrumParams:
        return SpectrumParams(
            gravity=self.gravity, wind_speed_10m=self.wind_speed_10m, fetch=self.fetch,
            peak_enhancement=self.peak_enhancement, spread_p=self.spread_p,
            spread_q=self.spread_q, sigma_low=self.sigma_low, sigma_high=self.sigma_high,
            phillips_alpha=self.phillips_alpha, omega_peak=self.omega_peak)

    def spectral_grid(self, params: SpectrumParams | None = None) -> SpectralGrid:
        params = params or self.spectrum_params()
        return SpectralGrid.default(params, n_omega=self.n_omega, n_theta=self.n_theta,
                                    omega_lo_factor=self.omega_lo_factor,
                                    omega_hi_factor=self.omega_hi_factor)

    def optical_constants(self) -> OpticalConstants:
        return OpticalConstants(
            n_water=self.n_water, n_air=self.n_air, wavelength=self.wavelength,
            absorb_water=self.absorb_water, scatter_water=self.scatter_water,
            absorb_air=self.absorb_air, scatter_air=self.scatter_air,
            max_departure_angle=self.max_departure_angle,
            max_arrival_angle=self.max_arrival_angle,
            transmit_intensity=self.transmit_intensity, source_radius=self.source_radius)

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


def parse_value(key: str, raw: str) -> Any:
    if key not in _KEYS:
        raise ConfigError(f"unknown config key: {key}")
    try:
        return _KEYS[key].parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def read_config_file(path) -> dict[str, Any]:
    """Parse `key = value` lines; `#` starts a comment anywhere."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        values[key] = parse_value(key, raw)
    return values


def load_config(path=None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Resolve defaults, OWC_SEED, an optional file, and explicit overrides."""
    values: dict[str, Any] = {}
    env_seed = os.environ.get("OWC_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"OWC_SEED must be an integer, got {env_seed!r}") from exc
    if path is not None:
        values.update(read_config_file(path))
    if overrides:
        values.update(overrides)
    return RunConfig(**values)


def key_docs() -> list[tuple[str, str, str]]:
    """(name, default, doc) for every key, for --help and the README."""
    return [(name, _fmt(spec.default), spec.doc) for name, spec in sorted(_KEYS.items())]
