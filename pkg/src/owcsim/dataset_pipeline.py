"""Labeled vision-sequence dataset generation, storage, and loading.

A sample is a short sequence of preprocessed screen frames from one random
scene: fresh surface realization, transceiver placement drawn from
configured boxes, receiver boresight perturbed off the true link direction,
transmitter re-aimed at the crossing point every frame. The label is the
unit vector from the receiver toward the refraction point at the final
frame's timestamp, so labels are always derived by the solver, never typed
in.

On-disk layout (all little-endian):
    manifest.json       version, dims, counts, seeds, noise, file list
    frames_<split>.bin  float32, samples concatenated in ascending id order;
                        each sample is n_t frames of n1x * n2x row-major
    labels_<split>.csv  id,y1,y2,y3,t,sx,sy,sz,g_total (9 significant digits)
    scenes_<split>.json shared scene constants plus per-sample scene specs,
                        enough to re-solve any frame's ground truth

Sample generation is independent per id (seed = master XOR hash(id)), so
parallel workers and reruns produce byte-identical files.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .channel_optics import (
    LinkGeometry,
    OpticalConstants,
    gain_total,
    solve_refraction_point,
    unit,
)
from .config import RunConfig
from .rng import derive_seed, splitmix64
from .vision_renderer import CameraModel, render
from .wave_surface import SpectralGrid, SpectrumParams, realize_surface

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")


class DatasetIOError(OSError):
    """Raised with the offending path when dataset files cannot be written/read."""


def fmt9(x: float) -> str:
    return f"{float(x):.9g}"


# --------------------------------------------------------------------------
# preprocessing / noise / augmentation
# --------------------------------------------------------------------------

def preprocess(frame: np.ndarray, crop_dims: tuple[int, int]) -> np.ndarray:
    """Center-crop to crop_dims, then normalize the crop's maximum to 1.

    All-zero crops pass through unchanged (nothing to normalize). Raises if
    the crop exceeds the raw frame.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n1, n2 = crop_dims
    m, n = frame.shape
    if n1 > m or n2 > n:
        raise ValueError(f"crop {crop_dims} exceeds raw frame {frame.shape}")
    r0 = (m - n1) // 2
    c0 = (n - n2) // 2
    crop = frame[r0:r0 + n1, c0:c0 + n2]
    peak = crop.max()
    return crop / peak if peak > 0 else crop.copy()


def noise_sigma(snr_db: float) -> float:
    """Peak-SNR (dB) to Gaussian sigma for unit-peak frames."""
    if math.isinf(snr_db):
        return 0.0
    return 10.0 ** (-snr_db / 20.0)


def inject_noise(frame: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. Gaussian noise at the given peak SNR, clamped at zero.

    Sigma is peak/10^(snr_db/20) with peak = 1 after normalization; the
    result keeps non-negativity but is allowed to exceed 1.
    """
    if not math.isfinite(snr_db) and not math.isinf(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    sigma = noise_sigma(snr_db)
    if sigma == 0.0:
        return np.array(frame, dtype=np.float64, copy=True)
    return np.clip(frame + rng.normal(0.0, sigma, np.shape(frame)), 0.0, None)


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to rebuild one sample's scene exactly."""

    sample_id: int
    surface_seed: int
    t0: float
    transmitter: tuple[float, float, float]
    receiver: tuple[float, float, float]
    rx_boresight: tuple[float, float, float]
    n_frames: int
    fps: float

    def timestamps(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_frames) / self.fps

    def to_dict(self) -> dict:
        return {
            "id": self.sample_id, "surface_seed": self.surface_seed, "t0": self.t0,
            "transmitter": list(self.transmitter), "receiver": list(self.receiver),
            "rx_boresight": list(self.rx_boresight),
            "n_frames": self.n_frames, "fps": self.fps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(sample_id=int(d["id"]), surface_seed=int(d["surface_seed"]),
                   t0=float(d["t0"]), transmitter=tuple(d["transmitter"]),
                   receiver=tuple(d["receiver"]), rx_boresight=tuple(d["rx_boresight"]),
                   n_frames=int(d["n_frames"]), fps=float(d["fps"]))


@dataclass(frozen=True)
class SharedScene:
    """Scene constants common to every sample of a dataset."""

    spectrum: SpectrumParams
    grid: SpectralGrid
    optics: OpticalConstants
    focal_length: float
    pixel_pitch: float
    image_rows: int
    image_cols: int
    crop_rows: int
    crop_cols: int

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "SharedScene":
        params = cfg.spectrum_params()
        return cls(spectrum=params, grid=cfg.spectral_grid(params),
                   optics=cfg.optical_constants(),
                   focal_length=cfg.focal_length, pixel_pitch=cfg.pixel_pitch,
                   image_rows=cfg.image_rows, image_cols=cfg.image_cols,
                   crop_rows=cfg.crop_rows, crop_cols=cfg.crop_cols)

    def surface(self, scene: SceneSpec):
        return realize_surface(self.spectrum, self.grid, scene.surface_seed)

    def full_camera(self, scene: SceneSpec) -> CameraModel:
        return CameraModel.from_boresight(
            np.asarray(scene.receiver), np.asarray(scene.rx_boresight),
            focal_length=self.focal_length, pixel_pitch=self.pixel_pitch,
            rows=self.image_rows, cols=self.image_cols)

    def crop_camera(self, scene: SceneSpec) -> CameraModel:
        return self.full_camera(scene).center_crop(self.crop_rows, self.crop_cols)

    def to_dict(self) -> dict:
        p = self.spectrum
        return {
            "spectrum": {
                "gravity": p.gravity, "wind_speed_10m": p.wind_speed_10m,
                "fetch": p.fetch, "peak_enhancement": p.peak_enhancement,
                "spread_p": p.spread_p, "spread_q": p.spread_q,
                "sigma_low": p.sigma_low, "sigma_high": p.sigma_high,
                "phillips_alpha": p.phillips_alpha, "omega_peak": p.omega_peak,
            },
            "grid": {
                "omega_lo": float(self.grid.omegas[0]), "omega_hi": float(self.grid.omegas[-1]),
                "n_omega": int(self.grid.omegas.size), "n_theta": int(self.grid.thetas.size),
                "d_omega": self.grid.d_omega, "d_theta": self.grid.d_theta,
            },
            "optics": {
                "n_water": self.optics.n_water, "n_air": self.optics.n_air,
                "wavelength": self.optics.wavelength,
                "absorb_water": self.optics.absorb_water,
                "scatter_water": self.optics.scatter_water,
                "absorb_air": self.optics.absorb_air, "scatter_air": self.optics.scatter_air,
                "max_departure_angle": self.optics.max_departure_angle,
                "max_arrival_angle": self.optics.max_arrival_angle,
                "transmit_intensity": self.optics.transmit_intensity,
                "source_radius": self.optics.source_radius,
            },
            "camera": {
                "focal_length": self.focal_length, "pixel_pitch": self.pixel_pitch,
                "image_rows": self.image_rows, "image_cols": self.image_cols,
                "crop_rows": self.crop_rows, "crop_cols": self.crop_cols,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SharedScene":
        sp = d["spectrum"]
        params = SpectrumParams(**sp)
        g = d["grid"]
        n_omega = g["n_omega"]
        lo, hi, d_omega = g["omega_lo"], g["omega_hi"], g["d_omega"]
        omegas = lo + np.arange(n_omega) * d_omega
        # guard against drift in the reconstructed endpoints
        if abs(omegas[-1] - hi) > 1e-9:
            raise DatasetIOError(f"inconsistent grid spec in scenes file: {g}")
        thetas = -math.pi / 2 + (np.arange(g["n_theta"]) + 0.5) * g["d_theta"]
        grid = SpectralGrid(omegas=omegas, thetas=thetas,
                            d_omega=d_omega, d_theta=g["d_theta"])
        cam = d["camera"]
        return cls(spectrum=params, grid=grid, optics=OpticalConstants(**d["optics"]),
                   focal_length=cam["focal_length"], pixel_pitch=cam["pixel_pitch"],
                   image_rows=cam["image_rows"], image_cols=cam["image_cols"],
                   crop_rows=cam["crop_rows"], crop_cols=cam["crop_cols"])


@dataclass(frozen=True)
class Sample:
    """One preprocessed sequence with its derived label."""

    sample_id: int
    frames: np.ndarray          # (n_t, n1x, n2x) float32 in [0, 1]
    label: np.ndarray           # unit 3-vector, receiver -> refraction point
    timestamps: np.ndarray
    scene: SceneSpec | None = None

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        label = np.ascontiguousarray(self.label, dtype=np.float64)
        label.setflags(write=False)
        object.__setattr__(self, "label", label)
        ts = np.ascontiguousarray(self.timestamps, dtype=np.float64)
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        if frames.ndim != 3:
            raise ValueError("frames must be (n_t, rows, cols)")
        if np.any(frames < 0) or np.any(frames > 1):
            raise ValueError("frame values must lie in [0, 1]")
        if abs(float(np.linalg.norm(label)) - 1.0) > 1e-9:
            raise ValueError("label must be a unit vector")
        if ts.size != frames.shape[0]:
            raise ValueError("one timestamp per frame required")


def augment(sample: Sample, rng: np.random.Generator,
            rotation_deg: float = 5.0, translation_px: int = 5,
            noise_sigma_aug: float = 0.01) -> Sample:
    """Training-time augmentation: one random rotation and integer
    translation shared by every frame of the sample, plus per-frame Gaussian
    pixel noise. The label is unchanged; frames are re-clamped to [0, 1].

    Rotation convention: a pixel at offset (dr, dc) from the frame center
    maps to (dr*cos - dc*sin, dr*sin + dc*cos).
    """
    angle = float(rng.uniform(-rotation_deg, rotation_deg))
    shift = rng.integers(-translation_px, translation_px + 1, size=2)
    out = np.empty(sample.frames.shape, dtype=np.float64)
    for k, frame in enumerate(sample.frames):
        f = frame.astype(np.float64)
        if angle != 0.0:
            f = ndimage.rotate(f, angle, reshape=False, order=1,
                               mode="constant", cval=0.0)
        if shift[0] or shift[1]:
            moved = np.zeros_like(f)
            src_r = slice(max(0, -shift[0]), f.shape[0] - max(0, shift[0]))
            dst_r = slice(max(0, shift[0]), f.shape[0] + min(0, shift[0]))
            src_c = slice(max(0, -shift[1]), f.shape[1] - max(0, shift[1]))
            dst_c = slice(max(0, shift[1]), f.shape[1] + min(0, shift[1]))
            moved[dst_r, dst_c] = f[src_r, src_c]
            f = moved
        if noise_sigma_aug > 0:
            f = f + rng.normal(0.0, noise_sigma_aug, f.shape)
        out[k] = np.clip(f, 0.0, 1.0)
    return replace(sample, frames=out.astype(np.float32))


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

def split_counts(n: int) -> dict[str, int]:
    """70/15/15 with floor rounding; the remainder lands in the test split."""
    train = (7 * n) // 10
    val = (15 * n) // 100
    return {"train": train, "val": val, "test": n - train - val}


def assign_splits(n: int) -> dict[int, str]:
    """Deterministic assignment by ranking ids on a 64-bit hash."""
    from .rng import hash64
    counts = split_counts(n)
    order = sorted(range(n), key=lambda i: (hash64(i), i))
    assignment: dict[int, str] = {}
    edge_train = counts["train"]
    edge_val = edge_train + counts["val"]
    for rank, sample_id in enumerate(order):
        if rank < edge_train:
            assignment[sample_id] = "train"
        elif rank < edge_val:
            assignment[sample_id] = "val"
        else:
            assignment[sample_id] = "test"
    return assignment


# --------------------------------------------------------------------------
# sample generation
# --------------------------------------------------------------------------

def _perturbed_direction(aim: np.ndarray, max_angle_rad: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Random direction within a cone around `aim` (area-uniform)."""
    if max_angle_rad <= 0:
        return aim.copy()
    phi = rng.uniform(0.0, 2.0 * math.pi)
    theta = max_angle_rad * math.sqrt(rng.uniform(0.0, 1.0))
    helper = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(helper, aim)) > 0.99:
        helper = np.array([1.0, 0.0, 0.0])
    u = unit(np.cross(aim, helper))
    v = np.cross(aim, u)
    axis = math.cos(phi) * u + math.sin(phi) * v
    return math.cos(theta) * aim + math.sin(theta) * np.cross(axis, aim)


def _box_draw(box, rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.uniform(box[0], box[1]),
                     rng.uniform(box[2], box[3]),
                     rng.uniform(box[4], box[5])])


def _generate(cfg: RunConfig, shared: SharedScene, master_seed: int,
              sample_id: int) -> tuple[Sample, tuple]:
    """Simulate, render, and preprocess one sample; fully self-seeded.

    Returns the sample plus its labels-CSV row
    (id, y1, y2, y3, t, sx, sy, sz, g_total).
    """
    sample_seed = derive_seed(master_seed, sample_id)
    state, surface_seed = splitmix64(sample_seed)
    state, placement_seed = splitmix64(state)
    rng = np.random.default_rng(placement_seed)

    surf = realize_surface(shared.spectrum, shared.grid, surface_seed)
    transmitter = _box_draw(cfg.tx_box, rng)
    receiver = _box_draw(cfg.rx_box, rng)

    t0 = 0.0
    geom0 = LinkGeometry(transmitter=transmitter, receiver=receiver,
                         tx_boresight=np.array([0.0, 0.0, 1.0]),
                         rx_boresight=np.array([0.0, 0.0, -1.0]), t=t0, surf=surf)
    sol0 = solve_refraction_point(geom0, shared.optics,
                                  grid_points=cfg.solver_grid_points,
                                  pad=cfg.solver_pad, max_iter=cfg.solver_max_iter)
    rx_boresight = _perturbed_direction(unit(sol0.point - receiver),
                                        math.radians(cfg.pointing_error_deg), rng)

    scene = SceneSpec(sample_id=sample_id, surface_seed=surface_seed, t0=t0,
                      transmitter=tuple(transmitter), receiver=tuple(receiver),
                      rx_boresight=tuple(rx_boresight),
                      n_frames=cfg.n_frames, fps=cfg.fps)

    camera = shared.crop_camera(scene) if cfg.render_crop_only else shared.full_camera(scene)
    noise_rng = None
    if cfg.noise_snr_db is not None:
        state, noise_seed = splitmix64(state)
        noise_rng = np.random.default_rng(noise_seed)

    frames = np.empty((cfg.n_frames, cfg.crop_rows, cfg.crop_cols), dtype=np.float64)
    label = None
    for k, t_k in enumerate(scene.timestamps()):
        geom_k = LinkGeometry(transmitter=transmitter, receiver=receiver,
                              tx_boresight=np.array([0.0, 0.0, 1.0]),
                              rx_boresight=rx_boresight, t=float(t_k), surf=surf)
        sol_k = solve_refraction_point(geom_k, shared.optics,
                                       grid_points=cfg.solver_grid_points,
                                       pad=cfg.solver_pad, max_iter=cfg.solver_max_iter)
        geom_k = replace(geom_k, tx_boresight=unit(sol_k.point - transmitter))
        frame = render(camera, geom_k, shared.optics, with_truth=False).pixels
        processed = preprocess(frame, (cfg.crop_rows, cfg.crop_cols))
        if noise_rng is not None:
            processed = np.minimum(inject_noise(processed, cfg.noise_snr_db, noise_rng), 1.0)
        frames[k] = processed
        if k == cfg.n_frames - 1:
            gain = gain_total(geom_k, shared.optics, solution=sol_k)
            label = (unit(sol_k.point - receiver), float(t_k), sol_k.point, gain.g_total)

    y, t_last, s_last, g_last = label
    sample = Sample(sample_id=sample_id, frames=frames.astype(np.float32), label=y,
                    timestamps=scene.timestamps(), scene=scene)
    row = (sample_id, y[0], y[1], y[2], t_last, s_last[0], s_last[1], s_last[2], g_last)
    return sample, row


def generate_sample(cfg: RunConfig, shared: SharedScene, master_seed: int,
                    sample_id: int) -> Sample:
    return _generate(cfg, shared, master_seed, sample_id)[0]


# --------------------------------------------------------------------------
# dataset writer / reader
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetManifest:
    version: int
    m: int
    n: int
    n1x: int
    n2x: int
    n_t: int
    fps: float
    counts: dict[str, int]
    seeds: dict[str, int]
    noise: dict
    files: list[str]

    def to_dict(self) -> dict:
        return {"version": self.version, "m": self.m, "n": self.n,
                "n1x": self.n1x, "n2x": self.n2x, "n_t": self.n_t, "fps": self.fps,
                "counts": self.counts, "seeds": self.seeds, "noise": self.noise,
                "files": self.files}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(version=d["version"], m=d["m"], n=d["n"], n1x=d["n1x"], n2x=d["n2x"],
                   n_t=d["n_t"], fps=d["fps"], counts=dict(d["counts"]),
                   seeds=dict(d["seeds"]), noise=dict(d["noise"]), files=list(d["files"]))


def _write_bytes(path, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def _write_text(path, text: str) -> None:
    _write_bytes(path, text.encode("utf-8"))


def _worker_generate(args):
    cfg_values, shared_dict, master_seed, sample_id = args
    cfg = RunConfig(**cfg_values)
    shared = SharedScene.from_dict(shared_dict)
    sample, row = _generate(cfg, shared, master_seed, sample_id)
    return sample_id, sample.frames.tobytes(), row, sample.scene.to_dict()


def generate_dataset(cfg: RunConfig, out_dir) -> DatasetManifest:
    """Generate cfg.n_samples samples, split them, and write the dataset."""
    os.makedirs(out_dir, exist_ok=True)
    shared = SharedScene.from_config(cfg)
    master_seed = cfg.seed
    n = cfg.n_samples
    assignment = assign_splits(n)

    jobs = cfg.effective_jobs()
    results: dict[int, tuple[bytes, tuple, dict]] = {}
    if jobs > 1 and n > 1:
        shared_dict = shared.to_dict()
        work = [(cfg.as_dict(), shared_dict, master_seed, i) for i in range(n)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for sid, blob, row, scene in pool.map(_worker_generate, work, chunksize=4):
                results[sid] = (blob, row, scene)
    else:
        for i in range(n):
            sample, row = _generate(cfg, shared, master_seed, i)
            results[i] = (sample.frames.tobytes(), row, sample.scene.to_dict())

    files: list[str] = []
    counts = {s: 0 for s in SPLITS}
    for split in SPLITS:
        ids = sorted(i for i in range(n) if assignment[i] == split)
        counts[split] = len(ids)
        blob = b"".join(results[i][0] for i in ids)
        _write_bytes(os.path.join(out_dir, f"frames_{split}.bin"), blob)
        rows = ["id,y1,y2,y3,t,sx,sy,sz,g_total"]
        for i in ids:
            r = results[i][1]
            rows.append(str(r[0]) + "," + ",".join(fmt9(v) for v in r[1:]))
        _write_text(os.path.join(out_dir, f"labels_{split}.csv"), "\n".join(rows) + "\n")
        scenes_doc = {"shared": shared.to_dict(),
                      "scenes": [results[i][2] for i in ids]}
        _write_text(os.path.join(out_dir, f"scenes_{split}.json"),
                    json.dumps(scenes_doc, indent=1) + "\n")
        files += [f"frames_{split}.bin", f"labels_{split}.csv", f"scenes_{split}.json"]

    manifest = DatasetManifest(
        version=FORMAT_VERSION, m=cfg.image_rows, n=cfg.image_cols,
        n1x=cfg.crop_rows, n2x=cfg.crop_cols, n_t=cfg.n_frames, fps=cfg.fps,
        counts=counts, seeds={"master": master_seed},
        noise={"snr_db": cfg.noise_snr_db}, files=files)
    _write_text(os.path.join(out_dir, "manifest.json"),
                json.dumps(manifest.to_dict(), indent=1) + "\n")
    return manifest


def load_manifest(dataset_dir) -> DatasetManifest:
    path = os.path.join(dataset_dir, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            return DatasetManifest.from_dict(json.load(fh))
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise DatasetIOError(f"malformed manifest {path}: {exc}") from exc


def validate_dataset(dataset_dir) -> DatasetManifest:
    """Check that every referenced file exists and frame sizes match dims."""
    manifest = load_manifest(dataset_dir)
    for name in manifest.files:
        path = os.path.join(dataset_dir, name)
        if not os.path.exists(path):
            raise DatasetIOError(f"manifest references missing file {path}")
    for split in SPLITS:
        path = os.path.join(dataset_dir, f"frames_{split}.bin")
        expect = manifest.counts[split] * manifest.n_t * manifest.n1x * manifest.n2x * 4
        actual = os.path.getsize(path)
        if actual != expect:
            raise DatasetIOError(
                f"{path}: size {actual} does not match manifest dims ({expect})")
    return manifest


def load_split(dataset_dir, split: str) -> tuple[SharedScene, list[Sample]]:
    """Read one split back into Sample objects with their scene specs."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    manifest = validate_dataset(dataset_dir)
    with open(os.path.join(dataset_dir, f"scenes_{split}.json"), encoding="utf-8") as fh:
        scenes_doc = json.load(fh)
    shared = SharedScene.from_dict(scenes_doc["shared"])
    scenes = [SceneSpec.from_dict(d) for d in scenes_doc["scenes"]]

    raw = np.fromfile(os.path.join(dataset_dir, f"frames_{split}.bin"), dtype="<f4")
    n = manifest.counts[split]
    frames = raw.reshape(n, manifest.n_t, manifest.n1x, manifest.n2x)

    labels: dict[int, np.ndarray] = {}
    with open(os.path.join(dataset_dir, f"labels_{split}.csv"), encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "id,y1,y2,y3,t,sx,sy,sz,g_total":
            raise DatasetIOError(f"unexpected labels header: {header}")
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            labels[int(parts[0])] = np.array([float(parts[1]), float(parts[2]),
                                              float(parts[3])])
    samples = []
    for row, scene in enumerate(scenes):
        y = labels[scene.sample_id]
        y = y / np.linalg.norm(y)
        samples.append(Sample(sample_id=scene.sample_id, frames=frames[row],
                              label=y, timestamps=scene.timestamps(), scene=scene))
    return shared, samples
