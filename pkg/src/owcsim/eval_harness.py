"""Tracker scoring: temporal runs, surface traces, and noise sweeps.

Two evaluation modes share the same scoring rules:

  live     a continuous closed-loop simulation; each tracker sees frames
           captured with its own last commanded boresight and the camera is
           re-pointed between frames
  dataset  stored sequences replayed open-loop (the camera pose is part of
           the recorded scene), which is also how external predictions are
           scored

Per frame, the angular error compares the tracker's output with the true
link direction, and the received signal strength evaluates the full gain
chain with the receiver pointed along the tracker's output (the transmitter
follows its own pointing policy: oracle re-aim by default, frozen for the
no-alignment baseline, which models a link with no alignment on either
side). A non-zero tracker latency scores the pointing that was commanded
`latency` frames earlier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel_optics import (
    GainBreakdown,
    LinkGeometry,
    OpticalConstants,
    gain_total,
    solve_refraction_point,
    unit,
)
from .config import RunConfig
from .dataset_pipeline import SharedScene, inject_noise, load_split
from .rng import derive_seed, splitmix64
from .trackers import FilePredictionsTracker, FrameObservation, Tracker
from .vision_renderer import CameraModel, intersect_rays, render
from .wave_surface import realize_surface


@dataclass(frozen=True)
class FrameScore:
    tracker: str
    frame: int
    t: float
    angle_err: float
    rss: float
    gain: GainBreakdown


@dataclass(frozen=True)
class TracePoint:
    frame: int
    t: float
    true_sx: float
    true_sy: float
    tracker: str
    point_sx: float
    point_sy: float


@dataclass(frozen=True)
class SweepRow:
    tracker: str
    snr_db: float
    mean_angle_err: float
    stderr_angle: float
    mean_rss: float
    stderr_rss: float
    n: int


@dataclass(frozen=True)
class SweepResult:
    snrs: tuple
    rows: list[SweepRow]


def angle_difference(y_hat, y) -> float:
    """arccos of the clamped dot product, in [0, pi].

    Both arguments must be unit vectors within 1e-6; the inputs are
    renormalized before the dot product so the result is exact for them.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1 = float(np.linalg.norm(y_hat))
    n2 = float(np.linalg.norm(y))
    if abs(n1 - 1.0) > 1e-6 or abs(n2 - 1.0) > 1e-6:
        raise ValueError("angle_difference requires unit vectors (within 1e-6)")
    c = float(np.dot(y_hat / n1, y / n2))
    return math.acos(min(1.0, max(-1.0, c)))


def rss_for_pointing(geom: LinkGeometry, const: OpticalConstants,
                     solution=None) -> tuple[float, GainBreakdown]:
    """Received intensity with the receiver pointed as geom.rx_boresight.

    Solver failures surface as a flagged zero-gain breakdown, never a crash.
    """
    gb = gain_total(geom, const, solution=solution)
    return const.transmit_intensity * gb.g_total, gb


def _surface_point_of_pointing(receiver, direction, surf, t) -> tuple[float, float]:
    pts, hit, _ = intersect_rays(np.asarray(receiver)[None, :],
                                 np.asarray(direction)[None, :], surf, t)
    if not hit[0]:
        return math.nan, math.nan
    return float(pts[0, 0]), float(pts[0, 1])


def _tx_direction(policy: str, tracker_name: str, sol, sol0, transmitter) -> np.ndarray:
    """Transmitter pointing: frozen at the t0 aim for the no-alignment
    baseline, otherwise per the configured policy."""
    if tracker_name == "none" or policy == "frozen":
        return unit(sol0.point - transmitter)
    return unit(sol.point - transmitter)


@dataclass
class _TrackerLane:
    tracker: Tracker
    command: np.ndarray            # boresight used to capture the next frame
    outputs: list
    noise_rng: np.random.Generator | None


def _needs_frames(tracker: Tracker) -> bool:
    return tracker.name == "meanshift"


def run_temporal_live(cfg: RunConfig, trackers: list[Tracker]):
    """Closed-loop continuous run; returns (scores, trace, scene_info).

    The scene is drawn from the config boxes with the config seed; all
    trackers start exactly aligned at t = 0 and diverge as the surface
    evolves. Scores are frame-major, one row per (frame, tracker).
    """
    if not trackers:
        raise ValueError("need at least one tracker")
    params = cfg.spectrum_params()
    grid = cfg.spectral_grid(params)
    const = cfg.optical_constants()

    state = cfg.seed
    state, surface_seed = splitmix64(state)
    state, placement_seed = splitmix64(state)
    surf = realize_surface(params, grid, surface_seed)
    rng = np.random.default_rng(placement_seed)
    box = cfg.tx_box
    transmitter = np.array([rng.uniform(box[0], box[1]), rng.uniform(box[2], box[3]),
                            rng.uniform(box[4], box[5])])
    box = cfg.rx_box
    receiver = np.array([rng.uniform(box[0], box[1]), rng.uniform(box[2], box[3]),
                         rng.uniform(box[4], box[5])])

    geom0 = LinkGeometry(transmitter=transmitter, receiver=receiver,
                         tx_boresight=np.array([0.0, 0, 1]),
                         rx_boresight=np.array([0.0, 0, -1]), t=0.0, surf=surf)
    sol0 = solve_refraction_point(geom0, const, grid_points=cfg.solver_grid_points,
                                  pad=cfg.solver_pad, max_iter=cfg.solver_max_iter)
    rx0 = unit(sol0.point - receiver)

    lanes = []
    for idx, tracker in enumerate(trackers):
        noise_rng = None
        if cfg.track_noise_snr_db is not None and _needs_frames(tracker):
            noise_rng = np.random.default_rng(derive_seed(cfg.seed, 1000 + idx))
        lanes.append(_TrackerLane(tracker=tracker, command=rx0.copy(),
                                  outputs=[], noise_rng=noise_rng))

    scores: list[FrameScore] = []
    trace: list[TracePoint] = []
    for k in range(cfg.track_frames):
        t_k = k / cfg.fps
        geom_k = replace(geom0, t=t_k)
        sol_k = solve_refraction_point(geom_k, const, grid_points=cfg.solver_grid_points,
                                       pad=cfg.solver_pad, max_iter=cfg.solver_max_iter)
        truth = unit(sol_k.point - receiver)
        trace_true = (float(sol_k.point[0]), float(sol_k.point[1]))

        for lane in lanes:
            tracker = lane.tracker
            camera = CameraModel.from_boresight(
                receiver, lane.command, focal_length=cfg.focal_length,
                pixel_pitch=cfg.pixel_pitch, rows=cfg.image_rows, cols=cfg.image_cols)
            tx_dir = _tx_direction(cfg.transmitter_pointing, tracker.name,
                                   sol_k, sol0, transmitter)
            geom_lane = replace(geom_k, tx_boresight=tx_dir, rx_boresight=lane.command)
            frame = None
            if _needs_frames(tracker):
                frame = render(camera, geom_lane, const, with_truth=False).pixels
                peak = frame.max()
                if peak > 0:
                    frame = frame / peak
                if lane.noise_rng is not None:
                    frame = inject_noise(frame, cfg.track_noise_snr_db, lane.noise_rng)
            obs = FrameObservation(camera=camera, frame=frame, geom=geom_lane, const=const)
            if k == 0:
                tracker.begin_sequence(camera, sample_id=None)
            y_hat = unit(tracker.step(obs).direction)
            lane.outputs.append(y_hat)

            lag = tracker.latency_frames
            pointing = lane.outputs[max(0, k - lag)]
            rss, gb = rss_for_pointing(
                replace(geom_lane, rx_boresight=pointing), const, solution=sol_k)
            scores.append(FrameScore(tracker=tracker.name, frame=k, t=t_k,
                                     angle_err=angle_difference(y_hat, truth),
                                     rss=rss, gain=gb))
            px, py = _surface_point_of_pointing(receiver, pointing, surf, t_k)
            trace.append(TracePoint(frame=k, t=t_k, true_sx=trace_true[0],
                                    true_sy=trace_true[1], tracker=tracker.name,
                                    point_sx=px, point_sy=py))
            if cfg.closed_loop:
                lane.command = y_hat
    return scores, trace


def _dataset_noise_rng(master_seed: int, snr_db, sample_id: int) -> np.random.Generator:
    bits = int(np.float64(snr_db).view(np.uint64)) if snr_db is not None else 0
    return np.random.default_rng(derive_seed(derive_seed(master_seed, bits), sample_id))


def run_temporal_dataset(dataset_dir, split: str, trackers: list[Tracker],
                         cfg: RunConfig):
    """Replay stored sequences open-loop and score every frame.

    Frames are the stored crops; cameras are rebuilt from the recorded scene
    specs, so tracked pixels map to world directions exactly as at
    generation time. The frame column is a running index across samples.
    """
    if not trackers:
        raise ValueError("need at least one tracker")
    shared, samples = load_split(dataset_dir, split)
    for tracker in trackers:
        if isinstance(tracker, FilePredictionsTracker):
            tracker.ensure_ids([s.sample_id for s in samples])

    scores: list[FrameScore] = []
    trace: list[TracePoint] = []
    row = 0
    for sample in samples:
        scene = sample.scene
        surf = shared.surface(scene)
        camera = shared.crop_camera(scene)
        transmitter = np.asarray(scene.transmitter)
        receiver = np.asarray(scene.receiver)
        # one noise realization per sample, shared by every tracker
        frames = sample.frames.astype(np.float64)
        if cfg.track_noise_snr_db is not None:
            rng = _dataset_noise_rng(cfg.seed, cfg.track_noise_snr_db, sample.sample_id)
            frames = np.stack([inject_noise(f, cfg.track_noise_snr_db, rng)
                               for f in frames])

        sol_by_frame = []
        for t_k in sample.timestamps:
            geom = LinkGeometry(transmitter=transmitter, receiver=receiver,
                                tx_boresight=np.array([0.0, 0, 1]),
                                rx_boresight=np.asarray(scene.rx_boresight),
                                t=float(t_k), surf=surf)
            sol_by_frame.append((geom, solve_refraction_point(
                geom, shared.optics, grid_points=cfg.solver_grid_points,
                pad=cfg.solver_pad, max_iter=cfg.solver_max_iter)))
        sol0 = sol_by_frame[0][1]

        for tracker in trackers:
            tracker.begin_sequence(camera, sample_id=sample.sample_id)
            outputs = []
            for k, t_k in enumerate(sample.timestamps):
                geom, sol_k = sol_by_frame[k]
                obs = FrameObservation(camera=camera, frame=frames[k], geom=geom,
                                       const=shared.optics, sample_id=sample.sample_id)
                y_hat = unit(tracker.step(obs).direction)
                outputs.append(y_hat)
                truth = unit(sol_k.point - receiver)
                tx_dir = _tx_direction(cfg.transmitter_pointing, tracker.name,
                                       sol_k, sol0, transmitter)
                pointing = outputs[max(0, k - tracker.latency_frames)]
                rss, gb = rss_for_pointing(
                    replace(geom, tx_boresight=tx_dir, rx_boresight=pointing),
                    shared.optics, solution=sol_k)
                scores.append(FrameScore(tracker=tracker.name, frame=row + k,
                                         t=float(t_k),
                                         angle_err=angle_difference(y_hat, truth),
                                         rss=rss, gain=gb))
                px, py = _surface_point_of_pointing(receiver, pointing, surf, float(t_k))
                trace.append(TracePoint(frame=row + k, t=float(t_k),
                                        true_sx=float(sol_k.point[0]),
                                        true_sy=float(sol_k.point[1]),
                                        tracker=tracker.name, point_sx=px, point_sy=py))
        row += len(sample.timestamps)
    return scores, trace


def run_noise_sweep(dataset_dir, split: str, tracker_factory, snrs,
                    cfg: RunConfig) -> SweepResult:
    """Per-sample tracking under injected noise, aggregated per (tracker, SNR).

    tracker_factory() must return fresh tracker instances (one list per SNR
    level). Noise realizations are seeded per (SNR, sample id) and shared by
    every tracker, so the comparison at each level is on identical frames.
    A sample's score is its final-frame output: angular error against the
    stored label and RSS with the receiver pointed along that output.
    """
    snrs = list(snrs)
    if not snrs:
        raise ValueError("sweep needs at least one SNR level")
    shared, samples = load_split(dataset_dir, split)
    if not samples:
        raise ValueError(f"split {split!r} is empty")

    # per-sample scene reconstruction, shared across SNR levels
    per_sample = []
    for sample in samples:
        scene = sample.scene
        surf = shared.surface(scene)
        camera = shared.crop_camera(scene)
        t_last = float(sample.timestamps[-1])
        geom_last = LinkGeometry(
            transmitter=np.asarray(scene.transmitter),
            receiver=np.asarray(scene.receiver),
            tx_boresight=np.array([0.0, 0, 1]),
            rx_boresight=np.asarray(scene.rx_boresight), t=t_last, surf=surf)
        sol_last = solve_refraction_point(geom_last, shared.optics,
                                          grid_points=cfg.solver_grid_points,
                                          pad=cfg.solver_pad,
                                          max_iter=cfg.solver_max_iter)
        geom0 = replace(geom_last, t=float(sample.timestamps[0]))
        sol0 = solve_refraction_point(geom0, shared.optics,
                                      grid_points=cfg.solver_grid_points,
                                      pad=cfg.solver_pad, max_iter=cfg.solver_max_iter)
        per_sample.append((sample, surf, camera, geom_last, sol_last, sol0))

    rows: list[SweepRow] = []
    for snr in snrs:
        trackers = tracker_factory()
        for tracker in trackers:
            if isinstance(tracker, FilePredictionsTracker):
                tracker.ensure_ids([s.sample_id for s in samples])
        angle_acc: dict[str, list[float]] = {t.name: [] for t in trackers}
        rss_acc: dict[str, list[float]] = {t.name: [] for t in trackers}
        for sample, surf, camera, geom_last, sol_last, sol0 in per_sample:
            sigma_free = snr is None or math.isinf(snr)
            if sigma_free:
                noisy = sample.frames.astype(np.float64)
            else:
                rng = _dataset_noise_rng(cfg.seed, snr, sample.sample_id)
                noisy = np.stack([inject_noise(f.astype(np.float64), snr, rng)
                                  for f in sample.frames])
            for tracker in trackers:
                tracker.begin_sequence(camera, sample_id=sample.sample_id)
                y_hat = None
                for k, t_k in enumerate(sample.timestamps):
                    geom_k = replace(geom_last, t=float(t_k))
                    obs = FrameObservation(camera=camera, frame=noisy[k], geom=geom_k,
                                           const=shared.optics,
                                           sample_id=sample.sample_id)
                    y_hat = unit(tracker.step(obs).direction)
                angle_acc[tracker.name].append(angle_difference(y_hat, sample.label))
                tx_dir = _tx_direction(cfg.transmitter_pointing, tracker.name,
                                       sol_last, sol0, np.asarray(sample.scene.transmitter))
                rss, _ = rss_for_pointing(
                    replace(geom_last, tx_boresight=tx_dir, rx_boresight=y_hat),
                    shared.optics, solution=sol_last)
                rss_acc[tracker.name].append(rss)
        for tracker in trackers:
            a = np.array(angle_acc[tracker.name])
            r = np.array(rss_acc[tracker.name])
            n = a.size
            rows.append(SweepRow(
                tracker=tracker.name, snr_db=float(snr),
                mean_angle_err=float(a.mean()),
                stderr_angle=float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                mean_rss=float(r.mean()),
                stderr_rss=float(r.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                n=int(n)))
    return SweepResult(snrs=tuple(float(s) for s in snrs), rows=rows)


# --------------------------------------------------------------------------
# CSV emission
# --------------------------------------------------------------------------

def _f(x: float) -> str:
    return f"{x:.9g}"


def write_scores_csv(path, scores: list[FrameScore]) -> None:
    lines = ["tracker,frame,t,angle_err_rad,rss,gd,ga,gpath,gref"]
    for s in scores:
        g = s.gain
        lines.append(f"{s.tracker},{s.frame},{_f(s.t)},{_f(s.angle_err)},{_f(s.rss)},"
                     f"{_f(g.g_departure)},{_f(g.g_arrival)},{_f(g.g_path)},"
                     f"{_f(g.g_fresnel)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace_csv(path, trace: list[TracePoint]) -> None:
    lines = ["frame,t,true_sx,true_sy,tracker,point_sx,point_sy"]
    for p in trace:
        lines.append(f"{p.frame},{_f(p.t)},{_f(p.true_sx)},{_f(p.true_sy)},"
                     f"{p.tracker},{_f(p.point_sx)},{_f(p.point_sy)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sweep_csv(path, result: SweepResult) -> None:
    lines = ["tracker,snr_db,mean_angle_err,stderr_angle,mean_rss,stderr_rss,n"]
    for r in result.rows:
        lines.append(f"{r.tracker},{_f(r.snr_db)},{_f(r.mean_angle_err)},"
                     f"{_f(r.stderr_angle)},{_f(r.mean_rss)},{_f(r.stderr_rss)},{r.n}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
