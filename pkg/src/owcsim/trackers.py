"""Beam-tracking baselines and the tracker contract.

A tracker consumes one frame observation at a time (image, camera pose, and
for the geometric oracle the scene itself) and emits a unit pointing
direction. State is confined to one sequence: `begin_sequence` resets it,
so different sequences can be evaluated concurrently with separate tracker
instances.

Baselines:
    oracle     exact direction to the solved refraction point (upper bound)
    meanshift  intensity mean-shift on the beacon image, mapped through the
               camera model to a world direction
    none       keeps the initial pointing forever (the unaligned link)
    file       replays an external predictions.csv by sample id (this is how
               externally trained trackers plug into the harness)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .channel_optics import LinkGeometry, OpticalConstants, solve_refraction_point, unit
from .vision_renderer import CameraModel, _pixel_origins


@dataclass(frozen=True)
class TrackerOutput:
    """Unit direction estimate for one frame."""

    direction: np.ndarray
    confidence: Optional[float] = None
    latency_frames: int = 0

    def __post_init__(self):
        d = np.ascontiguousarray(self.direction, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)
        if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
            raise ValueError("tracker output must be unit-norm")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class FrameObservation:
    """Everything a tracker may look at for one frame."""

    camera: CameraModel
    frame: Optional[np.ndarray] = None
    geom: Optional[LinkGeometry] = None
    const: Optional[OpticalConstants] = None
    sample_id: Optional[int] = None


class MissingPredictionsError(KeyError):
    """File-backed tracker has no rows for the listed sample ids."""

    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"predictions file is missing sample ids: {self.ids}")


def oracle_track(geom: LinkGeometry, const: OpticalConstants) -> TrackerOutput:
    """Exact link direction from the solved refraction point; confidence 1."""
    sol = solve_refraction_point(geom, const)
    if not sol.converged:
        raise RuntimeError("refraction solver did not converge for the oracle tracker")
    return TrackerOutput(direction=unit(sol.point - geom.receiver), confidence=1.0)


@dataclass(frozen=True)
class MeanShiftState:
    """Window center in continuous 0-based (row, col) pixel coordinates."""

    center: tuple[float, float]
    bandwidth: float = 6.0
    max_iters: int = 30
    eps: float = 0.05

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


def _window_mean(frame: np.ndarray, center, bandwidth: float):
    rows, cols = frame.shape
    r0, c0 = center
    rr = np.arange(max(0, int(math.floor(r0 - bandwidth))),
                   min(rows, int(math.ceil(r0 + bandwidth)) + 1))
    cc = np.arange(max(0, int(math.floor(c0 - bandwidth))),
                   min(cols, int(math.ceil(c0 + bandwidth)) + 1))
    if rr.size == 0 or cc.size == 0:
        return None
    gr, gc = np.meshgrid(rr, cc, indexing="ij")
    mask = (gr - r0) ** 2 + (gc - c0) ** 2 <= bandwidth**2
    w = frame[gr[mask], gc[mask]].astype(np.float64)
    if w.size == 0 or w.max() == w.min():
        return None  # all-zero or uniform window: nothing to shift toward
    total = w.sum()
    if total <= 0:
        return None
    return float((w * gr[mask]).sum() / total), float((w * gc[mask]).sum() / total)


def meanshift_step(frame: np.ndarray, state: MeanShiftState) -> MeanShiftState:
    """Iterate the window to the local intensity centroid.

    Runs up to max_iters internal updates, stopping early once the center
    moves less than eps pixels. Uniform or all-zero windows leave the center
    unchanged.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise ValueError("frame must be non-empty")
    center = state.center
    for _ in range(state.max_iters):
        new_center = _window_mean(frame, center, state.bandwidth)
        if new_center is None:
            break
        shift = math.hypot(new_center[0] - center[0], new_center[1] - center[1])
        center = new_center
        if shift < state.eps:
            break
    return replace(state, center=center)


def pixel_to_direction(center, camera: CameraModel) -> np.ndarray:
    """World direction of the line of sight through a (row, col) pixel center.

    Continuous 0-based array coordinates; the returned unit vector points
    from the receiver outward (the image center maps to the boresight).
    """
    row, col = center
    if not (0 <= row <= camera.rows - 1 and 0 <= col <= camera.cols - 1):
        raise ValueError("pixel center outside image bounds")
    origin = _pixel_origins(camera, row + 1.0, col + 1.0)
    return unit(origin - camera.focus)


class Tracker:
    """Stateful-per-sequence tracker contract."""

    name: str = "tracker"
    latency_frames: int = 0

    def begin_sequence(self, camera0: CameraModel, sample_id: Optional[int] = None) -> None:
        raise NotImplementedError

    def step(self, obs: FrameObservation) -> TrackerOutput:
        raise NotImplementedError


class OracleTracker(Tracker):
    name = "oracle"

    def begin_sequence(self, camera0, sample_id=None):
        pass

    def step(self, obs: FrameObservation) -> TrackerOutput:
        if obs.geom is None or obs.const is None:
            raise ValueError("oracle tracker needs the scene geometry")
        return oracle_track(obs.geom, obs.const)


class NoAlignmentTracker(Tracker):
    name = "none"

    def __init__(self):
        self._initial: Optional[np.ndarray] = None

    def begin_sequence(self, camera0, sample_id=None):
        self._initial = np.array(camera0.boresight)

    def step(self, obs: FrameObservation) -> TrackerOutput:
        return TrackerOutput(direction=unit(self._initial))


class MeanShiftTracker(Tracker):
    """Tracks the beacon blob; first frame initializes at the global argmax."""

    name = "meanshift"

    def __init__(self, bandwidth: float = 6.0, eps: float = 0.05, max_iters: int = 30):
        self.bandwidth = bandwidth
        self.eps = eps
        self.max_iters = max_iters
        self._state: Optional[MeanShiftState] = None

    def begin_sequence(self, camera0, sample_id=None):
        self._state = None

    def step(self, obs: FrameObservation) -> TrackerOutput:
        if obs.frame is None:
            raise ValueError("mean-shift tracker needs an image")
        frame = np.asarray(obs.frame, dtype=np.float64)
        if self._state is None:
            r, c = np.unravel_index(int(np.argmax(frame)), frame.shape)
            self._state = MeanShiftState(center=(float(r), float(c)),
                                         bandwidth=self.bandwidth,
                                         max_iters=self.max_iters, eps=self.eps)
        self._state = meanshift_step(frame, self._state)
        return TrackerOutput(direction=pixel_to_direction(self._state.center, obs.camera))


class FilePredictionsTracker(Tracker):
    """Replays `id,y1,y2,y3` rows; constant output across a sample's frames."""

    name = "file"

    def __init__(self, path):
        self.path = path
        self._table: dict[int, np.ndarray] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["id", "y1", "y2", "y3"]:
                raise ValueError(f"{path}: expected header id,y1,y2,y3, got {header}")
            for parts in reader:
                if not parts:
                    continue
                vec = np.array([float(parts[1]), float(parts[2]), float(parts[3])])
                self._table[int(parts[0])] = unit(vec)
        self._current: Optional[np.ndarray] = None

    def ensure_ids(self, ids) -> None:
        missing = [i for i in ids if i not in self._table]
        if missing:
            raise MissingPredictionsError(missing)

    def begin_sequence(self, camera0, sample_id=None):
        if sample_id is None or sample_id not in self._table:
            raise MissingPredictionsError([sample_id])
        self._current = self._table[sample_id]

    def step(self, obs: FrameObservation) -> TrackerOutput:
        return TrackerOutput(direction=self._current)


def make_tracker(spec: str, bandwidth: float = 6.0, eps: float = 0.05,
                 max_iters: int = 30, latency_frames: int = 0) -> Tracker:
    """Tracker spec grammar: oracle | meanshift | none | file:<path>."""
    tracker: Tracker
    if spec == "oracle":
        tracker = OracleTracker()
    elif spec == "meanshift":
        tracker = MeanShiftTracker(bandwidth=bandwidth, eps=eps, max_iters=max_iters)
    elif spec == "none":
        tracker = NoAlignmentTracker()
    elif spec.startswith("file:"):
        tracker = FilePredictionsTracker(spec[len("file:"):])
    else:
        raise ValueError(
            f"unknown tracker spec {spec!r}; valid: oracle | meanshift | none | file:<path>")
    tracker.latency_frames = latency_frames
    return tracker


def track_sequence(tracker: Tracker, observations, sample_id=None) -> list[TrackerOutput]:
    """Run a tracker over one sequence with carried state.

    Outputs are renormalized before wrapping, so downstream consumers can
    rely on unit norm even for file-backed inputs.
    """
    observations = list(observations)
    if not observations:
        raise ValueError("cannot track an empty sequence")
    tracker.begin_sequence(observations[0].camera, sample_id=sample_id)
    outputs = []
    for obs in observations:
        out = tracker.step(obs)
        direction = unit(out.direction)
        outputs.append(TrackerOutput(direction=direction, confidence=out.confidence,
                                     latency_frames=tracker.latency_frames))
    return outputs
