import math

import numpy as np
import pytest

from owcsim.channel_optics import LinkGeometry, unit
from owcsim.trackers import (
    FilePredictionsTracker,
    FrameObservation,
    MeanShiftState,
    MeanShiftTracker,
    MissingPredictionsError,
    NoAlignmentTracker,
    OracleTracker,
    TrackerOutput,
    make_tracker,
    meanshift_step,
    oracle_track,
    pixel_to_direction,
    track_sequence,
)
from owcsim.vision_renderer import CameraModel, pixel_ray


def down_camera(rows=64, cols=64):
    return CameraModel.from_boresight([0.0, 0, 12], [0.0, 0, -1], rows=rows, cols=cols)


def test_tracker_output_requires_unit_norm():
    with pytest.raises(ValueError):
        TrackerOutput(direction=np.array([1.0, 1.0, 0.0]))
    out = TrackerOutput(direction=np.array([0.0, 0, 1.0]), confidence=0.5)
    assert out.latency_frames == 0


class TestOracle:
    def test_flat_vertical(self, flat_surface, table_constants):
        geom = LinkGeometry(transmitter=np.array([0.0, 0, -10]),
                            receiver=np.array([0.0, 0, 20]),
                            tx_boresight=np.array([0.0, 0, 1]),
                            rx_boresight=np.array([0.0, 0, -1]), t=0.0, surf=flat_surface)
        out = oracle_track(geom, table_constants)
        assert np.allclose(out.direction, [0, 0, -1.0], atol=1e-7)
        assert out.confidence == 1.0

    def test_matches_truth_on_wavy_scene(self, desk_surface, table_constants):
        from owcsim.channel_optics import solve_refraction_point
        geom = LinkGeometry(transmitter=np.array([0.5, -0.5, -9.0]),
                            receiver=np.array([0.0, 1.0, 11.0]),
                            tx_boresight=np.array([0.0, 0, 1]),
                            rx_boresight=np.array([0.0, 0, -1]), t=2.5, surf=desk_surface)
        out = oracle_track(geom, table_constants)
        sol = solve_refraction_point(geom, table_constants)
        truth = unit(sol.point - geom.receiver)
        assert math.acos(np.clip(np.dot(out.direction, truth), -1, 1)) < 1e-9


class TestMeanShift:
    def test_all_zero_frame_leaves_center(self):
        state = MeanShiftState(center=(10.0, 12.0))
        out = meanshift_step(np.zeros((32, 32)), state)
        assert out.center == (10.0, 12.0)

    def test_converges_to_single_bright_pixel(self):
        frame = np.zeros((32, 32))
        frame[17, 14] = 2.0
        state = MeanShiftState(center=(14.0, 12.0), bandwidth=6.0)
        out = meanshift_step(frame, state)
        assert math.hypot(out.center[0] - 17, out.center[1] - 14) < 0.05

    def test_two_blob_weighted_centroid_single_step(self):
        frame = np.zeros((32, 32))
        frame[10, 10] = 2.0
        frame[14, 10] = 1.0
        state = MeanShiftState(center=(12.0, 10.0), bandwidth=6.0, max_iters=1)
        out = meanshift_step(frame, state)
        assert out.center[0] == pytest.approx((2 * 10 + 14) / 3, abs=1e-12)
        assert out.center[1] == pytest.approx(10.0, abs=1e-12)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(3)
        frame = np.zeros((48, 48))
        frame[20:24, 18:22] = rng.uniform(0.5, 1.0, (4, 4))
        dr, dc = 5, -3
        shifted = np.zeros_like(frame)
        shifted[20 + dr:24 + dr, 18 + dc:22 + dc] = frame[20:24, 18:22]
        s0 = MeanShiftState(center=(21.0, 19.0), bandwidth=6.0)
        s1 = MeanShiftState(center=(21.0 + dr, 19.0 + dc), bandwidth=6.0)
        out0 = meanshift_step(frame, s0)
        out1 = meanshift_step(shifted, s1)
        assert out1.center[0] == pytest.approx(out0.center[0] + dr, abs=1e-9)
        assert out1.center[1] == pytest.approx(out0.center[1] + dc, abs=1e-9)

    def test_tracker_initializes_at_argmax(self):
        cam = down_camera(rows=32, cols=32)
        frame = np.zeros((32, 32))
        frame[6, 25] = 1.0
        tracker = MeanShiftTracker()
        tracker.begin_sequence(cam)
        out = tracker.step(FrameObservation(camera=cam, frame=frame))
        assert np.allclose(out.direction, pixel_to_direction((6, 25), cam), atol=1e-12)


class TestPixelToDirection:
    def test_image_center_is_boresight(self):
        cam = down_camera()
        d = pixel_to_direction((cam.rows / 2 - 1, cam.cols / 2 - 1), cam)
        assert np.allclose(d, cam.boresight, atol=1e-12)

    def test_one_pixel_offset_tilt(self):
        cam = down_camera()
        d = pixel_to_direction((cam.rows / 2 - 1, cam.cols / 2), cam)
        tilt = math.acos(np.clip(np.dot(d, cam.boresight), -1, 1))
        assert tilt == pytest.approx(math.atan(cam.pixel_pitch / cam.focal_length),
                                     abs=1e-12)

    def test_roundtrip_with_pixel_ray(self):
        cam = down_camera()
        for i, j in ((1, 1), (17, 40), (32, 32), (64, 64)):
            ray = pixel_ray(cam, i, j)
            d = pixel_to_direction((i - 1.0, j - 1.0), cam)
            assert np.linalg.norm(ray.direction - d) < 1e-12

    def test_out_of_bounds(self):
        cam = down_camera()
        with pytest.raises(ValueError):
            pixel_to_direction((-1.0, 0.0), cam)


class TestSequences:
    def test_no_alignment_constant(self):
        cam = down_camera()
        tracker = NoAlignmentTracker()
        obs = [FrameObservation(camera=cam) for _ in range(5)]
        outs = track_sequence(tracker, obs)
        assert len(outs) == 5
        for out in outs:
            assert np.array_equal(out.direction, cam.boresight)

    def test_file_tracker_roundtrip(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("id,y1,y2,y3\n0,0,0,-2\n2,1,1,0\n5,0,-3,0\n")
        tracker = FilePredictionsTracker(path)
        cam = down_camera()
        for sid, want in ((0, [0, 0, -1.0]), (2, unit([1.0, 1, 0])), (5, [0, -1.0, 0])):
            outs = track_sequence(tracker, [FrameObservation(camera=cam)] * 3,
                                  sample_id=sid)
            for out in outs:
                assert np.allclose(out.direction, want, atol=1e-12)
                assert abs(np.linalg.norm(out.direction) - 1.0) < 1e-12

    def test_file_tracker_missing_ids(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("id,y1,y2,y3\n0,0,0,-1\n")
        tracker = FilePredictionsTracker(path)
        tracker.ensure_ids([0])
        with pytest.raises(MissingPredictionsError) as err:
            tracker.ensure_ids([0, 3, 7])
        assert err.value.ids == [3, 7]

    def test_file_tracker_bad_header(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("id,a,b,c\n0,0,0,-1\n")
        with pytest.raises(ValueError):
            FilePredictionsTracker(path)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            track_sequence(NoAlignmentTracker(), [])


def test_make_tracker_specs(tmp_path):
    assert isinstance(make_tracker("oracle"), OracleTracker)
    assert isinstance(make_tracker("meanshift"), MeanShiftTracker)
    assert isinstance(make_tracker("none"), NoAlignmentTracker)
    preds = tmp_path / "p.csv"
    preds.write_text("id,y1,y2,y3\n0,0,0,-1\n")
    assert isinstance(make_tracker(f"file:{preds}"), FilePredictionsTracker)
    with pytest.raises(ValueError):
        make_tracker("kalman")
