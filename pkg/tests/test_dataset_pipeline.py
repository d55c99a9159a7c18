import json
import math
from dataclasses import replace

import numpy as np
import pytest

from owcsim.channel_optics import LinkGeometry, solve_refraction_point, unit
from owcsim.config import RunConfig
from owcsim.dataset_pipeline import (
    Sample,
    SharedScene,
    assign_splits,
    augment,
    generate_dataset,
    generate_sample,
    inject_noise,
    load_split,
    noise_sigma,
    preprocess,
    split_counts,
    validate_dataset,
)


def small_cfg(**over):
    base = dict(n_samples=6, n_frames=3, n_omega=4, n_theta=3,
                pointing_error_deg=2.0, jobs=1, seed=11)
    base.update(over)
    return RunConfig(**base)


class TestPreprocess:
    def test_normalizes_peak_to_one(self):
        frame = np.zeros((8, 8))
        frame[4, 4] = 5.0
        frame[4, 5] = 2.5
        out = preprocess(frame, (8, 8))
        assert out[4, 4] == 1.0
        assert out[4, 5] == 0.5

    def test_all_zero_passthrough(self):
        out = preprocess(np.zeros((8, 8)), (4, 4))
        assert out.shape == (4, 4)
        assert np.all(out == 0.0)

    def test_center_crop_indices(self):
        frame = np.zeros((64, 64))
        frame[16, 16] = 3.0   # first retained row/col (0-based 16 = 1-based 17)
        frame[47, 47] = 3.0   # last retained row/col (1-based 48)
        frame[15, 15] = 9.0   # just outside the crop
        out = preprocess(frame, (32, 32))
        assert out.shape == (32, 32)
        assert out[0, 0] == 1.0
        assert out[31, 31] == 1.0
        assert out.max() == 1.0  # the 9.0 marker was cropped away

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            preprocess(np.zeros((8, 8)), (16, 8))


class TestInjectNoise:
    def test_zero_sigma_identity(self):
        frame = np.random.default_rng(0).uniform(size=(16, 16))
        out = inject_noise(frame, math.inf, np.random.default_rng(1))
        assert np.array_equal(out, frame)

    def test_sigma_from_snr(self):
        assert noise_sigma(20.0) == pytest.approx(0.1, rel=1e-12)
        assert noise_sigma(5.0) == pytest.approx(10 ** (-0.25), rel=1e-12)

    def test_empirical_sigma(self):
        frame = np.full((64, 64), 0.5)
        out = inject_noise(frame, 20.0, np.random.default_rng(2))
        resid = out - frame
        assert abs(resid.std() - 0.1) < 0.015  # clamping perturbs slightly
        assert np.all(out >= 0.0)

    def test_deterministic_under_seed(self):
        frame = np.random.default_rng(3).uniform(size=(8, 8))
        a = inject_noise(frame, 10.0, np.random.default_rng(77))
        b = inject_noise(frame, 10.0, np.random.default_rng(77))
        assert np.array_equal(a, b)


def delta_sample(n=33, pos=(16, 16), n_t=2):
    frames = np.zeros((n_t, n, n), dtype=np.float32)
    frames[:, pos[0], pos[1]] = 1.0
    return Sample(sample_id=0, frames=frames, label=np.array([0.0, 0, -1.0]),
                  timestamps=np.arange(n_t) / 60.0)


class TestAugment:
    def test_identity_when_disabled(self):
        s = delta_sample()
        out = augment(s, np.random.default_rng(0), rotation_deg=0.0,
                      translation_px=0, noise_sigma_aug=0.0)
        assert np.array_equal(out.frames, s.frames)
        assert np.array_equal(out.label, s.label)

    def test_pure_translation_moves_delta_exactly(self):
        s = delta_sample()

        class FixedRng:
            def uniform(self, lo, hi):
                return 0.0
            def integers(self, lo, hi, size):
                return np.array([0, 5])
            def normal(self, mu, sigma, shape):
                return np.zeros(shape)

        out = augment(s, FixedRng(), rotation_deg=5.0, translation_px=5,
                      noise_sigma_aug=0.0)
        for k in range(s.frames.shape[0]):
            r, c = np.unravel_index(out.frames[k].argmax(), out.frames[k].shape)
            assert (r, c) == (16, 21)

    def test_rotation_lands_near_analytic_position(self):
        s = delta_sample(pos=(24, 16))  # offset (8, 0) from center (16, 16)

        class FixedRng:
            def uniform(self, lo, hi):
                return 5.0
            def integers(self, lo, hi, size):
                return np.array([0, 0])
            def normal(self, mu, sigma, shape):
                return np.zeros(shape)

        out = augment(s, FixedRng(), rotation_deg=5.0, translation_px=5,
                      noise_sigma_aug=0.0)
        th = math.radians(5.0)
        want = (16 + 8 * math.cos(th), 16 + 8 * math.sin(th))
        r, c = np.unravel_index(out.frames[0].argmax(), out.frames[0].shape)
        assert math.hypot(r - want[0], c - want[1]) <= 1.0

    def test_same_rotation_and_shift_across_frames(self):
        # identical input frames + one shared transform => identical outputs
        s = delta_sample(n_t=4)
        out = augment(s, np.random.default_rng(5), noise_sigma_aug=0.0)
        assert all(np.array_equal(out.frames[k], out.frames[0]) for k in range(1, 4))

    def test_noise_clamped_and_label_kept(self):
        s = delta_sample(n_t=3)
        out = augment(s, np.random.default_rng(6))
        assert np.array_equal(out.label, s.label)
        assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0
        assert not np.array_equal(out.frames[0], out.frames[1])  # per-frame noise


class TestSplits:
    def test_floor_counts_example(self):
        assert split_counts(10) == {"train": 7, "val": 1, "test": 2}
        assert split_counts(200) == {"train": 140, "val": 30, "test": 30}

    def test_partition_disjoint_and_complete(self):
        assignment = assign_splits(57)
        assert len(assignment) == 57
        counts = split_counts(57)
        for split, want in counts.items():
            assert sum(1 for s in assignment.values() if s == split) == want

    def test_assignment_deterministic(self):
        assert assign_splits(40) == assign_splits(40)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    cfg = small_cfg()
    manifest = generate_dataset(cfg, out)
    return cfg, out, manifest


class TestGenerateDataset:
    def test_manifest_contents(self, tiny_dataset):
        cfg, out, manifest = tiny_dataset
        assert manifest.counts == {"train": 4, "val": 0, "test": 2}
        assert manifest.m == 64 and manifest.n1x == 32
        assert manifest.seeds == {"master": 11}
        assert manifest.noise == {"snr_db": None}
        raw = json.loads((out / "manifest.json").read_text())
        assert list(raw.keys()) == ["version", "m", "n", "n1x", "n2x", "n_t",
                                    "fps", "counts", "seeds", "noise", "files"]
        validate_dataset(out)

    def test_roundtrip_bit_exact(self, tiny_dataset):
        cfg, out, _ = tiny_dataset
        shared, samples = load_split(out, "train")
        assert len(samples) == 4
        regen = generate_sample(cfg, SharedScene.from_config(cfg), cfg.seed,
                                samples[0].sample_id)
        assert np.array_equal(regen.frames, samples[0].frames)

    def test_labels_are_unit_and_resolve(self, tiny_dataset):
        cfg, out, _ = tiny_dataset
        shared, samples = load_split(out, "train")
        for sample in samples:
            assert abs(np.linalg.norm(sample.label) - 1.0) < 1e-9
            scene = sample.scene
            surf = shared.surface(scene)
            t_last = float(sample.timestamps[-1])
            geom = LinkGeometry(
                transmitter=np.asarray(scene.transmitter),
                receiver=np.asarray(scene.receiver),
                tx_boresight=np.array([0.0, 0, 1.0]),
                rx_boresight=np.asarray(scene.rx_boresight), t=t_last, surf=surf)
            sol = solve_refraction_point(geom, shared.optics)
            resolved = unit(sol.point - np.asarray(scene.receiver))
            assert np.linalg.norm(resolved - sample.label) < 1e-6

    def test_deterministic_regeneration_bytes(self, tmp_path):
        cfg = small_cfg(n_samples=3)
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        generate_dataset(cfg, a_dir)
        generate_dataset(cfg, b_dir)
        for name in ("manifest.json", "frames_train.bin", "labels_train.csv",
                     "scenes_train.json"):
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()

    def test_crop_render_equals_full_render(self, tmp_path):
        cfg_fast = small_cfg(n_samples=1, render_crop_only=True)
        cfg_full = small_cfg(n_samples=1, render_crop_only=False)
        shared = SharedScene.from_config(cfg_fast)
        fast = generate_sample(cfg_fast, shared, cfg_fast.seed, 0)
        full = generate_sample(cfg_full, shared, cfg_full.seed, 0)
        assert np.array_equal(fast.frames, full.frames)

    def test_frames_have_beacon(self, tiny_dataset):
        _, out, _ = tiny_dataset
        _, samples = load_split(out, "train")
        lit_frames = sum(int(f.max() > 0) for s in samples for f in s.frames)
        total = sum(s.frames.shape[0] for s in samples)
        assert lit_frames / total > 0.8
