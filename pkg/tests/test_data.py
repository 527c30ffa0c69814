"""Generator ground-truth guarantees, augmentation geometry, and the
.flo / PPM / PGM byte formats."""

import numpy as np
import pytest

from smflow.autodiff import Tensor
from smflow.data import (
    AugmentSpec,
    FloFormatError,
    MotionModel,
    PnmFormatError,
    SamplePair,
    SceneLayer,
    LayeredScene,
    augment,
    dataset,
    flo_read,
    flo_write,
    generate_scene,
    geometric_transform,
    pgm_read,
    pgm_write,
    photometric_consistency,
    ppm_read,
    ppm_write,
    render_scene,
)
from smflow.losses import bending_energy


def fixed_scene(h=32, w=32, t=(2.0, 0.0), bg_t=(0.0, 0.0)):
    """One translating square over a static background, known exactly."""
    rng = np.random.default_rng(0)
    tex = lambda: rng.random((3, h, w))
    ident = np.eye(2)
    c = np.array([w / 2, h / 2])
    bg = SceneLayer(rect=(-np.inf, -np.inf, np.inf, np.inf),
                    motion=MotionModel(ident, np.asarray(bg_t, dtype=np.float64), c),
                    texture=tex())
    layer = SceneLayer(rect=(8.0, 10.0, 20.0, 22.0),
                       motion=MotionModel(ident, np.asarray(t, dtype=np.float64), c),
                       texture=tex())
    return render_scene(LayeredScene(background=bg, layers=[layer]), h, w, seed=0)


class TestGenerateScene:
    def test_translation_layer_flow_is_exact(self):
        pair = fixed_scene(t=(2.0, 0.0))
        xs, ys = np.meshgrid(np.arange(32), np.arange(32))
        inside = (xs >= 8) & (xs <= 20) & (ys >= 10) & (ys <= 22)
        assert (pair.gt[0][inside] == 2.0).all() and (pair.gt[1][inside] == 0.0).all()
        assert (pair.gt[0][~inside] == 0.0).all() and (pair.gt[1][~inside] == 0.0).all()

    def test_same_seed_bitwise_identical(self):
        a = generate_scene(11, 64, 64)
        b = generate_scene(11, 64, 64)
        for field in ("img1", "img2", "gt", "occlusion"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))

    def test_photometric_self_consistency(self):
        for seed in range(8):
            pair = generate_scene(seed, 64, 64)
            assert photometric_consistency(pair) < 0.02

    def test_gt_is_piecewise_affine_for_bending(self):
        pair = fixed_scene(t=(3.0, -1.5), bg_t=(0.5, 0.25))
        # a window strictly inside the moving layer: constant flow
        win = pair.gt[:, 12:20, 10:18]
        assert bending_energy(Tensor(win[None].copy())).item() == 0.0

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            generate_scene(0, 63, 64)
        with pytest.raises(ValueError):
            generate_scene(0, 64, 64, n_layers=5)

    def test_values_in_range(self):
        pair = generate_scene(3, 64, 64)
        for img in (pair.img1, pair.img2):
            assert img.min() >= 0.0 and img.max() <= 1.0


class TestAugment:
    def test_disabled_ops_are_exact_identity(self):
        pair = generate_scene(1, 64, 64)
        spec = AugmentSpec(geometric=False, noise=False, jitter=False)
        out = augment(pair, spec, seed=5)
        np.testing.assert_array_equal(out.img1, pair.img1)
        np.testing.assert_array_equal(out.img2, pair.img2)
        np.testing.assert_array_equal(out.gt, pair.gt)

    def test_zero_parameter_transform_is_exact_identity(self):
        pair = generate_scene(2, 64, 64)
        out = geometric_transform(pair, 0.0, 0.0, 0.0)
        np.testing.assert_array_equal(out.img1, pair.img1)
        np.testing.assert_array_equal(out.gt, pair.gt)

    def test_pure_translation_moves_support_not_vectors(self):
        pair = fixed_scene(t=(2.0, 0.0))
        out = geometric_transform(pair, 0.0, 5.0, 0.0)
        xs, ys = np.meshgrid(np.arange(32), np.arange(32))
        inside_shifted = (xs >= 8 + 5) & (xs <= 20 + 5) & (ys >= 10) & (ys <= 22)
        assert (out.gt[0][inside_shifted] == 2.0).all()
        assert (out.gt[1][inside_shifted] == 0.0).all()
        # interior background (sampled in-frame, away from the layer)
        assert out.gt[0][2, 8] == 0.0

    def test_rotation_rotates_flow_vectors(self):
        const = np.zeros((2, 16, 16))
        const[0] = 1.0  # constant flow (1, 0)
        pair = SamplePair(img1=np.zeros((3, 16, 16)), img2=np.zeros((3, 16, 16)),
                          gt=const, seed=0)
        out = geometric_transform(pair, 90.0, 0.0, 0.0)
        np.testing.assert_allclose(out.gt[0], 0.0, atol=1e-12)
        np.testing.assert_allclose(out.gt[1], 1.0, atol=1e-12)

    def test_sampled_parameters_stay_in_ranges(self):
        pair = generate_scene(4, 64, 64)
        spec = AugmentSpec()
        for seed in range(6):
            out = augment(pair, spec, seed)
            assert out.img1.min() >= 0.0 and out.img1.max() <= 1.0
            # shared geometric transform: both frames see the same warp,
            # so a static scene stays aligned
            static = SamplePair(img1=pair.img1, img2=pair.img1,
                                gt=np.zeros_like(pair.gt), seed=0)
            spec_geo = AugmentSpec(noise=False, jitter=False)
            got = augment(static, spec_geo, seed)
            np.testing.assert_array_equal(got.img1, got.img2)


class TestFloFormat:
    def test_round_trip_is_f32_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        flow = rng.normal(0, 3, (2, 6, 9))
        path = str(tmp_path / "f.flo")
        flo_write(flow, path)
        back = flo_read(path)
        np.testing.assert_array_equal(back, flow.astype(np.float32).astype(np.float64))

    def test_byte_layout(self, tmp_path):
        flow = np.array([[[1.5, 0.0]], [[-2.25, 0.0]]])  # 2x1x2 -> w=2,h=1
        path = str(tmp_path / "f.flo")
        flo_write(flow, path)
        raw = open(path, "rb").read()
        assert raw[:4] == b"PIEH"
        assert np.frombuffer(raw[4:12], dtype="<i4").tolist() == [2, 1]
        vals = np.frombuffer(raw[12:], dtype="<f4")
        np.testing.assert_array_equal(vals, [1.5, -2.25, 0.0, 0.0])

    def test_wrong_magic_rejected(self, tmp_path):
        path = str(tmp_path / "bad.flo")
        with open(path, "wb") as fh:
            fh.write(b"JUNK" + b"\x00" * 16)
        with pytest.raises(FloFormatError):
            flo_read(path)

    def test_truncated_rejected(self, tmp_path):
        path = str(tmp_path / "t.flo")
        flo_write(np.zeros((2, 4, 4)), path)
        data = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(data[:-8])
        with pytest.raises(FloFormatError):
            flo_read(path)

    def test_dimension_overflow_rejected(self, tmp_path):
        path = str(tmp_path / "d.flo")
        with open(path, "wb") as fh:
            fh.write(np.array([202021.25], dtype="<f4").tobytes())
            fh.write(np.array([2 * 10**6, 4], dtype="<i4").tobytes())
        with pytest.raises(FloFormatError):
            flo_read(path)

    def test_non_finite_rejected(self, tmp_path):
        flow = np.zeros((2, 2, 2))
        flow[0, 0, 0] = np.nan
        with pytest.raises(FloFormatError):
            flo_write(flow, str(tmp_path / "n.flo"))


class TestPnmFormats:
    def test_quantized_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        img = np.round(rng.random((3, 5, 7)) * 255) / 255.0
        path = str(tmp_path / "i.ppm")
        ppm_write(img, path)
        np.testing.assert_array_equal(ppm_read(path), img)

    def test_extreme_values(self, tmp_path):
        img = np.zeros((3, 1, 2))
        img[:, 0, 1] = 1.0
        path = str(tmp_path / "e.ppm")
        ppm_write(img, path)
        raw = open(path, "rb").read()
        assert raw.endswith(bytes([0, 0xFF] * 3)) or raw[-6:] == bytes([0, 0, 0, 255, 255, 255])

    def test_white_pixel_bytes(self, tmp_path):
        path = str(tmp_path / "w.ppm")
        ppm_write(np.ones((3, 1, 1)), path)
        assert open(path, "rb").read() == b"P6\n1 1\n255\n\xff\xff\xff"

    def test_pgm_round_trip(self, tmp_path):
        img = np.round(np.random.default_rng(7).random((4, 6)) * 255) / 255.0
        path = str(tmp_path / "g.pgm")
        pgm_write(img, path)
        np.testing.assert_array_equal(pgm_read(path), img)

    def test_malformed_header_rejected(self, tmp_path):
        path = str(tmp_path / "bad.ppm")
        with open(path, "wb") as fh:
            fh.write(b"P5\n2 2\n255\n" + b"\x00" * 4)
        with pytest.raises(PnmFormatError):
            ppm_read(path)  # P5 magic where P6 expected

    def test_truncated_payload_rejected(self, tmp_path):
        path = str(tmp_path / "tr.ppm")
        with open(path, "wb") as fh:
            fh.write(b"P6\n2 2\n255\n" + b"\x00" * 5)
        with pytest.raises(PnmFormatError):
            ppm_read(path)

    def test_bad_maxval_rejected(self, tmp_path):
        path = str(tmp_path / "mv.pgm")
        with open(path, "wb") as fh:
            fh.write(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(PnmFormatError):
            pgm_read(path)


class TestDataset:
    def test_deterministic_sequence(self):
        a = dataset(3, 10, 32, 32)
        b = dataset(3, 10, 32, 32)
        for i in range(10):
            np.testing.assert_array_equal(a.pair(i).img1, b.pair(i).img1)
            np.testing.assert_array_equal(a.pair(i).gt, b.pair(i).gt)

    def test_distinct_counter_derived_seeds(self):
        ds = dataset(5, 100, 32, 32)
        seeds = {ds.sample_seed(i) for i in range(100)}
        assert len(seeds) == 100

    def test_split_is_disjoint_parity_of_shuffle(self):
        ds = dataset(9, 40, 32, 32)
        train, val = set(ds.train_indices), set(ds.val_indices)
        assert train.isdisjoint(val)
        assert train | val == set(range(40))
        assert len(train) == len(val) == 20

    def test_augment_seed_separate_from_base(self):
        ds = dataset(2, 4, 32, 32, augment_spec=AugmentSpec())
        base_twice = [ds.pair(0).img1.copy(), ds.pair(0).img1.copy()]
        np.testing.assert_array_equal(*base_twice)
        a = ds.augmented_pair(0, 1)
        b = ds.augmented_pair(0, 2)
        assert not np.array_equal(a.img1, b.img1)
        np.testing.assert_array_equal(ds.pair(0).img1, base_twice[0])
