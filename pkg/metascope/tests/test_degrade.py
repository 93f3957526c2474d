"""Pruebas del modelo de degradación y de la síntesis de datasets pareados."""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from core.degrade import (
    MANIFEST_NAME,
    DatasetInput,
    DegradeConfig,
    VignettingRecipe,
    collect_inputs,
    config_hash,
    convolve_fft,
    correlated_noise,
    degrade_image,
    derive_image_seed,
    forward_model,
    load_dataset_manifest,
    load_degrade_config,
    synthesize_dataset,
)
from core.errors import ConfigurationError, DatasetError
from core.images import ImageTensor, write_mask, write_png
from core.lens import REFERENCE_LENS
from core.priors import EtaModel, SpatialPrior
from core.propagate import EfficiencyVector, PSFStack, write_psf_stack
from core.synthetic import checkerboard, delta_psf, gaussian_psf

CHANNEL_NM = (650.0, 532.0, 450.0)
FLAT_EFFICIENCY = EfficiencyVector(wavelengths_nm=(450.0, 532.0, 650.0), efficiency=(1.0, 1.0, 1.0))


def _stack(psfs: list[np.ndarray]) -> PSFStack:
    n = len(psfs)
    return PSFStack(
        wavelengths_nm=CHANNEL_NM[:n],
        psfs=np.stack(psfs),
        pitch=4.0,
        sensor_distance_mm=5.0,
        centroids=np.zeros((n, 2)),
        window_centers=np.zeros((n, 2)),
    )


def _identity_config(**overrides) -> DegradeConfig:
    options = {
        "psf": _stack([delta_psf(5)] * 3),
        "efficiency": FLAT_EFFICIENCY,
        "wb_gains": (1.0, 1.0, 1.0),
        "noise_sigma": 0.0,
    }
    options.update(overrides)
    return DegradeConfig(**options)


def _direct_convolution(channel: np.ndarray, psf: np.ndarray, origin: tuple[int, int]) -> np.ndarray:
    h, w = channel.shape
    kh, kw = psf.shape
    oy, ox = origin
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            total = 0.0
            for a in range(kh):
                for b in range(kw):
                    y, x = i + oy - a, j + ox - b
                    if 0 <= y < h and 0 <= x < w:
                        total += psf[a, b] * channel[y, x]
            out[i, j] = total
    return out


def _edge_width(profile: np.ndarray) -> int:
    lo, hi = profile[0], profile[-1]
    normalized = (profile - lo) / (hi - lo)
    return int(np.count_nonzero((normalized > 0.1) & (normalized < 0.9)))


class ConvolutionTests(SimpleTestCase):
    def test_delta_kernel_is_identity(self):
        channel = np.random.default_rng(0).random((16, 20))
        assert_array_equal(convolve_fft(channel, delta_psf(7)), channel)

    def test_constant_channel_stays_constant_away_from_borders(self):
        out = convolve_fft(np.full((40, 40), 0.3), gaussian_psf(7, 1.2))
        assert_allclose(out[4:-4, 4:-4], 0.3, atol=1e-12)

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(5)
        channel = rng.random((32, 32))
        psf = rng.random((5, 5))
        psf /= psf.sum()
        fast = convolve_fft(channel, psf, origin=(2, 2))
        assert_allclose(fast, _direct_convolution(channel, psf, (2, 2)), atol=1e-6)

    def test_unnormalized_kernel_warns_and_is_normalized(self):
        channel = np.full((12, 12), 0.5)
        with self.assertLogs("core.degrade", level="WARNING"):
            out = convolve_fft(channel, 2.0 * gaussian_psf(5, 1.0))
        self.assertAlmostEqual(float(out[6, 6]), 0.5, places=9)


class ForwardModelTests(SimpleTestCase):
    def test_identity_configuration_is_exact(self):
        clean = ImageTensor(np.random.default_rng(1).random((3, 24, 18)))
        degraded = degrade_image(clean, _identity_config())
        assert_array_equal(degraded.values, clean.values)

    def test_blue_efficiency_halves_the_blue_channel(self):
        efficiency = EfficiencyVector(wavelengths_nm=(450.0, 532.0, 650.0), efficiency=(0.5, 1.0, 1.0))
        clean = ImageTensor(np.random.default_rng(2).random((3, 10, 10)))
        out = forward_model(clean, _identity_config(efficiency=efficiency))
        assert_allclose(out[2], 0.5 * clean.values[2].astype(np.float64))
        assert_allclose(out[:2], clean.values[:2].astype(np.float64))

    def test_linear_before_clamp(self):
        cfg = _identity_config(psf=_stack([gaussian_psf(7, s) for s in (2.0, 0.8, 3.0)]))
        clean = ImageTensor(np.random.default_rng(3).random((3, 20, 20)))
        scaled = ImageTensor(0.25 * clean.values)
        assert_allclose(forward_model(scaled, cfg), 0.25 * forward_model(clean, cfg), rtol=1e-6, atol=1e-9)

    def test_spatial_prior_multiplies_before_blur(self):
        prior = SpatialPrior(maps=np.full((1, 8, 8), 0.5), center=(3.5, 3.5))
        out = forward_model(ImageTensor(np.ones((3, 8, 8))), _identity_config(spatial=prior))
        assert_allclose(out, 0.5)

    def test_defocused_channels_fringe_more_than_green(self):
        cfg = _identity_config(psf=_stack([gaussian_psf(21, s) for s in (2.0, 0.8, 3.0)]))
        plane = np.where(np.arange(64) < 32, 0.2, 0.8)[None, :].repeat(32, axis=0)
        out = forward_model(ImageTensor(np.stack([plane] * 3)), cfg)
        widths = [_edge_width(out[c, 16, 12:53]) for c in range(3)]
        red, green, blue = widths
        self.assertGreater(blue, red)
        self.assertGreater(red, green)

    def test_displaced_kernel_shifts_about_the_raster_centre(self):
        psf = np.zeros((7, 7))
        psf[3, 5] = 1.0
        clean = np.random.default_rng(7).random((3, 12, 12))
        out = forward_model(ImageTensor(clean), _identity_config(psf=_stack([psf] * 3)))
        assert_allclose(out[:, :, 2:], clean[:, :, :-2], atol=1e-6)
        assert_allclose(out[:, :, :2], 0.0, atol=1e-6)
        # Con el centroide como origen el mismo kernel es la identidad.
        assert_array_equal(convolve_fft(clean[0].astype(np.float64), psf), clean[0])

    def test_prior_size_mismatch_is_a_configuration_error(self):
        prior = SpatialPrior(maps=np.ones((1, 4, 4)), center=(1.5, 1.5))
        with self.assertRaises(ConfigurationError):
            forward_model(ImageTensor(np.ones((3, 8, 8))), _identity_config(spatial=prior))

    def test_missing_channel_wavelength(self):
        cfg = _identity_config(psf=_stack([delta_psf(3)] * 2))
        with self.assertRaises(ConfigurationError):
            cfg.validate_channels()

    def test_vignetting_recipe_builds_per_image(self):
        recipe = VignettingRecipe(focal_length_mm=5.0, pixel_pitch_um=4.0, etas=(EtaModel(),))
        out = forward_model(ImageTensor(np.ones((3, 9, 9))), _identity_config(spatial=recipe))
        self.assertAlmostEqual(float(out[1, 4, 4]), 1.0)
        self.assertLess(float(out[1, 0, 0]), 1.0)


class NoiseTests(SimpleTestCase):
    def test_white_noise_mean_and_std(self):
        noise = correlated_noise((256, 256), 0.05, 0, np.random.default_rng(4))
        self.assertLess(abs(float(noise.mean())), 3.0 * 0.05 / 256)
        self.assertAlmostEqual(float(noise.std()), 0.05, delta=0.0025)

    def test_correlated_noise_keeps_variance_and_short_support(self):
        noise = correlated_noise((256, 256), 0.05, 2, np.random.default_rng(6))
        self.assertAlmostEqual(float(noise.std()), 0.05, delta=0.0025)
        centered = noise - noise.mean()

        def correlation(lag: int) -> float:
            return float(np.mean(centered * np.roll(centered, lag, axis=1)) / np.mean(centered**2))

        self.assertGreater(correlation(1), 0.3)
        self.assertLess(abs(correlation(5)), 0.05)

    def test_seeded_noise_is_reproducible(self):
        clean = checkerboard(16, 16, 4)
        cfg = _identity_config(noise_sigma=0.02)
        first = degrade_image(clean, cfg, seed=7)
        again = degrade_image(clean, cfg, seed=7)
        other = degrade_image(clean, cfg, seed=8)
        assert_array_equal(first.values, again.values)
        self.assertFalse(np.array_equal(first.values, other.values))

    def test_image_seed_depends_only_on_name(self):
        self.assertEqual(derive_image_seed(3, "a.png"), derive_image_seed(3, "a.png"))
        self.assertNotEqual(derive_image_seed(3, "a.png"), derive_image_seed(3, "b.png"))
        self.assertNotEqual(derive_image_seed(3, "a.png"), derive_image_seed(4, "a.png"))


class DegradeConfigFileTests(SimpleTestCase):
    def test_relative_paths_resolve_against_the_document(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            write_psf_stack(root / "psf.raster", _stack([gaussian_psf(5, 1.0)] * 3))
            (root / "config.json").write_text(
                json.dumps(
                    {
                        "psf_path": "psf.raster",
                        "noise": {"sigma": 0.01, "correlation_radius_px": 1},
                        "vignetting": {"focal_length_mm": 5, "pixel_pitch_um": 4},
                        "seed": 42,
                    }
                ),
                encoding="utf-8",
            )
            cfg = load_degrade_config(root / "config.json")
        self.assertEqual(cfg.seed, 42)
        self.assertEqual(cfg.noise_radius, 1)
        self.assertIsInstance(cfg.spatial, VignettingRecipe)
        self.assertEqual(cfg.psf.wavelengths_nm, CHANNEL_NM)

    def test_missing_psf_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.json"
            path.write_text(json.dumps({"psf_path": "absent.raster"}), encoding="utf-8")
            with self.assertRaises(ConfigurationError):
                load_degrade_config(path)

    def test_hash_tracks_content(self):
        base = _identity_config()
        self.assertEqual(config_hash(base), config_hash(_identity_config()))
        self.assertNotEqual(config_hash(base), config_hash(_identity_config(seed=1)))


class DatasetSynthesisTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.source = self.root / "clean"
        (self.source / "masks").mkdir(parents=True)
        for index, square in enumerate((2, 4, 8)):
            write_png(self.source / f"img_{index}.png", checkerboard(16, 16, square))
        write_mask(self.source / "masks" / "img_0.png", np.eye(16, dtype=np.int64))
        self.cfg = _identity_config(psf=_stack([gaussian_psf(5, s) for s in (1.5, 0.7, 2.0)]), noise_sigma=0.02)

    def tearDown(self):
        self._tmp.cleanup()

    def test_inputs_pick_up_masks(self):
        inputs = collect_inputs(self.source)
        self.assertEqual([i.clean_path.name for i in inputs], ["img_0.png", "img_1.png", "img_2.png"])
        self.assertIsNotNone(inputs[0].mask_path)
        self.assertIsNone(inputs[1].mask_path)

    def test_manifest_entries_share_the_config_hash(self):
        manifest = synthesize_dataset(collect_inputs(self.source), REFERENCE_LENS, self.cfg, self.root / "out")
        self.assertEqual(len(manifest.entries), 3)
        self.assertEqual({e.config_hash for e in manifest.entries}, {config_hash(self.cfg)})
        self.assertEqual(manifest.entries[0].mask_path, "masks/img_0.png")
        loaded = load_dataset_manifest(self.root / "out" / MANIFEST_NAME)
        self.assertEqual(loaded, manifest)
        self.assertTrue((self.root / "out" / "degraded" / "img_2.png").is_file())

    def test_reruns_are_byte_identical_and_order_free(self):
        inputs = collect_inputs(self.source)
        synthesize_dataset(inputs, REFERENCE_LENS, self.cfg, self.root / "a", threads=1)
        synthesize_dataset(list(reversed(inputs)), REFERENCE_LENS, self.cfg, self.root / "b", threads=3)
        for name in ("img_0.png", "img_1.png", "img_2.png"):
            self.assertEqual(
                (self.root / "a" / "degraded" / name).read_bytes(),
                (self.root / "b" / "degraded" / name).read_bytes(),
            )

    def test_new_seed_changes_only_the_noise(self):
        inputs = collect_inputs(self.source)
        synthesize_dataset(inputs, REFERENCE_LENS, self.cfg, self.root / "a")
        reseeded = _identity_config(psf=self.cfg.psf, noise_sigma=0.02, seed=99)
        synthesize_dataset(inputs, REFERENCE_LENS, reseeded, self.root / "b")
        name = "img_1.png"
        self.assertEqual((self.root / "a" / "clean" / name).read_bytes(), (self.root / "b" / "clean" / name).read_bytes())
        self.assertNotEqual(
            (self.root / "a" / "degraded" / name).read_bytes(), (self.root / "b" / "degraded" / name).read_bytes()
        )

    def test_unreadable_image_is_recorded(self):
        (self.source / "broken.png").write_bytes(b"not a png")
        manifest = synthesize_dataset(collect_inputs(self.source), REFERENCE_LENS, self.cfg, self.root / "out")
        broken = [e for e in manifest.entries if e.name == "broken.png"]
        self.assertEqual(len(broken), 1)
        self.assertIsNotNone(broken[0].error)
        self.assertEqual(len(manifest.ok_entries), 3)

    def test_nothing_processed_leaves_no_output(self):
        (self.root / "bad").mkdir()
        (self.root / "bad" / "broken.png").write_bytes(b"not a png")
        with self.assertRaises(DatasetError):
            synthesize_dataset(collect_inputs(self.root / "bad"), REFERENCE_LENS, self.cfg, self.root / "out")
        self.assertFalse((self.root / "out").exists())

    def test_listed_inputs_resolve_relative_paths(self):
        listing = self.root / "inputs.json"
        listing.write_text(
            json.dumps({"entries": [{"clean_path": "clean/img_0.png", "mask_path": "clean/masks/img_0.png"}]}),
            encoding="utf-8",
        )
        self.assertEqual(
            collect_inputs(listing),
            [DatasetInput(self.source / "img_0.png", self.source / "masks" / "img_0.png")],
        )
