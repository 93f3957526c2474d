"""Pruebas de los modelos de viñeteo, el análisis de imagen blanca y el embebido."""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from pydantic import ValidationError

from core.errors import DetectionError, InvalidArgumentError, OutOfModelError
from core.priors import (
    UNIT_ETA,
    EtaModel,
    SpatialPrior,
    analyze_white_image,
    embedding_inputs,
    field_angle_map,
    fit_eta,
    read_spatial_prior,
    vignetting_factor,
    vignetting_map,
    vignetting_prior,
    write_spatial_prior,
)
from core.propagate import TABLE_EFFICIENCY

THIRTY_DEG = math.radians(30.0)
# Pitch que coloca el pixel vecino al centro a 30 grados con f = 1000 um.
PITCH_30 = 1000.0 * math.tan(THIRTY_DEG)


def _white_image(p: float, *, size: int = 201, radius: int = 80, pitch: float = 5.0, focal: float = 1000.0) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    rho = np.hypot(xx - c, yy - c)
    theta = np.arctan(rho * pitch / focal)
    image = np.cos(theta) ** (4.0 + p)
    image[rho > radius] = 0.0
    return image


class VignettingModelTests(SimpleTestCase):
    def test_cos4_falloff_at_thirty_degrees(self):
        self.assertAlmostEqual(float(vignetting_factor(THIRTY_DEG, UNIT_ETA)), 0.5625, places=4)

    def test_cosine_power_adds_to_cos4(self):
        eta = EtaModel(kind="cosine-power", parameters=(2.0,))
        self.assertAlmostEqual(float(vignetting_factor(THIRTY_DEG, eta)), 0.4219, places=4)

    def test_map_is_normalized_at_the_center(self):
        eta = EtaModel(kind="cosine-power", parameters=(2.0,))
        prior = vignetting_map(3, 1, 1000.0, PITCH_30, eta)
        self.assertEqual(prior.center, (1.0, 0.0))
        assert_allclose(prior.maps[0, 0], [0.421875, 1.0, 0.421875], rtol=1e-9)

    def test_map_is_symmetric_and_bounded(self):
        prior = vignetting_map(40, 30, 4000.0, 6.0, EtaModel(kind="cosine-power", parameters=(1.5,)))
        y = prior.maps[0]
        assert_allclose(y, y[::-1, ::-1])
        self.assertLessEqual(float(y.max()), 1.0)
        self.assertGreater(float(y.min()), 0.0)

    def test_angle_map_uses_physical_distance(self):
        theta = field_angle_map(5, 5, 1000.0, 10.0, center=(0.0, 0.0))
        self.assertAlmostEqual(float(theta[0, 3]), math.atan(0.03))
        self.assertEqual(float(theta[0, 0]), 0.0)

    def test_corner_beyond_theta_max_is_out_of_model(self):
        eta = EtaModel(kind="cosine-power", parameters=(1.0,), theta_max=math.radians(10.0))
        with self.assertRaises(OutOfModelError):
            vignetting_map(100, 100, 1000.0, 10.0, eta)

    def test_evaluate_rejects_angles_past_theta_max(self):
        eta = EtaModel(kind="cosine-power", parameters=(1.0,), theta_max=0.2)
        with self.assertRaises(OutOfModelError):
            eta.evaluate(0.3)

    def test_prior_needs_one_or_three_models(self):
        with self.assertRaises(InvalidArgumentError):
            vignetting_prior(8, 8, 1000.0, 5.0, [UNIT_ETA, UNIT_ETA])

    def test_per_channel_prior_stacks_maps(self):
        etas = [EtaModel(kind="cosine-power", parameters=(p,)) for p in (0.0, 1.0, 2.0)]
        prior = vignetting_prior(16, 12, 1000.0, 20.0, etas)
        self.assertFalse(prior.shared)
        self.assertEqual(prior.maps.shape, (3, 12, 16))
        # Mayor exponente, mayor caida en la esquina.
        corners = prior.maps[:, 0, 0]
        self.assertTrue(corners[0] > corners[1] > corners[2])


class EtaModelValidationTests(SimpleTestCase):
    def test_increasing_polynomial_is_rejected(self):
        with self.assertRaises(ValidationError):
            EtaModel(kind="polynomial", parameters=(0.5,), theta_max=0.5)

    def test_table_must_start_at_one(self):
        with self.assertRaises(ValidationError):
            EtaModel(kind="tabulated-radial", parameters=(0.9, 0.8), angles_rad=(0.0, 0.5), theta_max=0.5)

    def test_table_interpolates_linearly(self):
        eta = EtaModel(kind="tabulated-radial", parameters=(1.0, 0.6), angles_rad=(0.0, 0.4), theta_max=0.4)
        self.assertAlmostEqual(float(eta.evaluate(0.2)), 0.8)

    def test_negative_exponent_is_rejected(self):
        with self.assertRaises(ValidationError):
            EtaModel(kind="cosine-power", parameters=(-1.0,))


class EtaFitTests(SimpleTestCase):
    theta = np.linspace(0.0, 0.5, 60)

    def test_recovers_cosine_power(self):
        profile = np.cos(self.theta) ** 4 * np.cos(self.theta) ** 2.5
        model, warnings = fit_eta(self.theta, profile, "cosine-power")
        self.assertAlmostEqual(model.parameters[0], 2.5, places=4)
        self.assertEqual(warnings, [])

    def test_polynomial_fit_is_normalized_at_zero(self):
        g = 1.0 - 0.8 * self.theta**2
        model, _ = fit_eta(self.theta, g * np.cos(self.theta) ** 4, "polynomial")
        self.assertEqual(model.kind, "polynomial")
        self.assertAlmostEqual(model.parameters[0], -0.8, places=6)
        self.assertAlmostEqual(model.parameters[1], 0.0, places=6)

    def test_non_monotone_profile_warns_and_falls_back_to_table(self):
        g = 1.0 - 0.5 * np.sin(8.0 * self.theta) ** 2 + 0.6 * self.theta**2
        with self.assertLogs("core.priors", level="WARNING"):
            model, warnings = fit_eta(self.theta, g * np.cos(self.theta) ** 4, "polynomial")
        self.assertTrue(warnings)
        self.assertIn(model.kind, ("polynomial", "tabulated-radial"))
        values = model.evaluate(self.theta)
        self.assertTrue(np.all(np.diff(values) <= 1e-12))


class WhiteImageAnalysisTests(SimpleTestCase):
    def test_recovers_center_and_exponent(self):
        analysis = analyze_white_image(_white_image(3.0), focal_length=1000.0, pixel_pitch=5.0)
        assert_allclose(analysis.center, (100.0, 100.0), atol=0.05)
        self.assertEqual(len(analysis.models), 1)
        self.assertAlmostEqual(analysis.models[0].parameters[0], 3.0, delta=0.2)
        self.assertEqual(analysis.row_profiles.shape, (1, 201))
        self.assertAlmostEqual(float(analysis.profiles[0, 0]), 1.0)

    def test_color_image_gets_one_model_per_channel(self):
        image = np.stack([_white_image(p) for p in (1.0, 2.0, 4.0)], axis=-1)
        analysis = analyze_white_image(image, focal_length=1000.0, pixel_pitch=5.0, threads=3)
        exponents = [m.parameters[0] for m in analysis.models]
        assert_allclose(exponents, [1.0, 2.0, 4.0], atol=0.2)
        self.assertEqual(len(analysis.channel_means), 3)

    def test_threads_do_not_change_the_profile(self):
        image = _white_image(2.0)
        one = analyze_white_image(image, focal_length=1000.0, pixel_pitch=5.0, threads=1)
        four = analyze_white_image(image, focal_length=1000.0, pixel_pitch=5.0, threads=4)
        assert_allclose(one.profiles, four.profiles, rtol=0, atol=1e-12)

    def test_uniform_image_is_a_detection_error(self):
        with self.assertRaises(DetectionError):
            analyze_white_image(np.full((32, 32), 0.7), focal_length=1000.0, pixel_pitch=5.0)


class EmbeddingInputTests(SimpleTestCase):
    def test_stack_holds_prior_and_normalized_coordinates(self):
        prior = vignetting_map(9, 5, 1000.0, 20.0, UNIT_ETA)
        inputs = embedding_inputs(TABLE_EFFICIENCY, prior)
        self.assertEqual(inputs.spatial_stack.shape, (3, 5, 9))
        assert_allclose(inputs.spatial_stack[0], prior.maps[0])
        assert_allclose(inputs.spatial_stack[1, 0], np.linspace(-1.0, 1.0, 9))
        assert_allclose(inputs.spatial_stack[2, :, 0], np.linspace(-1.0, 1.0, 5))
        assert_allclose(inputs.channel_vector, TABLE_EFFICIENCY.efficiency)

    def test_per_channel_prior_is_averaged(self):
        maps = np.stack([np.full((4, 4), v) for v in (0.2, 0.4, 0.9)])
        inputs = embedding_inputs(TABLE_EFFICIENCY, SpatialPrior(maps=maps, center=(1.5, 1.5)))
        assert_allclose(inputs.spatial_stack[0], 0.5)
        assert_allclose(inputs.channel_vector, TABLE_EFFICIENCY.efficiency)

    def test_shared_prior_passes_through(self):
        plane = np.linspace(0.3, 1.0, 16).reshape(4, 4)
        inputs = embedding_inputs(TABLE_EFFICIENCY, SpatialPrior(maps=plane[None], center=(1.5, 1.5)))
        assert_allclose(inputs.spatial_stack[0], plane, rtol=1e-6)
        self.assertEqual(inputs.spatial_stack.shape, (3, 4, 4))


class SpatialPriorFileTests(SimpleTestCase):
    def test_prior_file_keeps_center_and_geometry(self):
        prior = vignetting_map(12, 8, 1000.0, 20.0, EtaModel(kind="cosine-power", parameters=(2.0,)))
        with tempfile.TemporaryDirectory() as tmp:
            loaded = read_spatial_prior(write_spatial_prior(Path(tmp) / "prior.raster", prior))
        self.assertEqual(loaded.center, prior.center)
        self.assertEqual(loaded.pixel_pitch, 20.0)
        assert_allclose(loaded.maps, prior.maps, atol=1e-6)

    def test_values_above_one_are_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            SpatialPrior(maps=np.full((4, 4), 1.5), center=(0.0, 0.0))
