"""Pruebas del diseño de fase y de la máscara de transmisión."""

from __future__ import annotations

import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from pydantic import ValidationError

from core.errors import OutOfBandError, UnderSampledError
from core.field import FieldGrid, aperture_mask
from core.lens import (
    REFERENCE_LENS,
    AchromaticDesign,
    LensDesign,
    MetaAtomLUT,
    achromatic_delta_phase,
    build_transmission,
    focal_length_at,
    focusing_phase,
    lens_document,
    lut_lookup,
    mask_phase,
)

BINARY_LUT = MetaAtomLUT(diameters_nm=(100.0, 150.0), phase_rad=(0.0, math.pi), transmission=(0.9, 0.8))


class FocusingPhaseTests(SimpleTestCase):
    def test_zero_on_axis(self):
        self.assertEqual(focusing_phase(0.0, 0.532, 10_000.0), 0.0)

    def test_reference_lens_edge(self):
        self.assertAlmostEqual(focusing_phase(1300.0, 0.532, 10_000.0), -993.8, delta=0.2)

    def test_phase_scales_inverse_with_wavelength(self):
        r = np.linspace(0.0, 1300.0, 7)
        assert_allclose(focusing_phase(r, 1.064, 10_000.0), focusing_phase(r, 0.532, 10_000.0) / 2.0)

    def test_strictly_decreasing_in_radius(self):
        phase = focusing_phase(np.linspace(0.0, 1300.0, 200), 0.532, 10_000.0)
        self.assertTrue(np.all(np.diff(phase) < 0))


class AchromaticPhaseTests(SimpleTestCase):
    band = AchromaticDesign(lambda_min_nm=410.0, lambda_max_nm=650.0, delta_rad=100.0)

    def test_vanishes_at_upper_edge_without_delay(self):
        flat = AchromaticDesign(lambda_min_nm=410.0, lambda_max_nm=650.0, delta_rad=0.0)
        r = np.linspace(0.0, 1300.0, 5)
        assert_allclose(achromatic_delta_phase(r, 0.65, flat, 10_000.0), 0.0, atol=1e-9)

    def test_lower_edge_matches_term_by_term_evaluation(self):
        r, f = 1000.0, 10_000.0
        sag = math.sqrt(r * r + f * f) - f
        focusing = -2.0 * math.pi * sag * (1.0 / 0.41 - 1.0 / 0.65)
        delay = 100.0 * 0.41 * 0.65 / (0.41 * (0.65 - 0.41))
        anchor = -100.0 * 0.41 / (0.65 - 0.41)
        self.assertAlmostEqual(achromatic_delta_phase(r, 0.41, self.band, f), focusing + delay + anchor, places=6)

    def test_out_of_band_is_rejected(self):
        with self.assertRaises(OutOfBandError):
            achromatic_delta_phase(0.0, 0.70, self.band, 10_000.0)

    def test_achromatic_mask_focuses_every_wavelength_at_design_focal(self):
        design = LensDesign(
            diameter_mm=2.6,
            focal_length_design_mm=10.0,
            wavelength_design_nm=532.0,
            phase_mode="achromatic",
            achromatic=AchromaticDesign(lambda_min_nm=410.0, lambda_max_nm=650.0, delta_rad=0.0),
        )
        r = np.linspace(0.0, 1300.0, 9)
        assert_allclose(mask_phase(design, r, 0.45), focusing_phase(r, 0.45, 10_000.0), atol=1e-9)


class FocalScalingTests(SimpleTestCase):
    def test_design_wavelength_keeps_focal(self):
        proportional = REFERENCE_LENS.model_copy(update={"focal_scaling_mode": "proportional"})
        self.assertAlmostEqual(focal_length_at(REFERENCE_LENS, 0.532), 10_000.0)
        self.assertAlmostEqual(focal_length_at(proportional, 0.532), 10_000.0)

    def test_red_focuses_shorter_in_diffractive_mode(self):
        self.assertAlmostEqual(focal_length_at(REFERENCE_LENS, 0.650), 8184.6, delta=0.1)
        proportional = REFERENCE_LENS.model_copy(update={"focal_scaling_mode": "proportional"})
        self.assertAlmostEqual(focal_length_at(proportional, 0.650), 12218.0, delta=0.1)


class LensDesignDocumentTests(SimpleTestCase):
    def test_wavelength_outside_visible_is_rejected(self):
        with self.assertRaises(ValidationError):
            LensDesign(diameter_mm=2.6, focal_length_design_mm=10.0, wavelength_design_nm=800.0)

    def test_lut_mode_requires_library(self):
        with self.assertRaises(ValidationError):
            LensDesign(diameter_mm=2.6, focal_length_design_mm=10.0, wavelength_design_nm=532.0, phase_mode="lut")

    def test_lut_must_cover_the_phase_circle(self):
        with self.assertRaises(ValidationError):
            MetaAtomLUT(diameters_nm=(100.0, 120.0, 140.0), phase_rad=(0.0, 0.5, 1.0), transmission=(1.0, 1.0, 1.0))

    def test_document_round_trips_through_json(self):
        document = lens_document(REFERENCE_LENS)
        self.assertEqual(document["format_version"], 1)
        self.assertEqual(LensDesign.model_validate(document), REFERENCE_LENS)


class TransmissionTests(SimpleTestCase):
    def test_ideal_mask_is_unit_inside_and_zero_outside(self):
        grid = FieldGrid.square(256, 12.0)
        mask = build_transmission(REFERENCE_LENS, grid, 0.532)
        inside = aperture_mask(grid, REFERENCE_LENS.radius_um)
        assert_allclose(np.abs(mask.values[inside]), 1.0)
        self.assertTrue(np.all(mask.values[~inside] == 0))
        self.assertEqual(mask.values[128, 128], 1.0 + 0.0j)

    def test_ideal_mask_is_point_symmetric(self):
        mask = build_transmission(REFERENCE_LENS, FieldGrid.square(128, 12.0), 0.532).values
        # Sin la primera fila y columna la rejilla es simetrica respecto al DC.
        inner = mask[1:, 1:]
        assert_allclose(inner, inner[::-1, ::-1], atol=1e-12)

    def test_resolution_guard(self):
        with self.assertRaises(UnderSampledError) as ctx:
            build_transmission(REFERENCE_LENS, FieldGrid.square(64, 50.0), 0.532)
        self.assertIn("40.6250", str(ctx.exception))

    def test_lut_lookup_picks_nearest_phase(self):
        phase, amplitude = lut_lookup(BINARY_LUT, np.array([0.9 * math.pi, 0.1, -0.2]))
        assert_allclose(phase, [math.pi, 0.0, 0.0])
        assert_allclose(amplitude, [0.8, 0.9, 0.9])

    def test_lut_tie_goes_to_smaller_diameter(self):
        _, amplitude = lut_lookup(BINARY_LUT, np.array([math.pi / 2]))
        assert_allclose(amplitude, [0.9])

    def test_lut_mask_uses_library_amplitudes(self):
        design = REFERENCE_LENS.model_copy(update={"phase_mode": "lut", "lut": BINARY_LUT})
        grid = FieldGrid.square(128, 24.0)
        values = build_transmission(design, grid, 0.532).values
        magnitudes = set(np.round(np.abs(values), 6).ravel().tolist())
        self.assertTrue(magnitudes <= {0.0, 0.8, 0.9})
        self.assertLessEqual(float(np.abs(values).max()), 1.0)
