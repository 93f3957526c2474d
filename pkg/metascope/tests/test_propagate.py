"""Pruebas de PSFs, barridos focales, eficiencia y archivos PSFStack."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from pydantic import ValidationError

from core.errors import AliasingError, ConfigurationError, InvalidArgumentError
from core.field import FieldGrid
from core.lens import REFERENCE_LENS, LensDesign, build_transmission, focal_length_at
from core.propagate import (
    TABLE_EFFICIENCY,
    EfficiencyVector,
    PSFStack,
    channel_efficiency,
    default_grid,
    focal_sweep,
    fresnel_window,
    lens_field,
    nyquist_pitch,
    on_axis_intensity,
    psf_at,
    read_psf_stack,
    section_profiles,
    simulate_psf_stack,
    write_psf_stack,
)

# Lente pequena que permite la propagacion sobre rejillas de 128-256 muestras.
SMALL_LENS = LensDesign(diameter_mm=0.2, focal_length_design_mm=1.0, wavelength_design_nm=532.0)
SPECTRUM_NM = (410.0, 450.0, 490.0, 532.0, 570.0, 610.0, 650.0)


def _first_minimum(profile: np.ndarray) -> int:
    for idx in range(1, len(profile) - 1):
        if profile[idx] < profile[idx - 1] and profile[idx] <= profile[idx + 1]:
            return idx
    raise AssertionError("El perfil no tiene minimo local.")


class ReferenceLensFocusTests(SimpleTestCase):
    def test_airy_radius_at_design_wavelength(self):
        raster = psf_at(
            REFERENCE_LENS,
            0.532,
            REFERENCE_LENS.focal_length_um,
            default_grid(REFERENCE_LENS),
            window=61,
            sensor_pitch=0.1,
            normalization="raw",
        )
        half = raster.raster[30, 30:]
        radius = _first_minimum(half) * 0.1
        # 1.22 * lambda * f / D
        self.assertAlmostEqual(radius, 2.496, delta=0.15)
        self.assertEqual(int(np.argmax(half)), 0)

    def test_default_grid_samples_the_edge_phase(self):
        grid = default_grid(REFERENCE_LENS)
        self.assertLessEqual(grid.pitch, nyquist_pitch(REFERENCE_LENS))
        self.assertEqual(grid.samples_x % 2, 0)
        self.assertGreaterEqual(grid.samples_x * grid.pitch, REFERENCE_LENS.diameter_mm * 1e3)
        for wavelength in (0.450, 0.532, 0.650):
            with self.subTest(wavelength=wavelength), self.assertNoLogs("core.lens", level="WARNING"):
                build_transmission(REFERENCE_LENS, grid, wavelength)

        with self.assertLogs("core.lens", level="WARNING"):
            build_transmission(REFERENCE_LENS, default_grid(REFERENCE_LENS, 1024), 0.532)

    def test_best_focus_per_wavelength(self):
        grid = default_grid(REFERENCE_LENS)
        for wavelength, expected_mm in ((0.650, 8.185), (0.532, 10.0), (0.450, 11.82)):
            with self.subTest(wavelength=wavelength):
                sweep = focal_sweep(REFERENCE_LENS, wavelength, 8_000.0, 12_000.0, 81, grid=grid)
                self.assertAlmostEqual(sweep.best_focus / 1e3, expected_mm, delta=0.015 * expected_mm)
                self.assertGreaterEqual(sweep.best_intensity, float(sweep.intensity.max()))

    def test_peak_falls_toward_both_ends_of_the_spectrum(self):
        efficiency = channel_efficiency(
            REFERENCE_LENS,
            SPECTRUM_NM,
            REFERENCE_LENS.focal_length_um,
            FieldGrid.square(1024, 2.6),
            window=64,
            sensor_pitch=0.5,
        )
        values = dict(zip(efficiency.wavelengths_nm, efficiency.efficiency))
        self.assertEqual(values[532.0], 1.0)
        rising = [values[lam] for lam in SPECTRUM_NM if lam <= 532.0]
        falling = [values[lam] for lam in SPECTRUM_NM if lam >= 532.0]
        self.assertTrue(np.all(np.diff(rising) > 0), rising)
        self.assertTrue(np.all(np.diff(falling) < 0), falling)


class PropagationConsistencyTests(SimpleTestCase):
    grid = FieldGrid.square(256, 2.0)

    def test_window_center_matches_on_axis_intensity(self):
        field = lens_field(SMALL_LENS, 0.532, self.grid)
        for z in (800.0, 1000.0, 1300.0):
            center = fresnel_window(field, z, samples=5, pitch=0.5)[2, 2]
            axis = on_axis_intensity(field, [z])[0]
            self.assertAlmostEqual(abs(center) ** 2 / axis, 1.0, places=9)

    def test_transfer_function_stack_is_unit_sum_and_centered(self):
        stack = simulate_psf_stack(SMALL_LENS, (650.0, 532.0, 450.0), 1000.0, self.grid, window=32, threads=2)
        self.assertEqual(stack.wavelengths_nm, (650.0, 532.0, 450.0))
        self.assertEqual(stack.psfs.shape, (3, 32, 32))
        assert_allclose(stack.psfs.sum(axis=(1, 2)), 1.0, atol=1e-9)
        assert_allclose(stack.centroids, 0.0, atol=self.grid.pitch)
        self.assertEqual(stack.sensor_distance_mm, 1.0)

    def test_design_wavelength_is_sharpest(self):
        stack = simulate_psf_stack(SMALL_LENS, (650.0, 532.0, 450.0), 1000.0, self.grid, window=32)
        peaks = stack.psfs.max(axis=(1, 2))
        self.assertEqual(int(np.argmax(peaks)), 1)

    def test_on_grid_path_reports_aliasing(self):
        chain_lens = LensDesign(diameter_mm=0.2, focal_length_design_mm=5.0, wavelength_design_nm=532.0)
        with self.assertRaises(AliasingError):
            psf_at(chain_lens, 0.532, 5000.0, FieldGrid.square(128, 2.0), window=16)

    def test_window_larger_than_grid_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            psf_at(SMALL_LENS, 0.532, 1000.0, FieldGrid.square(64, 3.0), window=128)

    def test_section_profiles_sum_to_combined(self):
        profiles = section_profiles(SMALL_LENS, (450.0, 650.0), FieldGrid.square(128, 2.0), samples=33, sensor_pitch=0.5)
        self.assertEqual(profiles.profiles.shape, (2, 33))
        assert_allclose(profiles.combined, profiles.profiles.sum(axis=0))
        self.assertEqual(profiles.x[16], 0.0)
        self.assertAlmostEqual(profiles.focal_distances[0], focal_length_at(SMALL_LENS, 0.45))
        # Cada perfil alcanza su maximo en el eje.
        self.assertTrue(np.all(np.argmax(profiles.profiles, axis=1) == 16))


class FocalSweepArgumentTests(SimpleTestCase):
    def test_rejects_inverted_range(self):
        with self.assertRaises(InvalidArgumentError):
            focal_sweep(SMALL_LENS, 0.532, 1200.0, 800.0, 11, grid=FieldGrid.square(128, 2.0))

    def test_rejects_too_few_steps(self):
        with self.assertRaises(InvalidArgumentError):
            focal_sweep(SMALL_LENS, 0.532, 800.0, 1200.0, 2, grid=FieldGrid.square(128, 2.0))


class PSFStackTests(SimpleTestCase):
    def _stack(self) -> PSFStack:
        rng = np.random.default_rng(11)
        psfs = rng.random((2, 9, 9))
        psfs /= psfs.sum(axis=(1, 2), keepdims=True)
        return PSFStack(
            wavelengths_nm=(650.0, 450.0),
            psfs=psfs,
            pitch=4.0,
            sensor_distance_mm=5.0,
            centroids=[[0.1, -0.2], [0.0, 0.3]],
            window_centers=[[0.0, 0.0], [0.0, 0.0]],
        )

    def test_file_preserves_metadata_and_unit_sum(self):
        stack = self._stack()
        with tempfile.TemporaryDirectory() as tmp:
            loaded = read_psf_stack(write_psf_stack(Path(tmp) / "psf.raster", stack))
        self.assertEqual(loaded.wavelengths_nm, stack.wavelengths_nm)
        self.assertEqual(loaded.pitch, 4.0)
        self.assertEqual(loaded.sensor_distance_mm, 5.0)
        assert_allclose(loaded.centroids, stack.centroids)
        assert_allclose(loaded.psfs.sum(axis=(1, 2)), 1.0, atol=1e-12)
        assert_allclose(loaded.psfs, stack.psfs, rtol=1e-6)

    def test_lookup_tolerates_half_nanometre(self):
        stack = self._stack()
        self.assertEqual(stack.index_of(450.4), 1)
        with self.assertRaises(ConfigurationError):
            stack.psf_for(532.0)

    def test_rejects_unnormalized_psfs(self):
        with self.assertRaises(InvalidArgumentError):
            PSFStack(
                wavelengths_nm=(532.0,),
                psfs=np.ones((1, 3, 3)),
                pitch=1.0,
                sensor_distance_mm=1.0,
                centroids=[[0.0, 0.0]],
                window_centers=[[0.0, 0.0]],
            )

    def test_psfs_are_read_only(self):
        with self.assertRaises(ValueError):
            self._stack().psfs[0, 0, 0] = 1.0


class EfficiencyVectorTests(SimpleTestCase):
    def test_table_peaks_at_design_wavelength(self):
        self.assertAlmostEqual(TABLE_EFFICIENCY.value_at(532.0), 1.0)
        self.assertAlmostEqual(TABLE_EFFICIENCY.value_at(410.0), 0.1738 / 0.9920)

    def test_unknown_wavelength_is_a_configuration_error(self):
        with self.assertRaises(ConfigurationError):
            TABLE_EFFICIENCY.value_at(500.0)

    def test_wavelengths_must_increase(self):
        with self.assertRaises(ValidationError):
            EfficiencyVector(wavelengths_nm=(532.0, 450.0), efficiency=(1.0, 0.5))

    def test_all_zero_is_rejected(self):
        with self.assertRaises(ValidationError):
            EfficiencyVector(wavelengths_nm=(450.0,), efficiency=(0.0,))
