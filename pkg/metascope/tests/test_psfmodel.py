"""Pruebas de mezclas gaussianas, EM, transformaciones MeG, KL y desplazamientos."""

from __future__ import annotations

import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from pydantic import ValidationError
from scipy import integrate, stats

from core.errors import InsufficientSlotsError, InvalidArgumentError
from core.propagate import PSFStack
from core.psfmodel import (
    GaussianLatent,
    GaussianMixture2D,
    fit_gmm_em,
    fit_psf_stack,
    gmm_pdf,
    kl_to_standard_normal,
    load_mixtures,
    meg_transform,
    offsets_from_mixture,
    reparameterize,
)

STANDARD = GaussianMixture2D(K=1, weights=(1.0,), means=((0.0, 0.0),), variances=((1.0, 1.0),))
PAIR = GaussianMixture2D(
    K=2,
    weights=(0.5, 0.5),
    means=((-2.0, 0.0), (2.0, 0.0)),
    variances=((0.5, 1.5), (0.5, 1.5)),
)


def _sample_mixture(rng: np.random.Generator, weights, means, variances, n: int) -> np.ndarray:
    labels = rng.choice(len(weights), size=n, p=weights)
    means = np.asarray(means)[labels]
    scales = np.sqrt(np.asarray(variances))[labels]
    return means + scales * rng.standard_normal((n, 2))


def _gaussian_raster(size: int, mean: tuple[float, float], var: tuple[float, float]) -> np.ndarray:
    offsets = np.arange(size) - size // 2
    gx = np.exp(-0.5 * (offsets - mean[0]) ** 2 / var[0])
    gy = np.exp(-0.5 * (offsets - mean[1]) ** 2 / var[1])
    raster = gy[:, None] * gx[None, :]
    return raster / raster.sum()


def _kl_by_quadrature(mu: float, var: float) -> float:
    q = stats.norm(mu, math.sqrt(var))
    p = stats.norm(0.0, 1.0)
    half_width = 15.0 * math.sqrt(var)
    value, _ = integrate.quad(
        lambda x: q.pdf(x) * (q.logpdf(x) - p.logpdf(x)), mu - half_width, mu + half_width, limit=200
    )
    return value


class GaussianMixtureTests(SimpleTestCase):
    def test_standard_peak(self):
        self.assertAlmostEqual(float(gmm_pdf(STANDARD, (0.0, 0.0))), 1.0 / (2.0 * math.pi), places=12)

    def test_integrates_to_one(self):
        axis = np.linspace(-12.0, 12.0, 601)
        xx, yy = np.meshgrid(axis, axis)
        density = gmm_pdf(PAIR, np.stack([xx, yy], axis=-1))
        step = axis[1] - axis[0]
        self.assertAlmostEqual(float(density.sum() * step * step), 1.0, delta=1e-3)

    def test_symmetric_pair_is_mirror_symmetric(self):
        points = np.array([[0.7, 0.3], [1.9, -1.2], [3.0, 2.0]])
        mirrored = points * np.array([-1.0, 1.0])
        assert_allclose(gmm_pdf(PAIR, points), gmm_pdf(PAIR, mirrored))

    def test_weights_must_sum_to_one(self):
        with self.assertRaises(ValidationError):
            GaussianMixture2D(K=2, weights=(0.6, 0.6), means=((0, 0), (1, 1)), variances=((1, 1), (1, 1)))

    def test_variances_must_be_positive(self):
        with self.assertRaises(ValidationError):
            GaussianMixture2D(K=1, weights=(1.0,), means=((0, 0),), variances=((0.0, 1.0),))


class ExpectationMaximizationTests(SimpleTestCase):
    def test_single_component_recovery(self):
        rng = np.random.default_rng(1)
        samples = _sample_mixture(rng, [1.0], [(3.0, -1.0)], [(0.25, 0.25)], 10_000)
        result = fit_gmm_em(samples, 1, seed=5)
        weights, means, variances = result.mixture.arrays()
        assert_allclose(means[0], (3.0, -1.0), atol=0.05)
        assert_allclose(variances[0], (0.25, 0.25), rtol=0.1)
        self.assertTrue(result.converged)

    def test_two_component_weights(self):
        rng = np.random.default_rng(2)
        samples = _sample_mixture(rng, [0.7, 0.3], [(-4.0, 0.0), (4.0, 0.0)], [(1.0, 1.0), (1.0, 1.0)], 8_000)
        result = fit_gmm_em(samples, 2, seed=3)
        weights, means, _ = result.mixture.arrays()
        order = np.argsort(means[:, 0])
        assert_allclose(weights[order], (0.7, 0.3), atol=0.03)
        assert_allclose(means[order, 0], (-4.0, 4.0), atol=0.1)

    def test_log_likelihood_never_decreases(self):
        rng = np.random.default_rng(4)
        samples = _sample_mixture(
            rng, [0.5, 0.3, 0.2], [(0.0, 0.0), (3.0, 1.0), (-2.0, 3.0)], [(1.0, 0.5), (0.5, 0.5), (0.3, 1.0)], 3_000
        )
        result = fit_gmm_em(samples, 3, seed=9, max_iter=200)
        self.assertGreater(len(result.log_likelihood), 1)
        for segment in result.segments():
            self.assertTrue(np.all(np.diff(segment) >= -1e-9))

    def test_reseed_keeps_full_trace_and_reports_where(self):
        # Cada componente colapsa sobre un punto repetido y obliga a re-sembrar.
        samples = np.repeat([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 30, axis=0)
        with self.assertLogs("core.psfmodel", level="INFO") as logs:
            result = fit_gmm_em(samples, 3, seed=1, max_iter=100)

        self.assertTrue(any("re-siembra" in line for line in logs.output))
        self.assertTrue(result.reseeded_at)
        self.assertEqual(len(result.log_likelihood), result.iterations)
        self.assertEqual(list(result.reseeded_at), sorted(set(result.reseeded_at)))
        self.assertTrue(all(0 < i < len(result.log_likelihood) for i in result.reseeded_at))
        segments = result.segments()
        self.assertEqual(len(segments), len(result.reseeded_at) + 1)
        self.assertEqual(sum(len(s) for s in segments), len(result.log_likelihood))
        for segment in segments:
            self.assertTrue(np.all(np.diff(segment) >= -1e-9))

    def test_raster_mean_matches_centroid(self):
        raster = _gaussian_raster(31, (1.3, -0.7), (2.0, 3.5))
        result = fit_gmm_em(raster, 1, density=True, wavelength_nm=532.0)
        offsets = np.arange(31) - 15
        centroid = (float(raster.sum(axis=0) @ offsets), float(raster.sum(axis=1) @ offsets))
        assert_allclose(result.mixture.means[0], centroid, atol=1e-6)
        self.assertEqual(result.mixture.wavelength_nm, 532.0)

    def test_same_seed_same_mixture(self):
        rng = np.random.default_rng(6)
        samples = _sample_mixture(rng, [0.5, 0.5], [(-1.0, 0.0), (1.5, 0.5)], [(0.4, 0.4), (0.4, 0.4)], 2_000)
        first = fit_gmm_em(samples, 2, seed=11).mixture
        second = fit_gmm_em(samples, 2, seed=11).mixture
        self.assertEqual(first, second)

    def test_needs_k_distinct_points(self):
        with self.assertRaises(InvalidArgumentError):
            fit_gmm_em(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), 3)

    def test_rejects_zero_components(self):
        with self.assertRaises(InvalidArgumentError):
            fit_gmm_em(np.zeros((4, 2)), 0)

    def test_stack_fit_keeps_wavelength_order(self):
        psfs = np.stack([_gaussian_raster(15, (0.0, 0.0), (1.0, 1.0)), _gaussian_raster(15, (1.0, 0.0), (2.0, 2.0))])
        stack = PSFStack(
            wavelengths_nm=(650.0, 450.0),
            psfs=psfs,
            pitch=1.0,
            sensor_distance_mm=1.0,
            centroids=np.zeros((2, 2)),
            window_centers=np.zeros((2, 2)),
        )
        results = fit_psf_stack(stack, 1, threads=2)
        self.assertEqual([r.mixture.wavelength_nm for r in results], [650.0, 450.0])
        self.assertAlmostEqual(results[1].mixture.means[0][0], 1.0, delta=1e-3)


class MultiExpertGaussianTests(SimpleTestCase):
    latent = GaussianLatent(mean=np.array([1.0, -0.5]), log_variance=np.log(np.array([4.0, 0.25])))

    def test_identity(self):
        out = meg_transform(self.latent, 1.0, 0.0)
        assert_allclose(out.mean, self.latent.mean)
        assert_allclose(out.log_variance, self.latent.log_variance)

    def test_affine_law(self):
        out = meg_transform(GaussianLatent(mean=1.0, log_variance=math.log(4.0)), 2.0, 3.0)
        assert_allclose(out.mean, [5.0])
        assert_allclose(out.variance, [16.0])

    def test_composition(self):
        a1, b1, a2, b2 = 1.5, -0.4, -0.7, 2.0
        nested = meg_transform(meg_transform(self.latent, a2, b2), a1, b1)
        single = meg_transform(self.latent, a1 * a2, a1 * b2 + b1)
        assert_allclose(nested.mean, single.mean)
        assert_allclose(nested.log_variance, single.log_variance)

    def test_reparameterized_samples_follow_the_transform(self):
        a, b = np.array([2.0, -3.0]), np.array([0.5, 1.0])
        n = 100_000
        samples = a * reparameterize(self.latent, np.random.default_rng(8), n) + b
        target = meg_transform(self.latent, a, b)
        std_err_mean = np.sqrt(target.variance / n)
        self.assertTrue(np.all(np.abs(samples.mean(axis=0) - target.mean) < 3.0 * std_err_mean))
        std_err_var = target.variance * math.sqrt(2.0 / (n - 1))
        self.assertTrue(np.all(np.abs(samples.var(axis=0, ddof=1) - target.variance) < 3.0 * std_err_var))

    def test_zero_scale_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            meg_transform(self.latent, 0.0, 1.0)


class KullbackLeiblerTests(SimpleTestCase):
    def test_standard_normal_is_zero(self):
        self.assertEqual(kl_to_standard_normal(GaussianLatent(mean=[0.0, 0.0], log_variance=[0.0, 0.0])), 0.0)

    def test_closed_form_examples(self):
        self.assertAlmostEqual(kl_to_standard_normal(GaussianLatent(mean=1.0, log_variance=0.0)), 0.5, places=12)
        self.assertAlmostEqual(kl_to_standard_normal(GaussianLatent(mean=0.0, log_variance=math.log(4.0))), 0.80685, places=5)

    def test_matches_quadrature_and_is_non_negative(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            mu = float(rng.uniform(-2.0, 2.0))
            var = float(np.exp(rng.uniform(-1.5, 1.5)))
            kl = kl_to_standard_normal(GaussianLatent(mean=mu, log_variance=math.log(var)))
            self.assertGreaterEqual(kl, 0.0)
            self.assertAlmostEqual(kl, _kl_by_quadrature(mu, var), delta=1e-6)


class OffsetTests(SimpleTestCase):
    def test_single_offset(self):
        kernel = offsets_from_mixture(STANDARD, 1)
        assert_allclose(kernel.offsets, [[0.0, 0.0]])
        assert_allclose(kernel.weights, [1.0])

    def test_sigma_pattern_is_centered_on_the_mean(self):
        shifted = GaussianMixture2D(K=1, weights=(1.0,), means=((2.0, 0.0),), variances=((1.0, 1.0),))
        kernel = offsets_from_mixture(shifted, 3)
        self.assertEqual(kernel.offsets.shape, (9, 2))
        assert_allclose(kernel.offsets[0], (2.0, 0.0))
        assert_allclose(kernel.weights @ kernel.offsets, (2.0, 0.0), atol=1e-12)
        self.assertEqual(int(np.argmax(kernel.weights)), 0)

    def test_weights_sum_to_one_for_any_mixture(self):
        mixture = GaussianMixture2D(
            K=3,
            weights=(0.5, 0.3, 0.2),
            means=((0.0, 0.0), (1.0, -1.0), (-2.0, 0.5)),
            variances=((0.5, 0.5), (1.0, 2.0), (0.2, 0.3)),
        )
        for m in (2, 3, 4):
            with self.subTest(m=m):
                kernel = offsets_from_mixture(mixture, m)
                self.assertEqual(kernel.offsets.shape, (m * m, 2))
                self.assertAlmostEqual(math.fsum(kernel.weights), 1.0, delta=1e-12)
                self.assertTrue(np.all(kernel.weights >= 0))

    def test_offsets_are_deterministic(self):
        first = offsets_from_mixture(PAIR, 3)
        second = offsets_from_mixture(PAIR, 3)
        assert_allclose(first.offsets, second.offsets, rtol=0, atol=0)

    def test_too_few_slots(self):
        mixture = GaussianMixture2D(
            K=3, weights=(0.4, 0.3, 0.3), means=((0, 0), (1, 0), (0, 1)), variances=((1, 1), (1, 1), (1, 1))
        )
        with self.assertRaises(InsufficientSlotsError):
            offsets_from_mixture(mixture, 1)


class MixtureFileTests(SimpleTestCase):
    def test_reads_single_and_listed_documents(self):
        with tempfile.TemporaryDirectory() as tmp:
            single = Path(tmp) / "one.json"
            single.write_text(STANDARD.to_json(), encoding="utf-8")
            listed = Path(tmp) / "many.json"
            listed.write_text(
                json.dumps({"mixtures": [json.loads(STANDARD.to_json()), json.loads(PAIR.to_json())]}),
                encoding="utf-8",
            )
            self.assertEqual(load_mixtures(single), (STANDARD,))
            self.assertEqual(load_mixtures(listed), (STANDARD, PAIR))
