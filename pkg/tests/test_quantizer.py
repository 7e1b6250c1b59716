import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import special

from otfsq.quantizer import (
    GAUSSIAN_STEP_TABLE,
    NoiseSpec,
    QuantizerSpec,
    awgn_posterior_moments,
    choose_step,
    gaussian_optimal_step,
    interval_of,
    output_posterior_moments,
    quantize,
)
from otfsq.validate import quadrature_output_moments


class TestQuantizeMap:
    def test_sign_quantizer(self):
        spec = QuantizerSpec(bits=1, step=2.0)
        assert_allclose(quantize(np.array([0.3 - 0.8j]), spec), [1 - 1j])

    def test_two_bit_levels(self):
        spec = QuantizerSpec(bits=2, step=1.0)
        assert_allclose(spec.levels, [-1.5, -0.5, 0.5, 1.5])
        assert_allclose(spec.thresholds[1:-1], [-1.0, 0.0, 1.0])
        assert_allclose(quantize(np.array([0.7 + 0j]), spec).real, [0.5])

    def test_saturation(self):
        spec = QuantizerSpec(bits=2, step=1.0)
        assert_allclose(quantize(np.array([100.0 - 100.0j]), spec), [1.5 - 1.5j])

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        spec = QuantizerSpec(bits=3, step=0.4)
        z = rng.standard_normal(200) + 1j * rng.standard_normal(200)
        once = quantize(z, spec)
        assert_allclose(quantize(once, spec), once)

    def test_monotone_per_dimension(self):
        rng = np.random.default_rng(1)
        spec = QuantizerSpec(bits=2, step=0.7)
        v = np.sort(rng.standard_normal(500))
        q = quantize(v + 0j, spec).real
        assert np.all(np.diff(q) >= 0)

    def test_infinite_is_identity(self):
        z = np.array([0.123 - 4.5j])
        out = quantize(z, QuantizerSpec.infinite())
        assert_allclose(out, z)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            QuantizerSpec(bits=2, step=0.0)
        with pytest.raises(ValueError):
            QuantizerSpec(bits=0, step=1.0)


class TestIntervalOf:
    def test_one_bit_intervals(self):
        spec = QuantizerSpec(bits=1, step=2.0)
        assert interval_of(-1.0, spec) == (-np.inf, 0.0)

    def test_two_bit_inner_interval(self):
        spec = QuantizerSpec(bits=2, step=1.0)
        assert interval_of(0.5, spec) == (0.0, 1.0)

    def test_two_bit_outer_interval(self):
        spec = QuantizerSpec(bits=2, step=1.0)
        assert interval_of(1.5, spec) == (1.0, np.inf)

    def test_unknown_level_rejected(self):
        spec = QuantizerSpec(bits=2, step=1.0)
        with pytest.raises(ValueError):
            interval_of(0.4, spec)


class TestOutputPosterior:
    def test_awgn_conjugate_combination(self):
        mean, var = output_posterior_moments(
            np.array([1.0 + 0j]), np.array([0j]), 1.0, NoiseSpec(1.0), QuantizerSpec.infinite()
        )
        assert_allclose(mean, [0.5 + 0j])
        assert_allclose(var, [0.5])

    def test_half_normal_limit(self):
        # sign quantizer, zero noise: posterior is a half normal per dimension
        spec = QuantizerSpec(bits=1, step=2.0)
        mean, var = output_posterior_moments(
            np.array([1 + 1j]), np.array([0j]), 1.0, NoiseSpec(0.0), spec
        )
        assert_allclose(mean[0].real, np.sqrt(1 / np.pi), atol=1e-12)
        assert_allclose(mean[0].imag, np.sqrt(1 / np.pi), atol=1e-12)
        assert_allclose(var[0], 2 * 0.5 * (1 - 2 / np.pi), atol=1e-12)

    def test_matches_quadrature_grid(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for bits in (1, 2, 3):
            spec = QuantizerSpec(bits=bits, step=0.7)
            for v in (1e-4, 1e-2, 1.0, 1e2, 1e4):
                for _ in range(3):
                    m = rng.normal() * 1.5
                    sigma2 = float(10 ** rng.uniform(-3, 1))
                    z = m + np.sqrt(v / 2) * rng.normal() + np.sqrt(sigma2 / 2) * rng.normal()
                    yq = float(quantize(np.array([z + 0j]), spec)[0].real)
                    mean, var = output_posterior_moments(
                        np.array([yq + 1j * yq]), np.array([m + 1j * m]), v,
                        NoiseSpec(sigma2), spec,
                    )
                    mu_ref, var_ref = quadrature_output_moments(yq, m, v / 2, sigma2 / 2, spec)
                    worst = max(worst, abs(mean[0].real - mu_ref), abs(var[0] / 2 - var_ref))
        assert worst < 1e-8, f"max deviation from quadrature {worst}"

    def test_posterior_contraction(self):
        rng = np.random.default_rng(5)
        spec = QuantizerSpec(bits=2, step=0.9)
        for v in 10.0 ** np.arange(-4, 5):
            m = rng.standard_normal(64) + 1j * rng.standard_normal(64)
            z = m + np.sqrt(v / 2) * (rng.standard_normal(64) + 1j * rng.standard_normal(64))
            y = quantize(z, spec)
            _, var = output_posterior_moments(y, m, v, NoiseSpec(0.1), spec)
            assert np.all(var <= v + 1e-12)

    def test_deep_tail_is_finite(self):
        spec = QuantizerSpec(bits=2, step=1.0)
        mean, var = output_posterior_moments(
            np.array([1.5 + 1.5j]), np.array([-40.0 - 40.0j]), 0.5, NoiseSpec(0.01), spec
        )
        assert np.all(np.isfinite(mean)) and np.all(np.isfinite(var))
        assert var[0] >= 0.0

    def test_level_probabilities_normalise(self):
        spec = QuantizerSpec(bits=3, step=0.6)
        sigma2 = 0.3
        for zbar in (-2.7, 0.0, 1.234, 5.0):
            edges = (spec.thresholds - zbar) / np.sqrt(sigma2 / 2)
            mass = np.sum(special.ndtr(edges[1:]) - special.ndtr(edges[:-1]))
            assert abs(mass - 1.0) < 1e-12


class TestAwgnPosterior:
    def test_uninformative_observation(self):
        mean, var = awgn_posterior_moments(np.array([3.0 + 0j]), np.array([1 + 1j]), 0.5,
                                           NoiseSpec(float("inf")))
        assert_allclose(mean, [1 + 1j])
        assert_allclose(var, [0.5])

    def test_flat_cavity(self):
        mean, var = awgn_posterior_moments(np.array([2.0 - 1j]), np.array([0j]), 1e18,
                                           NoiseSpec(0.25))
        assert_allclose(mean, [2.0 - 1j], rtol=1e-12)
        assert_allclose(var, [0.25], rtol=1e-12)

    def test_agreeing_mean_keeps_mean(self):
        mean, var = awgn_posterior_moments(np.array([1 + 1j]), np.array([1 + 1j]), 0.5,
                                           NoiseSpec(0.5))
        assert_allclose(mean, [1 + 1j])
        assert_allclose(var, [0.25])


class TestChooseStep:
    def test_one_bit_matches_minimiser(self):
        assert abs(GAUSSIAN_STEP_TABLE[1] - gaussian_optimal_step(1)) < 1e-6
        assert np.isclose(choose_step(1, 1.0), GAUSSIAN_STEP_TABLE[1])

    def test_scale_equivariance(self):
        assert np.isclose(choose_step(3, 4.0), 2 * choose_step(3, 1.0))

    def test_override_passthrough(self):
        assert choose_step(3, 123.0, override=0.25) == 0.25

    def test_table_matches_oracle_everywhere(self):
        for bits, frozen in GAUSSIAN_STEP_TABLE.items():
            assert abs(frozen - gaussian_optimal_step(bits)) < 1e-6

    def test_unsupported_bits(self):
        with pytest.raises(ValueError):
            choose_step(9, 1.0)
