"""Gaussian heads, reparameterized sampling, and KL divergence."""

import numpy as np
import pytest

from capdraw import autodiff as ad
from capdraw.latent import (
    DiagGaussian,
    GaussianHead,
    gaussian_log_density,
    gaussian_params,
    kl_diag_gauss,
    sample_reparam,
)
from capdraw.rng import RngStream
from _util import rel_error


def make_head(latent, hidden, rng, requires_grad=False):
    mk = ad.parameter if requires_grad else ad.constant
    return GaussianHead(
        w_mean=mk(rng.standard_normal((latent, hidden))),
        w_std=mk(rng.standard_normal((latent, hidden))),
    )


class TestGaussianParams:
    def test_zero_hidden_gives_standard_normal(self):
        head = make_head(4, 3, np.random.default_rng(0))
        g = gaussian_params(ad.constant(np.zeros(3)), head)
        np.testing.assert_array_equal(g.mean.data, np.zeros(4))
        np.testing.assert_array_equal(g.std.data, np.ones(4))

    def test_std_bounded_by_exp_of_tanh_range(self):
        rng = np.random.default_rng(1)
        head = make_head(5, 4, rng)
        for _ in range(200):
            g = gaussian_params(ad.constant(rng.standard_normal(4) * 10), head)
            assert np.all(g.std.data >= np.exp(-1.0))
            assert np.all(g.std.data <= np.exp(1.0))

    def test_reference_dimensions(self):
        # 60x60 task: latent 150 from hidden 300; 32x32 task: 275 from 550
        rng = np.random.default_rng(2)
        for latent, hidden in ((150, 300), (275, 550)):
            head = make_head(latent, hidden, rng)
            g = gaussian_params(ad.constant(np.zeros(hidden)), head)
            assert g.dim == latent

    def test_mismatched_head_rejected(self):
        with pytest.raises(ad.ShapeMismatch):
            GaussianHead(w_mean=ad.constant(np.zeros((3, 2))), w_std=ad.constant(np.zeros((3, 4))))


class TestSampleReparam:
    def test_zero_noise_returns_mean(self):
        g = DiagGaussian.from_arrays([0.4, -0.2], [1.5, 0.5])
        z = sample_reparam(g, np.zeros(2))
        np.testing.assert_array_equal(z.data, [0.4, -0.2])

    def test_standard_gaussian_returns_noise(self):
        g = DiagGaussian.standard(3)
        noise = np.array([0.3, -1.1, 2.2])
        np.testing.assert_array_equal(sample_reparam(g, noise).data, noise)

    def test_monte_carlo_moments(self):
        mean = np.array([0.7, -0.3])
        std = np.array([1.2, 0.4])
        g = DiagGaussian.from_arrays(mean, std)
        rng = RngStream(7)
        n = 10**5
        draws = np.stack([sample_reparam(g, rng.standard_normal(2)).data for _ in range(n)])
        se_mean = std / np.sqrt(n)
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se_mean)
        se_std = std / np.sqrt(2 * (n - 1))
        assert np.all(np.abs(draws.std(axis=0, ddof=1) - std) < 3 * se_std)

    def test_gradient_flows_through_parameters(self):
        rng = np.random.default_rng(3)
        head = make_head(3, 2, rng, requires_grad=True)
        hidden = ad.constant(rng.standard_normal(2))
        noise = rng.standard_normal(3)
        params = {"w_mean": head.w_mean, "w_std": head.w_std}

        def loss_node():
            z = sample_reparam(gaussian_params(hidden, head), noise)
            return ad.total(ad.mul(z, z))

        table = ad.backward(loss_node())
        with ad.no_grad():
            numeric = ad.finite_difference_gradient(lambda: loss_node().item(), params)
        for name, tensor in params.items():
            assert rel_error(table[tensor], numeric[name]) < 1e-6, name


def log_density_batch(z, mean, std):
    u = (z - mean) / std
    return -0.5 * (u * u).sum(axis=1) - np.log(std).sum() - 0.5 * len(std) * np.log(2 * np.pi)


def kl_monte_carlo(q, p, n, seed):
    """Vectorized estimate of E_q[log q - log p] with its standard error."""
    rng = RngStream(seed)
    mq, sq = q.mean.data, q.std.data
    mp_, sp = p.mean.data, p.std.data
    z = mq + sq * rng.standard_normal((n, q.dim))
    vals = log_density_batch(z, mq, sq) - log_density_batch(z, mp_, sp)
    return vals.mean(), vals.std(ddof=1) / np.sqrt(n)


class TestLogDensity:
    def test_scalar_matches_batch_formula(self):
        rng = np.random.default_rng(7)
        g = DiagGaussian.from_arrays(rng.uniform(-1, 1, 3), rng.uniform(0.5, 2, 3))
        z = rng.standard_normal((5, 3))
        batch = log_density_batch(z, g.mean.data, g.std.data)
        for i in range(5):
            assert gaussian_log_density(z[i], g) == pytest.approx(batch[i], abs=1e-12)

    def test_standard_normal_at_origin(self):
        g = DiagGaussian.standard(2)
        assert gaussian_log_density(np.zeros(2), g) == pytest.approx(-np.log(2 * np.pi), abs=1e-14)


class TestKlDiagGauss:
    def test_identical_distributions_give_zero(self):
        g = DiagGaussian.from_arrays([0.3, -1.0], [0.7, 2.0])
        h = DiagGaussian.from_arrays([0.3, -1.0], [0.7, 2.0])
        assert kl_diag_gauss(g, h).item() == 0.0

    def test_shifted_unit_gaussians(self):
        # KL(N(0.5,1) || N(0,1)) = 0.5^2 / 2 = 0.125 nats
        q = DiagGaussian.from_arrays([0.5], [1.0])
        p = DiagGaussian.standard(1)
        assert kl_diag_gauss(q, p).item() == pytest.approx(0.125, abs=1e-15)

    def test_widened_gaussian(self):
        # KL(N(0,2) || N(0,1)) = -ln 2 + 4/2 - 1/2 (std 2 means variance 4)
        q = DiagGaussian.from_arrays([0.0], [2.0])
        p = DiagGaussian.standard(1)
        expect = -np.log(2.0) + 2.0 - 0.5
        assert kl_diag_gauss(q, p).item() == pytest.approx(expect, abs=1e-12)
        assert expect == pytest.approx(0.806853, abs=1e-6)

    def test_monte_carlo_agreement_20_pairs(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            d = int(rng.integers(1, 4))
            q = DiagGaussian.from_arrays(rng.uniform(-1, 1, d), rng.uniform(0.5, 2.0, d))
            p = DiagGaussian.from_arrays(rng.uniform(-1, 1, d), rng.uniform(0.5, 2.0, d))
            analytic = kl_diag_gauss(q, p).item()
            est, se = kl_monte_carlo(q, p, 10**5, seed=trial)
            assert abs(analytic - est) < 3 * se

    def test_nonnegativity_over_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(10**4):
            d = int(rng.integers(1, 5))
            mq, mp = rng.uniform(-2, 2, (2, d))
            sq, sp = rng.uniform(0.3, 3.0, (2, d))
            q = DiagGaussian.from_arrays(mq, sq)
            p = DiagGaussian.from_arrays(mp, sp)
            kl = kl_diag_gauss(q, p).item()
            assert kl >= 0.0
            if np.allclose(mq, mp) and np.allclose(sq, sp):
                assert kl == pytest.approx(0.0, abs=1e-12)

    def test_zero_only_when_parameters_coincide(self):
        q = DiagGaussian.from_arrays([0.1], [1.0])
        p = DiagGaussian.standard(1)
        assert kl_diag_gauss(q, p).item() > 0.0

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ad.ShapeMismatch):
            kl_diag_gauss(DiagGaussian.standard(2), DiagGaussian.standard(3))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        vals = {
            "mq": rng.uniform(-1, 1, 3),
            "lsq": rng.uniform(-0.5, 0.5, 3),
            "mp": rng.uniform(-1, 1, 3),
            "lsp": rng.uniform(-0.5, 0.5, 3),
        }
        params = {k: ad.parameter(v) for k, v in vals.items()}

        def loss_node():
            q = DiagGaussian(mean=params["mq"], std=ad.exp(params["lsq"]), log_std=params["lsq"])
            p = DiagGaussian(mean=params["mp"], std=ad.exp(params["lsp"]), log_std=params["lsp"])
            return kl_diag_gauss(q, p)

        table = ad.backward(loss_node())
        with ad.no_grad():
            numeric = ad.finite_difference_gradient(lambda: loss_node().item(), params)
        for name, tensor in params.items():
            assert rel_error(table[tensor], numeric[name]) < 1e-6, name
