import numpy as np
import pytest

from genbench.core.training import Budget
from genbench.ddpm import (
    DDPMModel,
    NoiseSchedule,
    ancestral_sigma,
    ddpm_loss,
    ddpm_make_batch,
    ddpm_objective,
    ddpm_pf_ode_sample,
    ddpm_sample,
    ddpm_train,
    q_sample,
)

from helpers import gradient_relative_error, randomized


def zero_model(d, **kw):
    m = DDPMModel(d, **kw)
    return m.with_params(m.params.with_values(np.zeros(len(m.params))))


class TestSchedule:
    def test_default_invariants(self):
        s = NoiseSchedule.linear()
        assert s.T == 1000
        assert s.betas[0] == pytest.approx(1e-4) and s.betas[-1] == pytest.approx(2e-2)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert s.alpha_bar[-1] <= 1e-2

    def test_rejects_bad_betas(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.1, 0.05]), strict=False)
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.0, 0.1]), strict=False)
        with pytest.raises(ValueError):
            NoiseSchedule.linear(T=10)  # terminal alpha_bar far from 0

    def test_continuous_interpolation_hits_knots(self):
        s = NoiseSchedule.linear(T=50, beta_end=0.2)
        knots = np.arange(1, 51) / 50
        np.testing.assert_allclose(np.exp(s.log_alpha_bar_continuous(knots)), s.alpha_bar, rtol=1e-12)
        assert s.log_alpha_bar_continuous(0.0) == 0.0


class TestForward:
    def test_zero_noise_limit(self):
        s = NoiseSchedule(np.full(3, 1e-12), strict=False)
        x0 = np.arange(4.0)
        np.testing.assert_allclose(q_sample(x0, 1, np.ones(4), s), x0, atol=1e-5)

    def test_index_range(self):
        s = NoiseSchedule.linear()
        with pytest.raises(IndexError):
            q_sample(np.zeros(2), 0, np.zeros(2), s)
        with pytest.raises(IndexError):
            q_sample(np.zeros(2), 1001, np.zeros(2), s)

    def test_terminal_variance(self):
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal((100_000, 3))
        xt = q_sample(x0, 1000, rng.standard_normal(x0.shape), NoiseSchedule.linear())
        np.testing.assert_allclose(xt.var(0), 1.0, rtol=0.02)

    def test_variance_preservation(self):
        rng = np.random.default_rng(1)
        s = NoiseSchedule.linear()
        x0 = rng.standard_normal((50_000, 2)) * 3 + 1
        ab = s.alpha_bar_at(300)
        xt = q_sample(x0, 300, rng.standard_normal(x0.shape), s)
        expected = ab * (x0**2).sum(1).mean() + (1 - ab) * 2
        sq = (xt**2).sum(1)
        assert abs(sq.mean() - expected) < 4 * sq.std() / np.sqrt(sq.size)


class TestLoss:
    def test_zero_network_loss_near_d(self):
        x = np.random.default_rng(0).standard_normal((20_000, 3))
        value = ddpm_loss(zero_model(3, hidden_width=8), x, seed=0)
        assert value == pytest.approx(3.0, abs=4 * np.sqrt(2 * 3 / 20_000))

    def test_gradient(self):
        m = DDPMModel(2, hidden_width=4, depth=1)
        params = randomized(m.params, 0)
        assert len(params) <= 100
        rng = np.random.default_rng(1)
        batch = ddpm_make_batch(m, rng.standard_normal((8, 2)), rng.integers(1, 1001, 8), rng.standard_normal((8, 2)))
        assert gradient_relative_error(ddpm_objective(m), params, batch) < 1e-4

    def test_training_decreases_loss_and_is_reproducible(self):
        x = np.random.default_rng(0).standard_normal((5000, 2)) * 0.3 + 2.0
        m = DDPMModel(2, hidden_width=16)
        a = ddpm_train(m, x, Budget(steps=400), seed=1)
        b = ddpm_train(m, x, Budget(steps=400), seed=1)
        assert a.loss_trace == b.loss_trace
        assert np.mean(a.loss_trace[-50:]) < 0.7 * np.mean(a.loss_trace[:20])


class TestAncestral:
    def test_zero_network_matches_recursion(self):
        m = zero_model(2, hidden_width=4, T=200, beta_end=0.05)
        s = m.schedule
        rng = np.random.default_rng(7)
        x = rng.standard_normal((5, 2))
        for t in range(s.T, 0, -1):
            x = x / np.sqrt(1 - s.betas[t - 1])
            if t > 1:
                x = x + np.sqrt(s.betas[t - 1]) * rng.standard_normal(x.shape)
        np.testing.assert_allclose(ddpm_sample(m, 5, seed=7), x, rtol=1e-12)

    def test_single_step_schedule(self):
        m = DDPMModel(2, hidden_width=4, T=1, beta_start=0.5, beta_end=0.5)
        xT = np.random.default_rng(3).standard_normal((4, 2))
        eps = m.predict_noise(xT, 1.0)
        expected = (xT - 0.5 / np.sqrt(0.5) * eps) / np.sqrt(0.5)
        np.testing.assert_allclose(ddpm_sample(m, 4, seed=3), expected, rtol=1e-12)

    def test_posterior_variance_option(self):
        s = NoiseSchedule.linear()
        assert ancestral_sigma(s, 500, "posterior") < ancestral_sigma(s, 500, "beta")
        assert ancestral_sigma(s, 1, "posterior") == 0.0

    def test_reproducible(self):
        m = DDPMModel(2, hidden_width=4, T=50, beta_end=0.2)
        assert np.array_equal(ddpm_sample(m, 3, 1), ddpm_sample(m, 3, 1))


class TestProbabilityFlow:
    def test_zero_score_constant_dilation(self):
        # constant beta gives a constant dilation; with eps = 0 the ODE is pure exponential growth
        beta, T = 0.05, 100
        m = zero_model(2, hidden_width=4, T=T, beta_start=beta, beta_end=beta)
        lam = m.schedule.dilation(np.linspace(0.01, 1, 7))
        np.testing.assert_allclose(lam, lam[0])
        x1 = np.random.default_rng(2).standard_normal((4, 2))
        out = ddpm_pf_ode_sample(m, 4, steps=200, seed=2)
        np.testing.assert_allclose(out, x1 / np.sqrt(m.schedule.alpha_bar[-1]), rtol=1e-8)

    def test_reproducible(self):
        m = DDPMModel(2, hidden_width=4, T=50, beta_end=0.2)
        assert np.array_equal(ddpm_pf_ode_sample(m, 3, steps=10, seed=1), ddpm_pf_ode_sample(m, 3, steps=10, seed=1))

    @pytest.mark.slow
    def test_mode_occupancy_matches_ancestral(self):
        rng = np.random.default_rng(0)
        labels = rng.random(20_000) < 0.3
        data = np.where(labels[:, None], -1.5, 1.5) + 0.3 * rng.standard_normal((20_000, 2))
        m = ddpm_train(DDPMModel(2, hidden_width=32, T=200, beta_end=0.1), data, Budget(steps=4000), seed=0)
        frac_anc = np.mean(ddpm_sample(m, 4000, seed=1)[:, 0] < 0)
        frac_ode = np.mean(ddpm_pf_ode_sample(m, 4000, steps=100, seed=1)[:, 0] < 0)
        assert abs(frac_anc - frac_ode) < 0.05
