import numpy as np
import pytest

from sbse.bridge import (
    ddpm_moments,
    ddpm_step,
    injected_fault,
    posterior_params,
    reconstruct_x0,
    reverse_enhance,
    sample_xt,
    score_target,
)
from sbse.errors import DivergenceError, ShapeError, SingularityError
from sbse.schedule import InferenceGrid, NoiseSchedule, inference_grid
from sbse.seeding import make_rng

from conftest import random_complex


def gaussian_conditioning(x0, xT, s2, s2b):
    """Bridge marginal via precision weighting: N(x0, s2) prior, xT observed with noise s2b."""
    precision = 1.0 / s2 + 1.0 / s2b
    var = 1.0 / precision
    return var * (x0 / s2 + xT / s2b), var


def unit_schedule():
    # constant beta = 2 on t = (0.25, 0.5, 1.0) gives sigma2 = (0.5, 1, 2)
    return NoiseSchedule.from_beta(np.array([0.25, 0.5, 1.0]), np.full(3, 2.0))


class TestPosterior:
    def test_boundary_t1(self, schedule, rng):
        x0, xT = random_complex(rng, (4, 3)), random_complex(rng, (4, 3))
        p = posterior_params(x0, xT, 1.0, schedule)
        np.testing.assert_allclose(p.mu, xT, rtol=1e-14)
        assert p.var == 0

    def test_midpoint(self, schedule, rng):
        x0, xT = random_complex(rng, (4, 3)), random_complex(rng, (4, 3))
        p = posterior_params(x0, xT, 0.5, schedule)
        s2, _ = schedule.sigma_at(0.5)
        np.testing.assert_allclose(p.mu, (x0 + xT) / 2, rtol=1e-12)
        assert p.var == pytest.approx(s2 / 2, rel=1e-12)

    def test_arithmetic(self):
        # sigma2 = 1 at t=0.25 (beta 4), sigma2_bar = 3
        s = NoiseSchedule.from_beta(np.array([0.25, 0.5, 1.0]), np.full(3, 4.0))
        p = posterior_params(np.zeros(1), np.full(1, 4.0), 0.25, s)
        assert p.mu[0] == pytest.approx(1.0, rel=1e-14)
        assert p.var == pytest.approx(0.75, rel=1e-14)

    def test_matches_precision_form(self, schedule, rng):
        x0, xT = random_complex(rng, 5), random_complex(rng, 5)
        for t in np.linspace(0.01, 0.99, 25):
            p = posterior_params(x0, xT, t, schedule)
            mu, var = gaussian_conditioning(x0, xT, *schedule.sigma_at(t))
            np.testing.assert_allclose(p.mu, mu, rtol=1e-12)
            assert p.var == pytest.approx(var, rel=1e-12)

    def test_convex_weights(self, schedule):
        for t in np.linspace(schedule.t_min, 1, 50):
            p = posterior_params(np.array([1.0]), np.array([0.0]), t, schedule)
            w0 = p.mu[0]
            q = posterior_params(np.array([0.0]), np.array([1.0]), t, schedule)
            wT = q.mu[0]
            assert w0 >= 0 and wT >= 0 and w0 + wT == pytest.approx(1.0, abs=1e-14)

    def test_shape_error(self, schedule):
        with pytest.raises(ShapeError):
            posterior_params(np.zeros(3), np.zeros(4), 0.5, schedule)

    def test_fault_injection_breaks_weights(self, schedule):
        with injected_fault("posterior_sign"):
            p = posterior_params(np.ones(1), np.zeros(1), 0.5, schedule)
        assert p.mu[0] < 0
        assert posterior_params(np.ones(1), np.zeros(1), 0.5, schedule).mu[0] > 0


class TestSampleXt:
    @pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
    def test_monte_carlo_moments(self, schedule, t):
        n = 100_000
        rng = np.random.default_rng(7)
        x0, xT = random_complex(rng, 6, 0.5), random_complex(rng, 6, 0.5)
        draws = sample_xt(np.tile(x0, (n, 1)), np.tile(xT, (n, 1)), t, schedule, make_rng(3, t)).x_t
        mu, var = gaussian_conditioning(x0, xT, *schedule.sigma_at(t))
        se = np.sqrt(var / 2 / n)
        mean = draws.mean(axis=0)
        assert np.all(np.abs(mean.real - mu.real) < 4 * se)
        assert np.all(np.abs(mean.imag - mu.imag) < 4 * se)
        sample_var = np.mean(np.abs(draws - mean) ** 2, axis=0)
        assert np.all(np.abs(sample_var / var - 1) < 0.02)
        # circular: real and imaginary parts each carry half the variance
        np.testing.assert_allclose(draws.real.var(axis=0) / var, 0.5, atol=0.01)

    def test_deterministic_at_boundary(self, schedule, rng):
        x0, xT = random_complex(rng, 4), random_complex(rng, 4)
        s = sample_xt(x0, xT, 1.0, schedule, make_rng(0))
        np.testing.assert_array_equal(s.x_t, xT)
        assert s.t_index == schedule.N

    def test_target_reconstructs(self, schedule, rng):
        x0, xT = random_complex(rng, (8, 8)), random_complex(rng, (8, 8))
        s = sample_xt(x0, xT, 0.37, schedule, make_rng(1))
        np.testing.assert_allclose(reconstruct_x0(s.x_t, s.target, s.sigma_t), x0, rtol=0, atol=1e-14)
        np.testing.assert_allclose(s.target * s.sigma_t + x0, s.x_t, atol=1e-14)
        assert s.sigma_t > 0

    def test_seeded(self, schedule, rng):
        x0, xT = random_complex(rng, 5), random_complex(rng, 5)
        a = sample_xt(x0, xT, 0.4, schedule, make_rng(9)).x_t
        b = sample_xt(x0, xT, 0.4, schedule, make_rng(9)).x_t
        np.testing.assert_array_equal(a, b)


class TestScoreTarget:
    def test_zero(self, rng):
        x = random_complex(rng, 4)
        assert not score_target(x, x, 0.3).any()

    def test_arithmetic(self):
        out = score_target(np.full(3, 2 + 0j), np.zeros(3, complex), 0.5)
        np.testing.assert_array_equal(out, np.full(3, 4 + 0j))

    def test_linearity(self, rng):
        x0, d = random_complex(rng, 6), random_complex(rng, 6)
        np.testing.assert_allclose(score_target(x0 + 3.0 * d, x0, 0.2), 15.0 * d, rtol=1e-12)

    def test_singular(self):
        with pytest.raises(SingularityError):
            score_target(np.zeros(2), np.zeros(2), 0.0)


class TestReconstruct:
    def test_inverse_pair(self, rng):
        x0, xn = random_complex(rng, (16, 16)), random_complex(rng, (16, 16))
        s = score_target(xn, x0, 0.3)
        out = reconstruct_x0(xn, s, 0.3)
        assert np.linalg.norm(out - x0) / np.linalg.norm(x0) < 1e-14

    def test_zero_sigma(self, rng):
        xn = random_complex(rng, 5)
        np.testing.assert_array_equal(reconstruct_x0(xn, random_complex(rng, 5), 0.0), xn)

    def test_shape(self):
        with pytest.raises(ShapeError):
            reconstruct_x0(np.zeros(3), np.zeros(2), 1.0)


class TestDdpmStep:
    def test_zero_sigma(self, rng):
        x0, xn = random_complex(rng, 3), random_complex(rng, 3)
        mean, var = ddpm_moments(x0, xn, 0.0, 0.7)
        np.testing.assert_array_equal(mean, x0)
        assert var == 0

    def test_arithmetic(self, rng):
        x0, xn = random_complex(rng, 3), random_complex(rng, 3)
        mean, var = ddpm_moments(x0, xn, 1.0, 1.0)
        np.testing.assert_allclose(mean, (x0 + xn) / 2, rtol=1e-15)
        assert var == 0.5

    def test_step_uses_grid(self, rng):
        s = unit_schedule()
        grid = InferenceGrid(np.array([2, 1]), np.array([1.0]))
        x0, xn = random_complex(rng, (200, 200)), random_complex(rng, (200, 200))
        out = ddpm_step(x0, xn, 0, grid, s, make_rng(4))
        resid = out - (x0 + xn) / 2
        assert abs(np.mean(np.abs(resid) ** 2) - 0.5) < 0.02

    def test_degenerate_alpha(self, rng):
        x0, xn = random_complex(rng, 3), random_complex(rng, 3)
        mean, var = ddpm_moments(x0, xn, 0.4, 1e-300)
        np.testing.assert_allclose(mean, xn, rtol=1e-12)
        assert var < 1e-299


class TestReverse:
    @pytest.mark.parametrize("n_infer", [1, 2, 5, 50, 1000])
    def test_oracle_score_recovers_x0(self, schedule, rng, n_infer):
        x0, xT = random_complex(rng, (12, 9)), random_complex(rng, (12, 9))
        grid = inference_grid(schedule, n_infer)
        score = lambda x, i, m: score_target(x, x0, np.sqrt(schedule.sigma2[i]))
        out = reverse_enhance(xT, score, None, schedule, grid, make_rng(0))
        assert np.linalg.norm(out - x0) / np.linalg.norm(x0) < 1e-10

    def test_single_step_no_sampling(self, schedule, rng):
        xT = random_complex(rng, 4)
        calls = []

        def score(x, i, m):
            calls.append(i)
            return np.zeros_like(x)

        out = reverse_enhance(xT, score, None, schedule, inference_grid(schedule, 1), make_rng(0))
        assert calls == [schedule.N]
        np.testing.assert_array_equal(out, xT)

    def test_nfe_equals_steps(self, schedule, rng):
        calls = []
        reverse_enhance(
            random_complex(rng, 4), lambda x, i, m: calls.append(i) or np.zeros_like(x), None,
            schedule, inference_grid(schedule, 5), make_rng(0),
        )
        assert calls == [1000, 800, 600, 400, 200]

    def test_deterministic(self, schedule, rng):
        xT = random_complex(rng, (6, 6))
        score = lambda x, i, m: 0.3 * x
        grid = inference_grid(schedule, 5)
        a = reverse_enhance(xT, score, None, schedule, grid, make_rng(5))
        b = reverse_enhance(xT, score, None, schedule, grid, make_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_divergence_reports_step(self, schedule, rng):
        def score(x, i, m):
            return np.full_like(x, np.nan) if i == 600 else np.zeros_like(x)

        with pytest.raises(DivergenceError) as err:
            reverse_enhance(random_complex(rng, 3), score, None, schedule, inference_grid(schedule, 5), make_rng(0))
        assert err.value.step == 2

    def test_composition_matches_marginals(self, schedule):
        """Chained DDPM posteriors with exact x0 reproduce the bridge marginals."""
        n = 10_000
        rng = np.random.default_rng(11)
        x0, xT = random_complex(rng, 3, 0.5), random_complex(rng, 3, 0.5)
        grid = inference_grid(schedule, schedule.N)
        x = np.tile(xT, (n, 1))
        x0s = np.tile(x0, (n, 1))
        probes = {750: None, 500: None, 250: None}
        step_rng = make_rng(2)
        for k in range(grid.steps):
            x = ddpm_step(x0s, x, k, grid, schedule, step_rng)
            idx = int(grid.indices[k + 1])
            if idx in probes:
                probes[idx] = x.copy()
        for idx, draws in probes.items():
            mu, var = gaussian_conditioning(x0, xT, *schedule.at_index(idx))
            mean = draws.mean(axis=0)
            se = np.sqrt(var / 2 / n)
            assert np.all(np.abs(mean.real - mu.real) < 4 * se), idx
            assert np.all(np.abs(mean.imag - mu.imag) < 4 * se), idx
            sample_var = np.mean(np.abs(draws - mu) ** 2, axis=0)
            assert np.all(np.abs(sample_var - var) < 4 * var / np.sqrt(n)), idx
