"""Tests for the two-dimensional state evolution and its spectral helpers.

Oracles used here:
  * identity link: the recursion has the closed form a_t = (1 - eta)^t,
    b_t = 1 - (1 - eta)^t, tau = delta = 1;
  * square link: the (a, b) recursion collapses onto the scalar
    (alpha, beta) recursion, so the two implementations must agree;
  * rank-2 spectra are checked against numpy.linalg.eigvalsh on the
    densely assembled matrix;
  * the Gaussian curvature matrices are checked against a plain Monte
    Carlo average of d1S(<Z,w>, <Z,mu*>, xi) Z Z^T (the integration-by-
    parts identity the implementation relies on).
"""

import math

import numpy as np
import pytest

from gdse.design import GAUSSIAN, replication_seed
from gdse.errors import ConfigError, NumericError
from gdse.model import (GaussianPairCov, custom_score_model, gauss2_expect,
                        model_from_names, tau_delta)
from gdse.state_evolution import (PrState, SeGeometry, b_quantities,
                                  mz_matrix_coeffs, mz_matrix_eigs, pr_run,
                                  pr_stage_times, pr_step, rank2_eigs,
                                  rank2_eigs_gram, se_run, solve_fixed_point,
                                  theoretical_gd_mc)

IDENTITY = model_from_names("identity")
SQUARE = model_from_names("square")
SIGMOID_NOISY = model_from_names("sigmoid", "gaussian", noise_sigma=0.3)


class TestSeGeometry:

    def test_from_vectors(self):
        rng = np.random.default_rng(0)
        mu0 = rng.standard_normal(7)
        mu_star = rng.standard_normal(7)
        geo = SeGeometry.from_vectors(mu0, mu_star)
        assert geo.g00 == pytest.approx(mu0 @ mu0, rel=1e-14)
        assert geo.g01 == pytest.approx(mu0 @ mu_star, rel=1e-14)
        assert geo.g11 == pytest.approx(mu_star @ mu_star, rel=1e-14)

    def test_cauchy_schwarz_rejected(self):
        with pytest.raises(ConfigError):
            SeGeometry(mu0_norm=1.0, inner=1.5, mu_star_norm=1.0)

    def test_degenerate_norms_rejected(self):
        with pytest.raises(ConfigError):
            SeGeometry(mu0_norm=1.0, inner=0.0, mu_star_norm=0.0)
        with pytest.raises(ConfigError):
            SeGeometry(mu0_norm=-0.1, inner=0.0, mu_star_norm=1.0)


class TestIdentityClosedForm:

    def test_a_b_closed_form(self):
        eta, t_max = 0.3, 40
        geo = SeGeometry(mu0_norm=0.8, inner=0.2, mu_star_norm=1.5)
        track = se_run(geo, IDENTITY, eta, t_max)
        ts = np.arange(t_max + 1)
        a_expect = (1 - eta) ** ts
        b_expect = 1 - (1 - eta) ** ts
        a_got = np.array([p.a for p in track.points])
        b_got = np.array([p.b for p in track.points])
        np.testing.assert_allclose(a_got, a_expect, rtol=1e-12)
        np.testing.assert_allclose(b_got, b_expect, rtol=1e-12, atol=1e-14)
        for p in track.points:
            assert p.tau == pytest.approx(1.0, abs=1e-12)
            assert p.delta == pytest.approx(1.0, abs=1e-12)

    def test_gamma_alpha_quadratic_forms(self):
        geo = SeGeometry(mu0_norm=0.8, inner=0.2, mu_star_norm=1.5)
        track = se_run(geo, IDENTITY, 0.3, 10)
        for p in track.points:
            gamma2 = (p.a ** 2 * geo.g00 + 2 * p.a * p.b * geo.g01
                      + p.b ** 2 * geo.g11)
            alpha = p.a * geo.g01 + p.b * geo.g11
            assert p.gamma ** 2 == pytest.approx(gamma2, rel=1e-12)
            assert p.alpha == pytest.approx(alpha, rel=1e-12)

    def test_geometry_tuple_accepted(self):
        t1 = se_run((0.8, 0.2, 1.5), IDENTITY, 0.3, 5)
        t2 = se_run(SeGeometry(0.8, 0.2, 1.5), IDENTITY, 0.3, 5)
        np.testing.assert_array_equal(t1.gammas, t2.gammas)

    def test_t_max_zero(self):
        track = se_run((1.0, 0.0, 1.0), IDENTITY, 0.5, 0)
        assert len(track.points) == 1
        assert track.points[0].a == 1.0 and track.points[0].b == 0.0

    def test_negative_t_max_rejected(self):
        with pytest.raises(ConfigError):
            se_run((1.0, 0.0, 1.0), IDENTITY, 0.5, -1)


class TestSeInternalConsistency:

    def test_stored_tau_delta_match_recomputation(self):
        geo = SeGeometry(mu0_norm=1.2, inner=-0.4, mu_star_norm=1.0)
        track = se_run(geo, SIGMOID_NOISY, 0.4, 12)
        for t, p in enumerate(track.points):
            tau, delta = tau_delta(SIGMOID_NOISY, track.cov_at(t))
            assert p.tau == pytest.approx(tau, abs=1e-13)
            assert p.delta == pytest.approx(delta, abs=1e-13)

    def test_recursion_arithmetic(self):
        track = se_run((1.2, -0.4, 1.0), SIGMOID_NOISY, 0.4, 12)
        eta = 0.4
        for t in range(12):
            p, q = track.points[t], track.points[t + 1]
            assert q.a == pytest.approx((1 - eta * p.tau) * p.a, rel=1e-12)
            assert q.b == pytest.approx(
                (1 - eta * p.tau) * p.b + eta * p.delta, rel=1e-12, abs=1e-15)

    def test_u_vector_matches_coefficients(self):
        rng = np.random.default_rng(3)
        mu0 = rng.standard_normal(6)
        mu_star = rng.standard_normal(6)
        geo = SeGeometry.from_vectors(mu0, mu_star)
        track = se_run(geo, IDENTITY, 0.2, 4)
        p = track.points[3]
        np.testing.assert_allclose(track.u_vector(3, mu0, mu_star),
                                   p.a * mu0 + p.b * mu_star, rtol=1e-14)


class TestSquareScalarReduction:
    """For the square link at |mu*| = 1 the (a, b) evolution pushed through
    the geometry must equal the scalar (alpha, beta) recursion."""

    def _compare(self, rho, eta, t_max, noise_mean, model):
        geo = SeGeometry(mu0_norm=1.0, inner=rho, mu_star_norm=1.0)
        track = se_run(geo, model, eta, t_max)
        pr = pr_run(alpha0=rho, beta0=math.sqrt(1 - rho ** 2), eta=eta,
                    t_max=t_max, noise_mean=noise_mean)
        a = np.array([p.a for p in track.points])
        b = np.array([p.b for p in track.points])
        np.testing.assert_allclose(a * rho + b, pr.alphas,
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(np.abs(a) * math.sqrt(1 - rho ** 2),
                                   pr.betas, rtol=1e-10, atol=1e-12)

    def test_zero_noise(self):
        self._compare(rho=0.3, eta=0.02, t_max=100, noise_mean=0.0,
                      model=SQUARE)

    def test_noise_mean_drift(self):
        noisy = model_from_names("square", "gaussian",
                                 noise_sigma=0.5, noise_mean=0.2)
        self._compare(rho=-0.25, eta=0.02, t_max=80, noise_mean=0.2,
                      model=noisy)

    def test_pr_step_frozen_values(self):
        s = pr_step(PrState(alpha=0.1, beta=1.0, eta=0.1))
        assert s.alpha == pytest.approx(0.0994, abs=1e-12)
        assert s.beta == pytest.approx(0.594, abs=1e-12)

    def test_pr_run_is_iterated_step(self):
        track = pr_run(0.05, 0.9, eta=0.08, t_max=30, noise_mean=0.1)
        s = PrState(alpha=0.05, beta=0.9, eta=0.08, noise_mean=0.1)
        for t in range(31):
            assert track.alphas[t] == pytest.approx(s.alpha, rel=1e-14)
            assert track.betas[t] == pytest.approx(s.beta, rel=1e-14)
            s = pr_step(s)

    def test_sign_symmetry(self):
        up = pr_run(0.01, 1.0, eta=0.05, t_max=200)
        dn = pr_run(-0.01, 1.0, eta=0.05, t_max=200)
        np.testing.assert_allclose(dn.alphas, -up.alphas, rtol=1e-14)
        np.testing.assert_allclose(dn.betas, up.betas, rtol=1e-14)


class TestStageTimes:

    def make_track(self, alpha0=1e-3):
        return pr_run(alpha0, 1.0, eta=0.05, t_max=4000)

    def test_stage_ordering(self):
        track = self.make_track()
        rep = pr_stage_times(track, m=3000, threshold=0.1)
        assert rep.T0 is not None and rep.T_eps is not None
        assert rep.stage2_start is not None
        assert rep.stage1_end == rep.stage2_start
        assert rep.stage2_start <= rep.stage2_end
        assert rep.stage2_end <= rep.T0 <= rep.T_eps
        # once converged, the distance to the signed signal is small
        assert track.signal_distance(rep.T_eps) <= rep.eps0 / 4 * math.sqrt(2)

    def test_threshold_override(self):
        track = self.make_track()
        rep = pr_stage_times(track, m=3000, threshold=0.25)
        assert track.alphas[rep.T0 + 1] >= 0.25
        assert np.all(track.alphas[1:rep.T0 + 1] < 0.25)

    def test_default_threshold_formula(self):
        track = self.make_track(alpha0=0.2)
        rep = pr_stage_times(track, m=5000)
        assert rep.threshold == pytest.approx(1.0 / math.log(5000) ** 5)

    def test_tiny_m_rejected(self):
        with pytest.raises(ConfigError):
            pr_stage_times(self.make_track(), m=2)

    def test_negative_start_uses_sign(self):
        up = pr_stage_times(self.make_track(1e-3), m=3000, threshold=0.1)
        dn = pr_stage_times(pr_run(-1e-3, 1.0, eta=0.05, t_max=4000),
                            m=3000, threshold=0.1)
        assert up.T0 == dn.T0 and up.T_eps == dn.T_eps


class TestRank2Spectra:

    def _dense(self, c0, c11, c12, c22, u, v):
        n = u.size
        A = c0 * np.eye(n) + c11 * np.outer(u, u) + c22 * np.outer(v, v)
        A += c12 * (np.outer(u, v) + np.outer(v, u))
        return np.linalg.eigvalsh(A)

    def test_random_instances_match_dense(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            n = int(rng.integers(2, 13))
            u = rng.standard_normal(n)
            v = rng.standard_normal(n)
            c0, c11, c12, c22 = rng.standard_normal(4)
            spec = rank2_eigs(c0, c11, c12, c22, u, v)
            np.testing.assert_allclose(spec.eigenvalues(n),
                                       self._dense(c0, c11, c12, c22, u, v),
                                       atol=1e-10)

    def test_zero_u_vector(self):
        v = np.array([1.0, 2.0, -1.0, 0.5])
        u = np.zeros(4)
        spec = rank2_eigs(0.7, 3.0, -2.0, 1.5, u, v)
        np.testing.assert_allclose(spec.eigenvalues(4),
                                   self._dense(0.7, 3.0, -2.0, 1.5, u, v),
                                   atol=1e-10)

    def test_parallel_vectors(self):
        v = np.array([0.3, -1.2, 0.8])
        spec = rank2_eigs(1.0, 2.0, 0.5, -1.0, 2.0 * v, v)
        np.testing.assert_allclose(spec.eigenvalues(3),
                                   self._dense(1.0, 2.0, 0.5, -1.0, 2 * v, v),
                                   atol=1e-10)

    def test_gram_route_equals_vector_route(self):
        rng = np.random.default_rng(7)
        u = rng.standard_normal(9)
        v = rng.standard_normal(9)
        a = rank2_eigs(0.4, 1.1, -0.6, 2.2, u, v)
        b = rank2_eigs_gram(0.4, 1.1, -0.6, 2.2,
                            float(u @ u), float(u @ v), float(v @ v))
        assert a.bulk == b.bulk
        np.testing.assert_allclose(sorted(a.extremes), sorted(b.extremes),
                                   rtol=1e-12)

    def test_zero_v_rejected(self):
        with pytest.raises(ConfigError):
            rank2_eigs(1.0, 1.0, 1.0, 1.0, np.ones(3), np.zeros(3))

    def test_eigenvalues_needs_two_dims(self):
        spec = rank2_eigs_gram(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
        with pytest.raises(ConfigError):
            spec.eigenvalues(1)


class TestCurvatureMatrices:

    def test_square_at_signal_closed_form(self):
        # At u = mu*, |mu*| = 1, zero noise the square-link matrix is
        # 4 I + 8 mu* mu*^T in both forms: spectrum {4 x (n-1), 12}.
        cov = GaussianPairCov(1.0, 1.0, 1.0)
        for mode in ("self", "with_signal"):
            spec = mz_matrix_eigs(SQUARE, cov, mode=mode)
            assert spec.lam_min == pytest.approx(4.0, abs=1e-9)
            assert spec.lam_max == pytest.approx(12.0, abs=1e-8)
            np.testing.assert_allclose(spec.eigenvalues(6),
                                       [4, 4, 4, 4, 4, 12], atol=1e-8)

    def test_identity_link_is_identity_matrix(self):
        cov = GaussianPairCov(0.7, 0.1, 1.3)
        for mode in ("self", "with_signal"):
            c0, c11, c12, c22 = mz_matrix_coeffs(IDENTITY, cov, mode=mode)
            assert c0 == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose([c11, c12, c22], 0.0, atol=1e-12)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            mz_matrix_eigs(SQUARE, GaussianPairCov(1, 0, 1), mode="both")

    def _mc_matrix(self, model, u, v, mode, n_draws, seed):
        """Monte Carlo E d1S(<Z,w>, <Z,v>, xi) Z Z^T with, in the averaged
        form, w = U u + (1 - U) v and U ~ Unif[0,1]."""
        rng = np.random.default_rng(seed)
        n = u.size
        d1 = model.score_d1
        blocks = []
        for _ in range(10):
            Z = rng.standard_normal((n_draws // 10, n))
            if mode == "with_signal":
                U = rng.uniform(size=n_draws // 10)[:, None]
                w_dirs = U * u[None, :] + (1 - U) * v[None, :]
                x = np.sum(Z * w_dirs, axis=1)
            else:
                x = Z @ u
            z = Z @ v
            xi = model.noise.draw(rng, x.size)
            vals = np.asarray(d1(x, z, xi), dtype=float)
            blocks.append((Z * vals[:, None]).T @ Z / x.size)
        M = np.mean(blocks, axis=0)
        se = np.std(blocks, axis=0, ddof=1) / math.sqrt(10)
        return M, se

    @pytest.mark.parametrize("mode", ["self", "with_signal"])
    def test_matches_monte_carlo(self, mode):
        rng = np.random.default_rng(11)
        n = 5
        u = rng.standard_normal(n) * 0.6
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        cov = GaussianPairCov(float(u @ u), float(u @ v), 1.0)
        c0, c11, c12, c22 = mz_matrix_coeffs(SQUARE, cov, mode=mode)
        exact = (c0 * np.eye(n) + c11 * np.outer(u, u) + c22 * np.outer(v, v)
                 + c12 * (np.outer(u, v) + np.outer(v, u)))
        M, se = self._mc_matrix(SQUARE, u, v, mode, n_draws=400_000, seed=13)
        np.testing.assert_array_less(np.abs(M - exact), 4 * se + 1e-6)

    def test_matches_monte_carlo_noisy_sigmoid(self):
        rng = np.random.default_rng(21)
        n = 4
        u = rng.standard_normal(n)
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        cov = GaussianPairCov(float(u @ u), float(u @ v), 1.0)
        coeffs = mz_matrix_coeffs(SIGMOID_NOISY, cov, mode="with_signal")
        c0, c11, c12, c22 = coeffs
        exact = (c0 * np.eye(n) + c11 * np.outer(u, u) + c22 * np.outer(v, v)
                 + c12 * (np.outer(u, v) + np.outer(v, u)))
        M, se = self._mc_matrix(SIGMOID_NOISY, u, v, "with_signal",
                                n_draws=200_000, seed=23)
        np.testing.assert_array_less(np.abs(M - exact), 4 * se + 1e-6)


class TestBQuantities:

    def test_identity_blowup_is_linear(self):
        track = se_run((1.0, 0.2, 1.0), IDENTITY, 0.3, 8)
        bq = b_quantities(track)
        np.testing.assert_allclose(bq.lam_min_signal, 1.0, atol=1e-9)
        np.testing.assert_allclose(bq.lam_min_self, 1.0, atol=1e-9)
        np.testing.assert_allclose(bq.B0, np.arange(9), atol=1e-8)
        np.testing.assert_allclose(bq.B, np.arange(9), atol=1e-8)

    def test_slack_geometric_growth(self):
        track = se_run((1.0, 0.2, 1.0), IDENTITY, 0.5, 6)
        eps = 0.4
        bq = b_quantities(track, eps_n=eps)
        f = 1.0 + 0.5 * eps
        expect = [0.0]
        for _ in range(6):
            expect.append((expect[-1] + 1.0) * f)
        np.testing.assert_allclose(bq.B, expect, rtol=1e-8)
        np.testing.assert_allclose(bq.B_plain, np.arange(7), atol=1e-8)

    def test_recursion_matches_lambda_arrays(self):
        geo = SeGeometry(mu0_norm=0.3, inner=0.0, mu_star_norm=1.0)
        track = se_run(geo, SQUARE, 0.02, 5)
        bq = b_quantities(track)
        expect = [0.0]
        for t in range(1, 6):
            f = 1.0 + 0.02 * max(-bq.lam_min_signal[t - 1], 0.0)
            expect.append((expect[-1] + 1.0) * f)
        np.testing.assert_allclose(bq.B0, expect, rtol=1e-12)
        # near the origin the square-link curvature is negative, so the
        # signal sequence must outgrow the step count
        assert bq.lam_min_signal[0] < 0
        assert bq.B0[-1] > 5.0

    def test_negative_eps_rejected(self):
        track = se_run((1.0, 0.2, 1.0), IDENTITY, 0.3, 2)
        with pytest.raises(ConfigError):
            b_quantities(track, eps_n=-0.1)


class TestTheoreticalGdMc:

    def setup_method(self):
        rng = np.random.default_rng(9)
        self.n = 8
        self.mu_star = rng.standard_normal(self.n)
        self.mu_star /= np.linalg.norm(self.mu_star)
        self.mu0 = rng.standard_normal(self.n) * 0.5

    def test_within_three_se_of_state_evolution(self):
        track = theoretical_gd_mc(GAUSSIAN, IDENTITY, self.mu0, self.mu_star,
                                  step_sizes=0.4, t_max=4, mc_reps=300,
                                  seed=5, m=100)
        se_track = se_run(SeGeometry.from_vectors(self.mu0, self.mu_star),
                          IDENTITY, 0.4, 4)
        dev = track.deviations_from(se_track, self.mu0, self.mu_star)
        assert dev[0] == 0.0
        np.testing.assert_array_less(dev, 3 * track.cumulative_se + 1e-12)

    def test_deterministic_and_thread_invariant(self):
        kwargs = dict(step_sizes=0.4, t_max=3, mc_reps=40, seed=17, m=50)
        a = theoretical_gd_mc(GAUSSIAN, IDENTITY, self.mu0, self.mu_star,
                              **kwargs)
        b = theoretical_gd_mc(GAUSSIAN, IDENTITY, self.mu0, self.mu_star,
                              **kwargs)
        c = theoretical_gd_mc(GAUSSIAN, IDENTITY, self.mu0, self.mu_star,
                              threads=3, **kwargs)
        for t in range(4):
            np.testing.assert_array_equal(a.us[t], b.us[t])
            np.testing.assert_array_equal(a.us[t], c.us[t])

    def test_seed_changes_draws(self):
        a = theoretical_gd_mc(GAUSSIAN, IDENTITY, self.mu0, self.mu_star,
                              step_sizes=0.4, t_max=2, mc_reps=10, seed=1,
                              m=50)
        b = theoretical_gd_mc(GAUSSIAN, IDENTITY, self.mu0, self.mu_star,
                              step_sizes=0.4, t_max=2, mc_reps=10, seed=2,
                              m=50)
        assert not np.array_equal(a.us[-1], b.us[-1])

    def test_bad_reps_rejected(self):
        with pytest.raises(ConfigError):
            theoretical_gd_mc(GAUSSIAN, IDENTITY, self.mu0, self.mu_star,
                              step_sizes=0.4, t_max=2, mc_reps=0, seed=1)


class TestFixedPoint:

    def test_identity_fixed_point(self):
        fp = solve_fixed_point(IDENTITY, mu_star_norm=1.0)
        assert fp.tau == pytest.approx(1.0, abs=1e-12)
        assert fp.delta == pytest.approx(1.0, abs=1e-12)
        assert fp.residual < 1e-12

    def test_strongly_convex_custom_score(self):
        model = custom_score_model(
            "tanh-shift",
            score=lambda x, z, xi: x + 0.3 * np.tanh(x) - z - xi,
            response=lambda z, xi: z + xi,
            partials={
                "d1": lambda x, z, xi: 1.0 + 0.3 / np.cosh(x) ** 2,
                "d2": lambda x, z, xi: -np.ones_like(np.asarray(x, float)),
            })
        fp = solve_fixed_point(model, mu_star_norm=1.0)
        # d2 is constantly -1, so delta must be exactly 1; d1 > 1 pushes tau
        # strictly above 1 but never past 1.3
        assert fp.delta == pytest.approx(1.0, abs=1e-12)
        assert 1.0 < fp.tau < 1.3
        assert fp.residual < 1e-10
        # the pair solves the stationarity equations evaluated independently
        r = fp.delta / fp.tau
        cov = GaussianPairCov(r * r, r, 1.0)
        tau, delta = tau_delta(model, cov)
        assert fp.tau == pytest.approx(tau, abs=1e-10)
        assert fp.delta == pytest.approx(delta, abs=1e-10)

    def test_square_link_fails_probe(self):
        with pytest.raises(ConfigError):
            solve_fixed_point(SQUARE, mu_star_norm=1.0)

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            solve_fixed_point(IDENTITY, mu_star_norm=0.0)
        with pytest.raises(ConfigError):
            solve_fixed_point(IDENTITY, mu_star_norm=1.0, damping=0.0)
