import json
import math

import numpy as np
import pytest
from scipy import stats

from veig.errors import (
    CapabilityError,
    ConfigurationError,
    DomainError,
    ImplicitLikelihood,
)
from veig.models import (
    ces_utility,
    comparison_designs,
    make_model,
    model_from_json,
    stimulus_features,
)
from veig.rng import RngStream

from conftest import assert_close


class TestMakeModel:
    def test_ab_defaults_match_paper_values(self):
        m = make_model("ab_test")
        assert m.n_participants == 10
        assert_close(np.diag(m.prior_cov), [100.0, 3.3124], atol=1e-12)
        assert len(m.design_space) == 11

    def test_death_process_defaults(self):
        m = make_model("death_process")
        assert m.population == 10
        assert m.log_rate_mean == 0.0
        assert m.log_rate_sd == 0.25

    def test_preference_defaults(self):
        m = make_model("preference")
        assert (m.prior_mean, m.prior_sd, m.noise_sd) == (-20.0, 20.0, 1.0)

    def test_mixed_defaults(self):
        m = make_model("mixed_effects")
        assert_close(m.prior_cov, 100.0 * np.eye(6), atol=0)
        assert m.noise_sd == 10.0
        assert (m.a_psi, m.b_psi, m.a_k, m.b_k) == (2.0, 2.0, 2.0, 2.0)
        assert m.n_participants == 8

    def test_ces_defaults(self):
        m = make_model("ces")
        assert m.rho_conc == (1.0, 1.0)
        assert_close(m.alpha_conc, np.ones(3), atol=0)
        assert (m.log_u_mean, m.log_u_sd, m.noise_sd) == (1.0, 3.0, 0.005)

    def test_zero_prior_covariance_gives_zero_eig(self):
        from veig.oracle import analytic_eig_linear_gaussian

        m = make_model("ab_test", {"prior_cov": np.zeros((2, 2))})
        for d in m.design_space:
            assert analytic_eig_linear_gaussian(m, d).eig == 0.0

    def test_unknown_name_or_param(self):
        with pytest.raises(ConfigurationError):
            make_model("nope")
        with pytest.raises(ConfigurationError):
            make_model("ab_test", {"bogus": 1})

    def test_from_json(self, tmp_path):
        cfg = {"model": "preference", "params": {"prior_mean": -10.0}, "eps": 0.01}
        path = tmp_path / "model.json"
        path.write_text(json.dumps(cfg))
        m = model_from_json(str(path))
        assert m.prior_mean == -10.0 and m.eps == 0.01
        m2 = model_from_json(cfg)
        assert m2.eps == 0.01


class TestSampleJoint:
    def test_ab_design_structure(self, rng):
        m = make_model("ab_test")
        theta, y = m.sample_joint(5, 1, rng)
        assert theta.shape == (1, 2) and y.shape == (1, 10)
        # first five coordinates center on the first group mean
        theta_big = np.array([[500.0, -500.0]])
        y = m.simulate(theta_big, 5, rng)
        assert np.all(y[0, :5] > 400) and np.all(y[0, 5:] < -400)

    def test_extrapolation_binary_joint(self, rng):
        m = make_model("extrapolation")
        theta, y = m.sample_joint(0.5, 200, rng)
        assert set(np.unique(theta)) <= {0.0, 1.0}
        assert set(np.unique(y)) <= {0.0, 1.0}
        with pytest.raises(CapabilityError):
            m.simulate(theta, 0.5, rng)

    def test_death_first_count_mean_matches_quadrature(self, rng):
        # E[I1] = N * E_b[1 - exp(-b t1)] by 1-D quadrature over log b
        m = make_model("death_process")
        d = (1.0, 2.0)
        n = 10_000
        _, y = m.sample_joint(d, n, rng)
        x, w = np.polynomial.hermite_e.hermegauss(80)
        b = np.exp(m.log_rate_mean + m.log_rate_sd * x)
        expected = m.population * float((w / math.sqrt(2 * math.pi)) @ (1 - np.exp(-b * 1.0)))
        se = y[:, 0].std() / math.sqrt(n)
        assert abs(y[:, 0].mean() - expected) < 3 * se

    def test_invalid_design(self, rng):
        m = make_model("death_process")
        with pytest.raises(DomainError):
            m.sample_joint((2.0, 1.0), 1, rng)
        with pytest.raises(DomainError):
            make_model("ab_test").sample_joint(11, 1, rng)


class TestLogLikelihood:
    def test_death_trinomial_normalizes(self):
        m = make_model("death_process")
        b = np.array([[0.7]])
        total = 0.0
        for i1, i2 in m.outcomes():
            total += float(
                np.exp(m.log_likelihood(b, (0.8, 1.7), np.array([[i1, i2]])))[0]
            )
        assert_close(total, 1.0, atol=1e-10)

    def test_ab_matches_mvn_log_prob(self, rng):
        from veig.dists import MultivariateNormal

        m = make_model("ab_test")
        theta, y = m.sample_joint(4, 3, rng)
        for i in range(3):
            x = m.design_matrix(4)
            ref = MultivariateNormal(x @ theta[i], cov=np.eye(10)).log_prob(y[i])
            assert_close(m.log_likelihood(theta[i : i + 1], 4, y[i : i + 1])[0], ref, atol=1e-9)

    def test_implicit_models_raise(self, rng):
        for name in ("mixed_effects", "extrapolation"):
            m = make_model(name)
            d = m.design_space[0]
            with pytest.raises(ImplicitLikelihood):
                m.log_likelihood(np.zeros((1, m.theta_dim)), d, np.array([0.5]))

    @pytest.mark.parametrize("name,d", [("preference", 10.0), ("ces", None)])
    def test_simulation_matches_density_histogram(self, name, d, rng):
        # chi-square between simulated frequencies and exp(log-density), with
        # bins from empirical quantiles so every cell is populated
        from scipy import integrate

        m = make_model(name)
        if name == "ces":
            d = np.array([40.0, 20.0, 10.0, 35.0, 25.0, 5.0])
            theta = m.sample_prior(1, rng.child("theta"))
        else:
            # a latent near the design keeps atoms and interior all populated
            theta = np.array([[8.0]])
        n = 50_000
        y = m.simulate(np.repeat(theta, n, axis=0), d, rng.child("y"))
        dist = m.response_dist(theta, d)
        p_lo, p_hi = float(np.ravel(dist.atom_probs()[0])[0]), float(
            np.ravel(dist.atom_probs()[1])[0]
        )
        interior = y[(y > m.eps) & (y < 1 - m.eps)]
        counts = [np.sum(y == m.eps)]
        probs = [p_lo]
        if interior.size > 100:
            edges = np.quantile(interior, np.linspace(0, 1, 9))
            edges[0], edges[-1] = m.eps, 1 - m.eps
            for a, b in zip(edges[:-1], edges[1:]):
                counts.append(np.sum((y > a) & (y <= b) & (y < 1 - m.eps)))
                val, _ = integrate.quad(
                    lambda t: math.exp(m.log_likelihood(theta, d, np.array([t]))[0]),
                    a + 1e-12,
                    b,
                    limit=200,
                )
                probs.append(val)
        counts.append(np.sum(y == 1 - m.eps))
        probs.append(p_hi)
        counts = np.asarray(counts, dtype=float)
        probs = np.asarray(probs, dtype=float)
        keep = probs * n >= 5
        chi2 = np.sum((counts[keep] - n * probs[keep]) ** 2 / (n * probs[keep]))
        pval = 1 - stats.chi2.cdf(chi2, keep.sum() - 1)
        assert pval > 0.01

    def test_ab_marginal_moments(self, rng):
        # p(y|d) = N(0, I + X Sigma X^T): simulated moments within 3 SE
        m = make_model("ab_test")
        d = 3
        n = 40_000
        _, y = m.sample_joint(d, n, rng)
        exact = m.exact_marginal(d)
        se_mean = np.sqrt(np.diag(exact.cov) / n)
        assert np.all(np.abs(y.mean(axis=0)) < 3 * se_mean)
        sample_cov = np.cov(y.T)
        # variance of a covariance entry is O(sigma^4 / n); allow 4 sigma
        tol = 4 * np.sqrt(2.0 / n) * np.outer(
            np.sqrt(np.diag(exact.cov)), np.sqrt(np.diag(exact.cov))
        )
        assert np.all(np.abs(sample_cov - exact.cov) < tol)


class TestCesUtility:
    def test_unit_basket(self):
        assert_close(ces_utility(np.ones(3), 0.7, np.array([0.2, 0.3, 0.5])), 1.0, atol=1e-12)

    def test_rho_one_is_linear(self):
        x = np.array([2.0, 3.0, 4.0])
        a = np.array([0.5, 0.25, 0.25])
        assert_close(ces_utility(x, 1.0, a), float(x @ a), atol=1e-12)

    def test_single_term_closed_form(self):
        assert_close(
            ces_utility(np.array([2.0, 0.0, 0.0]), 0.5, np.ones(3) / 3), 2.0 / 9.0, atol=1e-12
        )

    def test_rho_zero_rejected(self):
        with pytest.raises(DomainError):
            ces_utility(np.ones(3), 0.0, np.ones(3) / 3)
        with pytest.raises(DomainError):
            ces_utility(np.array([-1.0, 0, 0]), 0.5, np.ones(3) / 3)

    def test_noise_grows_with_basket_distance(self, rng):
        # equal-utility basket pairs (CES utility is 1-homogeneous, so a
        # rescaled basket matches utility exactly); only the distance differs
        m = make_model("ces")
        theta = np.array([[0.8, 0.3, 0.3, 0.4, 2.0]])
        rho, alpha = 0.8, np.array([0.3, 0.3, 0.4])
        base = np.array([50.0, 50.0, 50.0])

        def matched_pair(offset):
            other = base + offset
            u_base = ces_utility(base, rho, alpha)
            other = other * (u_base / ces_utility(other, rho, alpha))
            return np.concatenate([base, other])

        near = matched_pair(np.array([0.7, -0.7, 0.1]))
        far = matched_pair(np.array([35.0, -30.0, 10.0]))
        assert np.linalg.norm(far[:3] - far[3:]) > 30
        assert np.linalg.norm(near[:3] - near[3:]) < 2
        n = 4000
        y_near = m.simulate(np.repeat(theta, n, axis=0), near, rng.child("n"))
        y_far = m.simulate(np.repeat(theta, n, axis=0), far, rng.child("f"))
        v_near, v_far = np.var(y_near), np.var(y_far)
        se = math.sqrt(2.0 / n) * max(v_near, v_far)
        assert v_far > v_near + 3 * se


class TestMixedEffectsPieces:
    def test_36_designs(self):
        assert len(comparison_designs()) == 36

    def test_feature_encoding(self):
        x = stimulus_features(4)
        assert x.sum() == 2.0 and x.shape == (6,)

    def test_design_vector_antisymmetry(self):
        m = make_model("mixed_effects")
        assert_close(m.design_vector((0, 5)), -m.design_vector((5, 0)), atol=0)

    def test_responses_in_slider_range(self, rng):
        m = make_model("mixed_effects")
        theta, y = m.sample_joint((0, 8), 500, rng)
        assert np.all((y >= m.eps) & (y <= 1 - m.eps))


class TestSupportClosure:
    def test_death_counts_within_support(self, rng):
        m = make_model("death_process")
        _, y = m.sample_joint((0.8, 2.4), 2000, rng)
        assert np.all((0 <= y[:, 0]) & (y[:, 0] <= y[:, 1]) & (y[:, 1] <= m.population))

    def test_ces_responses_in_slider_range(self, rng):
        m = make_model("ces")
        d = np.array([60.0, 40.0, 20.0, 55.0, 45.0, 25.0])
        _, y = m.sample_joint(d, 1000, rng)
        assert np.all((y >= m.eps) & (y <= 1 - m.eps))
