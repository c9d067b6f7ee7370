"""A/B test: Gaussian linear model with the group split as the design.

n participants are split into groups of size n_A and n - n_A; each yields a
continuous response.  theta holds the two group means, y the n responses.
"""

from __future__ import annotations

import math

import numpy as np

from ..dists import MultivariateNormal
from ..errors import DomainError, ParameterError
from ..rng import as_generator
from .base import DesignGrid, ProbModel, psd_sqrt

_LOG_2PI = math.log(2.0 * math.pi)


class ABTestModel(ProbModel):
    name = "ab_test"
    theta_dim = 2
    implicit = False

    def __init__(self, n_participants=10, prior_cov=None, obs_sd=1.0):
        if n_participants < 1:
            raise ParameterError("need at least one participant")
        if obs_sd <= 0:
            raise ParameterError("observation noise must be positive")
        self.n_participants = int(n_participants)
        if prior_cov is None:
            prior_cov = np.diag([10.0**2, 1.82**2])
        self.prior_cov = np.asarray(prior_cov, dtype=float)
        if self.prior_cov.shape != (2, 2):
            raise ParameterError("prior covariance must be 2x2")
        self.obs_sd = float(obs_sd)
        self._prior_chol = psd_sqrt(self.prior_cov)
        self.design_space = DesignGrid(range(self.n_participants + 1))
        self._design_cache = {}
        try:
            self._prior_prec = np.linalg.inv(self.prior_cov)
            sign, logdet = np.linalg.slogdet(self.prior_cov)
            self._prior_logdet = logdet if sign > 0 else None
        except np.linalg.LinAlgError:
            self._prior_prec = None
            self._prior_logdet = None

    def design_matrix(self, d):
        n_a = int(d)
        if n_a not in self._design_cache:
            if not 0 <= n_a <= self.n_participants:
                raise DomainError(f"group size {d!r} outside 0..{self.n_participants}")
            x = np.zeros((self.n_participants, 2))
            x[:n_a, 0] = 1.0
            x[n_a:, 1] = 1.0
            self._design_cache[n_a] = x
        return self._design_cache[n_a]

    def validate_design(self, d):
        self.design_matrix(d)

    # -- prior -----------------------------------------------------------
    def sample_prior(self, n, rng):
        g = as_generator(rng)
        z = g.standard_normal((n, 2))
        return z @ self._prior_chol.T

    def prior_log_prob(self, theta):
        if self._prior_prec is None or self._prior_logdet is None:
            raise ParameterError("degenerate prior has no density")
        theta = np.atleast_2d(theta)
        quad = np.einsum("ni,ij,nj->n", theta, self._prior_prec, theta)
        return -0.5 * quad - 0.5 * self._prior_logdet - _LOG_2PI

    def grad_prior_log_prob(self, theta):
        return -np.atleast_2d(theta) @ self._prior_prec.T

    def prior_entropy(self):
        return MultivariateNormal(np.zeros(2), cov=self.prior_cov).entropy()

    # -- likelihood --------------------------------------------------------
    def simulate(self, theta, d, rng):
        g = as_generator(rng)
        x = self.design_matrix(d)
        theta = np.atleast_2d(theta)
        noise = g.standard_normal((theta.shape[0], self.n_participants)) * self.obs_sd
        return theta @ x.T + noise

    def log_likelihood(self, theta, d, y):
        x = self.design_matrix(d)
        theta = np.atleast_2d(theta)
        y = np.atleast_2d(y)
        resid = (y - theta @ x.T) / self.obs_sd
        return (
            -0.5 * np.sum(resid * resid, axis=-1)
            - self.n_participants * (0.5 * _LOG_2PI + math.log(self.obs_sd))
        )

    def grad_log_joint(self, theta, d, y):
        x = self.design_matrix(d)
        theta = np.atleast_2d(theta)
        y = np.atleast_2d(y)
        lik = ((y - theta @ x.T) / self.obs_sd**2) @ x
        return lik + self.grad_prior_log_prob(theta)

    def hess_log_joint(self, theta, d, y):
        x = self.design_matrix(d)
        return -(x.T @ x) / self.obs_sd**2 - self._prior_prec

    # -- conjugate closed forms (exact marginal and posterior) -------------
    def exact_marginal(self, d):
        x = self.design_matrix(d)
        cov = self.obs_sd**2 * np.eye(self.n_participants) + x @ self.prior_cov @ x.T
        return MultivariateNormal(np.zeros(self.n_participants), cov=cov)

    def conjugate_posterior(self, d):
        """Posterior map: theta | y ~ N(A y, cov). Returns (A, cov)."""
        x = self.design_matrix(d)
        prec = self._prior_prec + (x.T @ x) / self.obs_sd**2
        cov = np.linalg.inv(prec)
        a = cov @ x.T / self.obs_sd**2
        return a, cov
