"""Revealed preference: locate a utility indifference point from censored,
heteroscedastically corrupted slider responses."""

from __future__ import annotations

import numpy as np
from scipy import special

import math

from ..dists import CensoredSigmoidNormal, Normal, logit
from ..errors import ParameterError
from ..rng import as_generator
from .base import DesignGrid, ProbModel


def _log_ndtr_grad(z):
    """d/dz log Phi(z) = phi(z)/Phi(z), computed stably."""
    log_pdf = -0.5 * z * z - 0.5 * math.log(2.0 * math.pi)
    return np.exp(log_pdf - special.log_ndtr(z))


class PreferenceModel(ProbModel):
    name = "preference"
    theta_dim = 1
    implicit = False

    def __init__(
        self,
        prior_mean=-20.0,
        prior_sd=20.0,
        noise_sd=1.0,
        eps=0.005,
        design_grid_size=21,
        design_low=-80.0,
        design_high=80.0,
    ):
        if prior_sd <= 0 or noise_sd <= 0:
            raise ParameterError("scales must be positive")
        self.prior_mean = float(prior_mean)
        self.prior_sd = float(prior_sd)
        self.noise_sd = float(noise_sd)
        self.eps = float(eps)
        self.design_space = DesignGrid(
            np.linspace(design_low, design_high, int(design_grid_size))
        )

    def response_scale(self, d):
        return self.noise_sd * (1.0 + abs(float(d)))

    def response_dist(self, theta, d):
        """p(y | theta, d) as a censored-sigmoid-normal over the slider."""
        loc = float(d) - np.atleast_2d(theta)[:, 0]
        return CensoredSigmoidNormal(loc, self.response_scale(d), self.eps)

    # -- prior -----------------------------------------------------------
    def sample_prior(self, n, rng):
        g = as_generator(rng)
        return (self.prior_mean + self.prior_sd * g.standard_normal(n))[:, None]

    def prior_log_prob(self, theta):
        th = np.atleast_2d(theta)[:, 0]
        return Normal(self.prior_mean, self.prior_sd).log_prob(th)

    def prior_entropy(self):
        return Normal(self.prior_mean, self.prior_sd).entropy()

    def grad_prior_log_prob(self, theta):
        th = np.atleast_2d(theta)
        return -(th - self.prior_mean) / self.prior_sd**2

    # -- likelihood --------------------------------------------------------
    def simulate(self, theta, d, rng):
        return self.response_dist(theta, d).sample(rng)

    def log_likelihood(self, theta, d, y):
        return self.response_dist(theta, d).log_prob(np.asarray(y, dtype=float))

    def grad_log_joint(self, theta, d, y):
        th = np.atleast_2d(theta)[:, 0]
        y = np.asarray(y, dtype=float)
        s = self.response_scale(d)
        lo, hi = logit(self.eps), logit(1.0 - self.eps)
        # d eta_mean / d theta = -1 with eta_mean = d - theta
        mean = float(d) - th
        grad = np.empty_like(th)
        at_lo = y <= self.eps
        at_hi = y >= 1.0 - self.eps
        interior = ~(at_lo | at_hi)
        if np.any(interior):
            # d mean/d theta = -1 with mean = d - theta
            x = logit(y[interior])
            grad[interior] = -(x - mean[interior]) / s**2
        if np.any(at_lo):
            z = (lo - mean[at_lo]) / s
            grad[at_lo] = _log_ndtr_grad(z) / s
        if np.any(at_hi):
            z = (hi - mean[at_hi]) / s
            grad[at_hi] = -_log_ndtr_grad(-z) / s
        grad = grad + self.grad_prior_log_prob(theta)[:, 0]
        return grad[:, None]

    def hess_log_joint(self, theta, d, y):
        th = np.atleast_2d(theta)[:, 0]
        y = np.asarray(y, dtype=float)
        s = self.response_scale(d)
        lo, hi = logit(self.eps), logit(1.0 - self.eps)
        mean = float(d) - th
        hess = np.empty_like(th)
        at_lo = y <= self.eps
        at_hi = y >= 1.0 - self.eps
        interior = ~(at_lo | at_hi)
        hess[interior] = -1.0 / s**2
        if np.any(at_lo):
            z = (lo - mean[at_lo]) / s
            m = _log_ndtr_grad(z)
            hess[at_lo] = -m * (z + m) / s**2
        if np.any(at_hi):
            w = -(hi - mean[at_hi]) / s
            m = _log_ndtr_grad(w)
            hess[at_hi] = -m * (w + m) / s**2
        return (hess - 1.0 / self.prior_sd**2)[:, None, None]
