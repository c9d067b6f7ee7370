"""Variational families and critics for the mixed-effects model.

The responses are scalar sliders, so all families work through the inverted
response eta_hat = logit(y).  The posterior family maps eta_hat linearly to a
full-covariance Gaussian over the six fixed effects; the marginal+likelihood
pair are censored-sigmoid push-forwards.
"""

from __future__ import annotations

import numpy as np

from ..dists import logit
from .base import (
    CholeskyFactor,
    ConditionalGaussian,
    Critic,
    Guide,
    Identity,
    Positive,
    censored_head_grads,
    censored_head_log_prob,
)


def _eta_hat(y, eps):
    return logit(np.clip(np.asarray(y, dtype=float), eps, 1.0 - eps))


class MixedPosteriorGuide(ConditionalGaussian):
    """q(theta | y) = N(a * logit(y), Sigma) over the six fixed effects."""

    family = "mixed_posterior"
    model_name = "mixed_effects"
    role = "posterior"
    dim = 6

    def __init__(self, model):
        self.eps = model.eps
        super().__init__(
            [("map", Identity((self.dim,))), ("cov_chol", CholeskyFactor(self.dim))]
        )
        self.set_value("map", np.zeros(self.dim))
        self.set_cov("cov_chol", model.prior_cov)

    def mean(self, cond, d):
        eta = _eta_hat(cond, self.eps)
        return eta[:, None] * self.value("map")

    def mean_jac(self, cond, d):
        eta = _eta_hat(cond, self.eps)
        n = eta.shape[0]
        jac = np.zeros((n, self.dim, self.n_params))
        sl = self.block_slice("map")
        jac[:, np.arange(self.dim), sl.start + np.arange(self.dim)] = eta[:, None]
        return jac

    def _mean_param_grads(self, grads, lam, cond, d):
        eta = _eta_hat(cond, self.eps)
        grads[:, self.block_slice("map")] = lam * eta[:, None]


class MixedLikelihoodGuide(Guide):
    """q(y | theta, d): censored push-forward of N(gain * x_d theta + offset, sd^2)."""

    family = "mixed_likelihood"
    model_name = "mixed_effects"
    role = "likelihood"

    def __init__(self, model):
        self.eps = model.eps
        self._model = model
        super().__init__(
            [
                ("offset", Identity(())),
                ("sd", Positive(())),
                ("log_gain", Identity(())),
            ]
        )
        self.set_value("sd", [1.0])

    def _mean_sd(self, theta, d):
        xd = self._model.design_vector(d)
        proj = np.atleast_2d(theta) @ xd
        gain = np.exp(self.value("log_gain"))
        return gain * proj + self.value("offset"), self.value("sd"), proj, gain

    def log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        m, s, _, _ = self._mean_sd(cond, d)
        return censored_head_log_prob(y, m, s, self.eps)

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        m, s, proj, gain = self._mean_sd(cond, d)
        d_mean, d_sd = censored_head_grads(y, m, np.full_like(m, s), self.eps)
        g = np.zeros((y.shape[0], self.n_params))
        g[:, self.block_slice("offset")] = d_mean[:, None]
        g[:, self.block_slice("sd")] = (d_sd * s)[:, None]
        g[:, self.block_slice("log_gain")] = (d_mean * gain * proj)[:, None]
        return g


class MixedLfireCritic(Critic):
    """log ratio b - lam (logit(y) - delta)^2."""

    family = "mixed_lfire"
    model_name = "mixed_effects"
    role = "lfire"

    def __init__(self, model):
        self.eps = model.eps
        super().__init__(
            [("bias", Identity(())), ("lam", Identity(())), ("delta", Identity(()))]
        )

    def log_prob(self, target, cond, d):
        eta = _eta_hat(target, self.eps)
        r = eta - self.value("delta")
        return self.value("bias") - self.value("lam") * r * r

    def grad_log_prob(self, target, cond, d):
        eta = _eta_hat(target, self.eps)
        r = eta - self.value("delta")
        g = np.zeros((eta.shape[0], self.n_params))
        g[:, self.block_slice("bias")] = 1.0
        g[:, self.block_slice("lam")] = (-r * r)[:, None]
        g[:, self.block_slice("delta")] = (2.0 * self.value("lam") * r)[:, None]
        return g

    def lfire_features(self, y, d):
        eta = _eta_hat(y, self.eps)
        return np.stack([eta, eta * eta], axis=1)


class MixedDvCritic(Critic):
    """T = -lam (logit(y) - gain * x_d theta)^2."""

    family = "mixed_dv"
    model_name = "mixed_effects"
    role = "dv"

    def __init__(self, model):
        self.eps = model.eps
        self._model = model
        super().__init__([("lam", Identity(())), ("log_gain", Identity(()))])

    def log_prob(self, target, cond, d):
        eta = _eta_hat(target, self.eps)
        proj = np.atleast_2d(cond) @ self._model.design_vector(d)
        r = eta - np.exp(self.value("log_gain")) * proj
        return -self.value("lam") * r * r

    def grad_log_prob(self, target, cond, d):
        eta = _eta_hat(target, self.eps)
        proj = np.atleast_2d(cond) @ self._model.design_vector(d)
        gain = np.exp(self.value("log_gain"))
        r = eta - gain * proj
        g = np.zeros((eta.shape[0], self.n_params))
        g[:, self.block_slice("lam")] = (-r * r)[:, None]
        g[:, self.block_slice("log_gain")] = (
            2.0 * self.value("lam") * r * gain * proj
        )[:, None]
        return g
