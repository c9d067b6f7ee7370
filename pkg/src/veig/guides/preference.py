"""Variational families and critics for the preference model.

All families share the inverted-response feature eta_hat = d - logit(y) and
indicator offsets at the two censoring atoms; the marginal family is the
push-forward of a Gaussian through the censored sigmoid, which contains the
true marginal.
"""

from __future__ import annotations

import numpy as np

from ..dists import logit
from .base import (
    Critic,
    Guide,
    Identity,
    Positive,
    ScalarConditionalGaussian,
    censored_head_grads,
    censored_head_log_prob,
)


def _atoms(y, eps):
    y = np.asarray(y, dtype=float)
    return (y <= eps).astype(float), (y >= 1.0 - eps).astype(float)


def _eta_hat(y, d, eps):
    return float(d) - logit(np.clip(np.asarray(y, dtype=float), eps, 1.0 - eps))


class PreferencePosteriorGuide(ScalarConditionalGaussian):
    """q(theta | y, d) Gaussian; mean blends eta_hat with the prior mean and
    adds learned offsets at the censoring atoms; variance adds atom terms."""

    family = "preference_posterior"
    model_name = "preference"

    def __init__(self, model, role="posterior"):
        self.role = role
        self.eps = model.eps
        self.prior_mean = model.prior_mean
        self.prior_sd = model.prior_sd
        super().__init__(
            [
                ("weight", Identity(())),
                ("sd", Positive(())),
                ("loc_lo", Identity(())),
                ("sd_lo", Positive(())),
                ("loc_hi", Identity(())),
                ("sd_hi", Positive(())),
            ]
        )
        # start at the prior: zero weight on the feature, prior spread
        self.set_value("weight", np.zeros(1))
        self.set_value("sd", [model.prior_sd])
        self.set_value("loc_lo", np.zeros(1))
        self.set_value("sd_lo", [1e-3])
        self.set_value("loc_hi", np.zeros(1))
        self.set_value("sd_hi", [1e-3])

    def mean_sd(self, cond, d):
        y = np.atleast_1d(np.asarray(cond, dtype=float))
        lo, hi = _atoms(y, self.eps)
        eta = _eta_hat(y, d, self.eps)
        w = self.value("weight")
        m = (
            w * eta
            + (1.0 - w) * self.prior_mean
            + self.value("loc_lo") * lo
            + self.value("loc_hi") * hi
        )
        var = (
            self.value("sd") ** 2
            + self.value("sd_lo") ** 2 * lo
            + self.value("sd_hi") ** 2 * hi
        )
        return m, np.sqrt(var)

    def mean_sd_jacs(self, cond, d):
        y = np.atleast_1d(np.asarray(cond, dtype=float))
        lo, hi = _atoms(y, self.eps)
        eta = _eta_hat(y, d, self.eps)
        n = y.shape[0]
        dm = np.zeros((n, self.n_params))
        ds = np.zeros((n, self.n_params))
        _, s = self.mean_sd(cond, d)
        dm[:, self.block_slice("weight")] = (eta - self.prior_mean)[:, None]
        dm[:, self.block_slice("loc_lo")] = lo[:, None]
        dm[:, self.block_slice("loc_hi")] = hi[:, None]
        # variance terms: d sd / d log sd_x = sd_x^2 * 1{atom} / sd
        ds[:, self.block_slice("sd")] = (self.value("sd") ** 2 / s)[:, None]
        ds[:, self.block_slice("sd_lo")] = (self.value("sd_lo") ** 2 * lo / s)[:, None]
        ds[:, self.block_slice("sd_hi")] = (self.value("sd_hi") ** 2 * hi / s)[:, None]
        return dm, ds


class CensoredMarginalGuide(Guide):
    """Push-forward of N(loc, sd^2) through the censored sigmoid; the
    marginal family for the preference and mixed-effects models."""

    family = "censored_marginal"
    role = "marginal"

    def __init__(self, model):
        self.model_name = model.name
        self.eps = model.eps
        super().__init__([("loc", Identity(())), ("sd", Positive(()))])
        self.set_value("loc", np.zeros(1))
        self.set_value("sd", [1.0])

    def log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        return censored_head_log_prob(y, self.value("loc"), self.value("sd"), self.eps)

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        m, s = self.value("loc"), self.value("sd")
        d_mean, d_sd = censored_head_grads(y, m, s, self.eps)
        g = np.zeros((y.shape[0], self.n_params))
        g[:, self.block_slice("loc")] = d_mean[:, None]
        g[:, self.block_slice("sd")] = (d_sd * s)[:, None]
        return g

    def set_moments(self, loc, sd):
        self.set_value("loc", [loc])
        self.set_value("sd", [max(sd, 1e-6)])
        return self


class PreferenceLfireCritic(Critic):
    """log ratio b - lam (eta_hat - delta)^2 + atom offsets."""

    family = "preference_lfire"
    model_name = "preference"
    role = "lfire"

    def __init__(self, model):
        self.eps = model.eps
        super().__init__(
            [
                ("bias", Identity(())),
                ("lam", Identity(())),
                ("delta", Identity(())),
                ("bias_lo", Identity(())),
                ("bias_hi", Identity(())),
            ]
        )

    def log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        lo, hi = _atoms(y, self.eps)
        eta = _eta_hat(y, d, self.eps)
        r = eta - self.value("delta")
        return (
            self.value("bias")
            - self.value("lam") * r * r
            + self.value("bias_lo") * lo
            + self.value("bias_hi") * hi
        )

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        lo, hi = _atoms(y, self.eps)
        eta = _eta_hat(y, d, self.eps)
        r = eta - self.value("delta")
        g = np.zeros((y.shape[0], self.n_params))
        g[:, self.block_slice("bias")] = 1.0
        g[:, self.block_slice("lam")] = (-r * r)[:, None]
        g[:, self.block_slice("delta")] = (2.0 * self.value("lam") * r)[:, None]
        g[:, self.block_slice("bias_lo")] = lo[:, None]
        g[:, self.block_slice("bias_hi")] = hi[:, None]
        return g

    def lfire_features(self, y, d):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo, hi = _atoms(y, self.eps)
        eta = _eta_hat(y, d, self.eps)
        return np.stack([eta, eta * eta, lo, hi], axis=1)


class PreferenceDvCritic(Critic):
    """T = -lam(y) (eta_hat - delta(y))^2 + atom offsets, with lam and delta
    shifted at the censoring atoms."""

    family = "preference_dv"
    model_name = "preference"
    role = "dv"

    _names = ("bias_lo", "bias_hi", "delta0", "delta_lo", "delta_hi", "lam0", "lam_lo", "lam_hi")

    def __init__(self, model):
        self.eps = model.eps
        super().__init__([(n, Identity(())) for n in self._names])

    def _pieces(self, y, theta, d):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo, hi = _atoms(y, self.eps)
        eta = _eta_hat(y, d, self.eps)
        lam = self.value("lam0") + self.value("lam_lo") * lo + self.value("lam_hi") * hi
        delta = (
            self.value("delta0")
            + self.value("delta_lo") * lo
            + self.value("delta_hi") * hi
        )
        # residual between the inverted response and the latent it estimates
        r = eta - np.atleast_2d(theta)[:, 0] - delta
        return y, lo, hi, lam, delta, r

    def log_prob(self, target, cond, d):
        y, lo, hi, lam, _, r = self._pieces(target, cond, d)
        return -lam * r * r + self.value("bias_lo") * lo + self.value("bias_hi") * hi

    def grad_log_prob(self, target, cond, d):
        y, lo, hi, lam, _, r = self._pieces(target, cond, d)
        g = np.zeros((y.shape[0], self.n_params))
        r2 = r * r
        g[:, self.block_slice("lam0")] = (-r2)[:, None]
        g[:, self.block_slice("lam_lo")] = (-r2 * lo)[:, None]
        g[:, self.block_slice("lam_hi")] = (-r2 * hi)[:, None]
        dd = 2.0 * lam * r
        g[:, self.block_slice("delta0")] = dd[:, None]
        g[:, self.block_slice("delta_lo")] = (dd * lo)[:, None]
        g[:, self.block_slice("delta_hi")] = (dd * hi)[:, None]
        g[:, self.block_slice("bias_lo")] = lo[:, None]
        g[:, self.block_slice("bias_hi")] = hi[:, None]
        return g
