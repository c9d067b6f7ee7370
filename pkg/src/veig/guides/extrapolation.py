"""Bernoulli-logit guides and the bilinear critic for the extrapolation model."""

from __future__ import annotations

import numpy as np

from .base import Critic, Guide, Identity


def _bern_log_prob(t, logits):
    # t in {0,1}: t*l - log(1 + e^l), stable via logaddexp
    return t * logits - np.logaddexp(0.0, logits)


def _sigmoid(x):
    from scipy.special import expit

    return expit(x)


class ExtrapolationPosteriorGuide(Guide):
    """q(theta | y) = Bernoulli(sigmoid(l_y)), one logit per observed label."""

    family = "extrapolation_posterior"
    model_name = "extrapolation"
    role = "posterior"

    def __init__(self, model):
        super().__init__([("logit_y0", Identity(())), ("logit_y1", Identity(()))])

    def _logits(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.value("logit_y1") * y + self.value("logit_y0") * (1.0 - y), y

    def log_prob(self, target, cond, d):
        t = np.atleast_2d(target)[:, 0]
        logits, _ = self._logits(cond)
        return _bern_log_prob(t, logits)

    def grad_log_prob(self, target, cond, d):
        t = np.atleast_2d(target)[:, 0]
        logits, y = self._logits(cond)
        dl = t - _sigmoid(logits)
        g = np.zeros((t.shape[0], self.n_params))
        g[:, self.block_slice("logit_y0")] = (dl * (1.0 - y))[:, None]
        g[:, self.block_slice("logit_y1")] = (dl * y)[:, None]
        return g


class ExtrapolationMarginalGuide(Guide):
    """q(y) = Bernoulli(sigmoid(l))."""

    family = "extrapolation_marginal"
    model_name = "extrapolation"
    role = "marginal"

    def __init__(self, model):
        super().__init__([("logit", Identity(()))])

    def log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        return _bern_log_prob(y, self.value("logit") * np.ones_like(y))

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        dl = y - _sigmoid(self.value("logit"))
        return dl[:, None]


class ExtrapolationLikelihoodGuide(Guide):
    """q(y | theta) = Bernoulli(sigmoid(l_theta)), one logit per label."""

    family = "extrapolation_likelihood"
    model_name = "extrapolation"
    role = "likelihood"

    def __init__(self, model):
        super().__init__([("logit_t0", Identity(())), ("logit_t1", Identity(()))])

    def _logits(self, theta):
        t = np.atleast_2d(theta)[:, 0]
        return self.value("logit_t1") * t + self.value("logit_t0") * (1.0 - t), t

    def log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        logits, _ = self._logits(cond)
        return _bern_log_prob(y, logits)

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        logits, t = self._logits(cond)
        dl = y - _sigmoid(logits)
        g = np.zeros((y.shape[0], self.n_params))
        g[:, self.block_slice("logit_t0")] = (dl * (1.0 - t))[:, None]
        g[:, self.block_slice("logit_t1")] = (dl * t)[:, None]
        return g


class ExtrapolationDvCritic(Critic):
    """T = w_y y + w_t theta + w_yt y theta."""

    family = "extrapolation_dv"
    model_name = "extrapolation"
    role = "dv"

    def __init__(self, model):
        super().__init__(
            [("w_y", Identity(())), ("w_t", Identity(())), ("w_yt", Identity(()))]
        )

    def log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        t = np.atleast_2d(cond)[:, 0]
        return self.value("w_y") * y + self.value("w_t") * t + self.value("w_yt") * y * t

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        t = np.atleast_2d(cond)[:, 0]
        return np.stack([y, t, y * t], axis=1)
