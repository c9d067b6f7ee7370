"""Posterior families for the death process.

The outcome space is the finite set of count pairs, so the guides keep a
separate (location, scale) per outcome: the amortization-free setting the
death-process study calls for.  Two families are provided for the infection
rate: log-normal (matches the true posterior shape well) and positive-
truncated normal (the deliberately misspecified comparison)."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .base import Guide, Identity, Positive, ndtr_ratio

_LOG_2PI = math.log(2.0 * math.pi)


class _PerOutcomeGuide(Guide):
    def __init__(self, model):
        self.outcomes = model.outcomes()
        self._index = {o: i for i, o in enumerate(self.outcomes)}
        k = len(self.outcomes)
        super().__init__([("loc", Identity((k,))), ("sd", Positive((k,)))])

    def outcome_index(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float)).astype(int)
        return np.array([self._index[(int(a), int(b))] for a, b in y])


class DeathLogNormalGuide(_PerOutcomeGuide):
    """q(b | y) log-normal with per-outcome parameters."""

    family = "death_lognormal"
    model_name = "death_process"
    role = "posterior"

    def __init__(self, model):
        super().__init__(model)
        k = len(self.outcomes)
        # start at the prior over the rate
        self.set_value("loc", np.full(k, model.log_rate_mean))
        self.set_value("sd", np.full(k, model.log_rate_sd))

    def log_prob(self, target, cond, d):
        b = np.atleast_2d(target)[:, 0]
        idx = self.outcome_index(cond)
        mu = self.value("loc")[idx]
        sd = self.value("sd")[idx]
        z = (np.log(b) - mu) / sd
        return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI - np.log(b)

    def grad_log_prob(self, target, cond, d):
        b = np.atleast_2d(target)[:, 0]
        idx = self.outcome_index(cond)
        mu = self.value("loc")[idx]
        sd = self.value("sd")[idx]
        z = (np.log(b) - mu) / sd
        n = b.shape[0]
        g = np.zeros((n, self.n_params))
        loc_sl, sd_sl = self.block_slice("loc"), self.block_slice("sd")
        g[np.arange(n), loc_sl.start + idx] = z / sd
        g[np.arange(n), sd_sl.start + idx] = z * z - 1.0
        return g


class DeathTruncatedNormalGuide(_PerOutcomeGuide):
    """q(b | y) normal truncated to b > 0, per-outcome parameters."""

    family = "death_truncnormal"
    model_name = "death_process"
    role = "posterior"

    def __init__(self, model):
        super().__init__(model)
        k = len(self.outcomes)
        # moment-match the log-normal prior
        m = math.exp(model.log_rate_mean + 0.5 * model.log_rate_sd**2)
        v = (math.exp(model.log_rate_sd**2) - 1.0) * m * m
        self.set_value("loc", np.full(k, m))
        self.set_value("sd", np.full(k, math.sqrt(v)))

    def log_prob(self, target, cond, d):
        b = np.atleast_2d(target)[:, 0]
        idx = self.outcome_index(cond)
        mu = self.value("loc")[idx]
        sd = self.value("sd")[idx]
        z = (b - mu) / sd
        return (
            -0.5 * z * z
            - np.log(sd)
            - 0.5 * _LOG_2PI
            - special.log_ndtr(mu / sd)
        )

    def grad_log_prob(self, target, cond, d):
        b = np.atleast_2d(target)[:, 0]
        idx = self.outcome_index(cond)
        mu = self.value("loc")[idx]
        sd = self.value("sd")[idx]
        z = (b - mu) / sd
        ratio = ndtr_ratio(mu / sd)
        n = b.shape[0]
        g = np.zeros((n, self.n_params))
        loc_sl, sd_sl = self.block_slice("loc"), self.block_slice("sd")
        g[np.arange(n), loc_sl.start + idx] = z / sd - ratio / sd
        g[np.arange(n), sd_sl.start + idx] = (z * z - 1.0) + ratio * mu / sd
        return g
