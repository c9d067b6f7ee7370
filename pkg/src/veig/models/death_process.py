"""Death process: constant-rate infection counts at two measurement times.

A population of fixed size starts healthy; each individual becomes infected
at rate b (log-normal prior).  The design is the pair of observation times
(t1, t2) with 0 <= t1 <= t2; the observation is the pair of infected counts
(I1, I2).  The likelihood has a closed trinomial form, and the outcome space
is finite, so quadrature oracles are exact.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from ..dists import LogNormal
from ..errors import DomainError, ParameterError
from ..rng import as_generator
from .base import DesignGrid, ProbModel


def default_design_grid(n=5):
    t1 = np.linspace(0.4, 2.0, n)
    dt = np.linspace(0.4, 2.0, n)
    return [(round(float(a), 6), round(float(a + b), 6)) for a in t1 for b in dt]


class DeathProcessModel(ProbModel):
    name = "death_process"
    theta_dim = 1
    implicit = False

    def __init__(self, population=10, log_rate_mean=0.0, log_rate_sd=0.25):
        if population < 1:
            raise ParameterError("population must be >= 1")
        if log_rate_sd <= 0:
            raise ParameterError("log-rate sd must be positive")
        self.population = int(population)
        self.log_rate_mean = float(log_rate_mean)
        self.log_rate_sd = float(log_rate_sd)
        self.design_space = DesignGrid(default_design_grid())

    def validate_design(self, d):
        t1, t2 = d
        if not (0.0 <= t1 <= t2):
            raise DomainError(f"need 0 <= t1 <= t2, got {d!r}")

    def outcomes(self):
        """All observable (I1, I2) pairs with 0 <= I1 <= I2 <= population."""
        n = self.population
        return [(i1, i2) for i1 in range(n + 1) for i2 in range(i1, n + 1)]

    # -- prior -------------------------------------------------------------
    def _prior(self):
        return LogNormal(self.log_rate_mean, self.log_rate_sd)

    def sample_prior(self, n, rng):
        return self._prior().sample(rng, n)[:, None]

    def prior_log_prob(self, theta):
        return self._prior().log_prob(np.atleast_2d(theta)[:, 0])

    def prior_entropy(self):
        return self._prior().entropy()

    # -- likelihood -----------------------------------------------------------
    def simulate(self, theta, d, rng):
        self.validate_design(d)
        g = as_generator(rng)
        t1, t2 = d
        b = np.atleast_2d(theta)[:, 0]
        p1 = -np.expm1(-b * t1)
        i1 = g.binomial(self.population, p1)
        p2 = -np.expm1(-b * (t2 - t1))
        i2 = i1 + g.binomial(self.population - i1, p2)
        return np.stack([i1, i2], axis=1).astype(float)

    def log_likelihood(self, theta, d, y):
        self.validate_design(d)
        t1, t2 = d
        b = np.atleast_2d(theta)[:, 0]
        y = np.atleast_2d(y)
        i1, i2 = y[:, 0], y[:, 1]
        n = self.population
        if np.any((i1 < 0) | (i1 > i2) | (i2 > n)):
            raise DomainError("counts must satisfy 0 <= I1 <= I2 <= population")
        log_comb = (
            gammaln(n + 1) - gammaln(i1 + 1) - gammaln(i2 - i1 + 1) - gammaln(n - i2 + 1)
        )
        # survival factors exp(-b t) enter with exponents (I2-I1) and (N-I2)
        lp1 = _log1mexp(b * t1)
        lp2 = _log1mexp(b * (t2 - t1))
        return (
            log_comb
            + _xlog(i1, lp1)
            + _xlog(i2 - i1, lp2)
            - b * t1 * (i2 - i1)
            - b * t2 * (n - i2)
        )

    def grad_log_joint(self, theta, d, y):
        t1, t2 = d
        b = np.atleast_2d(theta)[:, 0]
        y = np.atleast_2d(y)
        i1, i2 = y[:, 0], y[:, 1]
        n = self.population
        dt = t2 - t1
        g = (
            i1 * _rate_term(b, t1)
            + (i2 - i1) * _rate_term(b, dt)
            - t1 * (i2 - i1)
            - t2 * (n - i2)
        )
        log_b = np.log(b)
        g_prior = -1.0 / b - (log_b - self.log_rate_mean) / (self.log_rate_sd**2 * b)
        return (g + g_prior)[:, None]

    def hess_log_joint(self, theta, d, y):
        t1, t2 = d
        b = np.atleast_2d(theta)[:, 0]
        y = np.atleast_2d(y)
        i1, i2 = y[:, 0], y[:, 1]
        dt = t2 - t1
        h = i1 * _rate_term_deriv(b, t1) + (i2 - i1) * _rate_term_deriv(b, dt)
        log_b = np.log(b)
        s2 = self.log_rate_sd**2
        h_prior = 1.0 / b**2 - (1.0 - (log_b - self.log_rate_mean)) / (s2 * b**2)
        return (h + h_prior)[:, None, None]


def _log1mexp(x):
    """log(1 - exp(-x)) for x >= 0, stable near both ends."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        small = np.log(-np.expm1(-x))
        large = np.log1p(-np.exp(-x))
    return np.where(x < 0.693, small, large)


def _xlog(k, log_p):
    """k * log_p treating k == 0 as 0 even when log_p = -inf."""
    return np.where(k == 0, 0.0, k * log_p)


def _rate_term(b, t):
    """d/db log(1 - exp(-b t)) = t exp(-b t) / (1 - exp(-b t))."""
    if t == 0.0:
        return np.zeros_like(b)
    e = np.exp(-b * t)
    return t * e / (1.0 - e)


def _rate_term_deriv(b, t):
    """Second derivative of log(1 - exp(-b t)) in b."""
    if t == 0.0:
        return np.zeros_like(b)
    e = np.exp(-b * t)
    return -(t**2) * e / (1.0 - e) ** 2
