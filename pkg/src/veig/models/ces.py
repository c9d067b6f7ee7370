"""Constant-elasticity-of-substitution preferences over baskets of goods.

The agent compares two baskets of three commodities and reports a slider
value driven by the difference in CES utilities.  Latents are theta =
(rho, alpha_1..3, u): the elasticity, the commodity weights (simplex), and a
response-magnitude scale.  Response noise grows with basket distance, so
very different baskets give noisy answers and near-identical baskets give
predictably indifferent ones.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from ..dists import CensoredSigmoidNormal, logit
from ..errors import DomainError, ParameterError
from ..rng import as_generator
from .base import DesignBounds, ProbModel

RHO, ALPHA, U = 0, slice(1, 4), 4


def ces_utility(x, rho, alpha):
    """CES utility (sum_i x_i^rho alpha_i)^(1/rho); rho must be nonzero."""
    x = np.asarray(x, dtype=float)
    rho = np.asarray(rho, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(x < 0):
        raise DomainError("basket quantities must be non-negative")
    if np.any(rho == 0):
        raise DomainError("rho = 0 (Cobb-Douglas limit) is not supported")
    powered = np.power(x, rho[..., None]) if rho.ndim else np.power(x, rho)
    inner = np.sum(powered * alpha, axis=-1)
    return np.power(inner, 1.0 / rho)


class CESModel(ProbModel):
    name = "ces"
    theta_dim = 5
    implicit = False

    def __init__(
        self,
        rho_conc=(1.0, 1.0),
        alpha_conc=(1.0, 1.0, 1.0),
        log_u_mean=1.0,
        log_u_sd=3.0,
        noise_sd=0.005,
        eps=0.005,
        basket_max=100.0,
    ):
        if log_u_sd <= 0 or noise_sd <= 0:
            raise ParameterError("scales must be positive")
        self.rho_conc = tuple(float(c) for c in rho_conc)
        self.alpha_conc = np.asarray(alpha_conc, dtype=float)
        self.log_u_mean = float(log_u_mean)
        self.log_u_sd = float(log_u_sd)
        self.noise_sd = float(noise_sd)
        self.eps = float(eps)
        self.basket_max = float(basket_max)
        self.design_space = DesignBounds(np.zeros(6), np.full(6, self.basket_max))

    @staticmethod
    def split_design(d):
        d = np.asarray(d, dtype=float)
        if d.shape != (6,):
            raise DomainError("a CES design is a pair of 3-good baskets")
        return d[:3], d[3:]

    # -- prior -------------------------------------------------------------
    def sample_prior(self, n, rng):
        g = as_generator(rng)
        rho = g.beta(*self.rho_conc, size=n)
        alpha = g.dirichlet(self.alpha_conc, size=n)
        u = np.exp(self.log_u_mean + self.log_u_sd * g.standard_normal(n))
        return np.column_stack([rho, alpha, u])

    def prior_log_prob(self, theta):
        theta = np.atleast_2d(theta)
        rho, alpha, u = theta[:, RHO], theta[:, ALPHA], theta[:, U]
        from scipy import stats

        lp = stats.beta.logpdf(rho, *self.rho_conc)
        lp = lp + stats.dirichlet.logpdf(alpha.T, self.alpha_conc)
        z = (np.log(u) - self.log_u_mean) / self.log_u_sd
        lp = lp - 0.5 * z * z - np.log(self.log_u_sd * u) - 0.5 * np.log(2 * np.pi)
        return lp

    # -- likelihood -----------------------------------------------------------
    def utility_gap(self, theta, d):
        xa, xb = self.split_design(d)
        theta = np.atleast_2d(theta)
        rho, alpha = theta[:, RHO], theta[:, ALPHA]
        return ces_utility(xa, rho, alpha) - ces_utility(xb, rho, alpha)

    def response_dist(self, theta, d):
        xa, xb = self.split_design(d)
        theta = np.atleast_2d(theta)
        u = theta[:, U]
        gap = self.utility_gap(theta, d)
        spread = 1.0 + np.linalg.norm(xa - xb)
        return CensoredSigmoidNormal(u * gap, self.noise_sd * u * spread, self.eps)

    def simulate(self, theta, d, rng):
        self.validate_design(d)
        return self.response_dist(theta, d).sample(rng)

    def log_likelihood(self, theta, d, y):
        self.validate_design(d)
        return self.response_dist(theta, d).log_prob(np.asarray(y, dtype=float))

    def history_log_lik_u(self, theta, designs, ys):
        """Vectorized over a whole history: summed log-likelihood and its
        u-derivative for theta rows against (designs, ys) pairs.

        Returns (ll_sum, du_sum), both shape (n,).  This is the hot path of
        the sequential posterior refits.
        """
        theta = np.atleast_2d(theta)
        designs = np.atleast_2d(np.asarray(designs, dtype=float))  # (T, 6)
        ys = np.atleast_1d(np.asarray(ys, dtype=float))  # (T,)
        rho, alpha, u = theta[:, RHO], theta[:, ALPHA], theta[:, U]
        xa, xb = designs[:, :3], designs[:, 3:]
        # utilities, shape (n, T)
        pa = np.power(xa[None, :, :], rho[:, None, None])
        pb = np.power(xb[None, :, :], rho[:, None, None])
        ua = np.power(np.sum(pa * alpha[:, None, :], axis=-1), 1.0 / rho[:, None])
        ub = np.power(np.sum(pb * alpha[:, None, :], axis=-1), 1.0 / rho[:, None])
        gap = ua - ub
        spread = 1.0 + np.linalg.norm(xa - xb, axis=1)  # (T,)
        mean = u[:, None] * gap
        sd = self.noise_sd * u[:, None] * spread[None, :]
        lo, hi = logit(self.eps), logit(1.0 - self.eps)
        y2 = np.broadcast_to(ys[None, :], mean.shape)
        at_lo = y2 <= self.eps
        at_hi = y2 >= 1.0 - self.eps
        inside = ~(at_lo | at_hi)
        ll = np.empty_like(mean)
        du = np.empty_like(mean)
        u2 = np.broadcast_to(u[:, None], mean.shape)
        if np.any(inside):
            x = logit(np.clip(y2[inside], self.eps, 1.0 - self.eps))
            r = x - mean[inside]
            s = sd[inside]
            ll[inside] = (
                -0.5 * (r / s) ** 2
                - np.log(s)
                - 0.5 * np.log(2 * np.pi)
                - np.log(y2[inside] * (1.0 - y2[inside]))
            )
            du[inside] = (
                -1.0 / u2[inside]
                + r * gap[inside] / s**2
                + r**2 / (s**2 * u2[inside])
            )
        for mask, edge, sign in ((at_lo, lo, 1.0), (at_hi, hi, -1.0)):
            if not np.any(mask):
                continue
            z = sign * (edge - mean[mask]) / sd[mask]
            ll[mask] = special.log_ndtr(z)
            ratio = np.exp(
                -0.5 * z * z - 0.5 * np.log(2 * np.pi) - special.log_ndtr(z)
            )
            dz_du = sign * (
                -gap[mask] / sd[mask] - (edge - mean[mask]) / (sd[mask] * u2[mask])
            )
            du[mask] = ratio * dz_du
        return ll.sum(axis=1), du.sum(axis=1)

    def grad_log_lik_u(self, theta, d, y):
        """d/du log p(y | theta, d): the pathwise piece the posterior VI needs.

        Both the response mean (u * gap) and scale (proportional to u) move
        with u; the atoms use the normal-cdf chain rule.
        """
        theta = np.atleast_2d(theta)
        y = np.asarray(y, dtype=float)
        xa, xb = self.split_design(d)
        u = theta[:, U]
        gap = self.utility_gap(theta, d)
        spread = 1.0 + np.linalg.norm(xa - xb)
        s = self.noise_sd * u * spread  # d s / d u = s / u
        mean = u * gap  # d mean / d u = gap
        lo, hi = logit(self.eps), logit(1.0 - self.eps)
        out = np.empty_like(u)
        at_lo = y <= self.eps
        at_hi = y >= 1.0 - self.eps
        interior = ~(at_lo | at_hi)
        if np.any(interior):
            x = logit(y[interior])
            r = x - mean[interior]
            si, ui = s[interior], u[interior]
            # d/du [-log s - r^2/(2 s^2)] with ds/du = s/u, dr/du = -gap
            out[interior] = (
                -1.0 / ui + r * gap[interior] / si**2 + r**2 / (si**2 * ui)
            )
        for mask, edge, sign in ((at_lo, lo, 1.0), (at_hi, hi, -1.0)):
            if not np.any(mask):
                continue
            z = (edge - mean[mask]) / s[mask]
            z = z * sign  # log Phi(z) at the low atom, log Phi(-z) at the high
            ratio = np.exp(
                -0.5 * z * z - 0.5 * np.log(2 * np.pi) - special.log_ndtr(z)
            )
            dz_du = sign * (-gap[mask] / s[mask] - (edge - mean[mask]) / (s[mask] * u[mask]))
            out[mask] = ratio * dz_du
        return out
