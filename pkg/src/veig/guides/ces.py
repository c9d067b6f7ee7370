"""Marginal family for the CES model: point masses on the two slider
end-points mixed with an interior sigmoid-transformed Gaussian."""

from __future__ import annotations

import numpy as np
from scipy import special

from .base import Guide, Identity, Positive, SimplexPoint, norm_logpdf


class CESMarginalGuide(Guide):
    """q(y) = p0 delta_eps + p1 delta_{1-eps} + (1-p0-p1) * interior density.

    The interior component is the push-forward of N(loc, sd^2) through the
    censored sigmoid restricted (and renormalized) to the open interval, so
    the atom masses are exactly p0 and p1.
    """

    family = "ces_marginal"
    model_name = "ces"
    role = "marginal"

    def __init__(self, model):
        self.eps = model.eps
        self._simplex = SimplexPoint(3)
        super().__init__(
            [("loc", Identity(())), ("sd", Positive(())), ("mix", self._simplex)]
        )
        self.set_value("loc", np.zeros(1))
        self.set_value("sd", [1.0])
        self.set_value("mix", np.array([0.2, 0.2, 0.6]))

    def _interior_bounds(self, m, s):
        lo, hi = special.logit(self.eps), special.logit(1.0 - self.eps)
        z_lo, z_hi = (lo - m) / s, (hi - m) / s
        log_z = np.log(special.ndtr(z_hi) - special.ndtr(z_lo))
        return z_lo, z_hi, log_z

    def log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        m, s = self.value("loc"), self.value("sd")
        p = self.value("mix")
        z_lo, z_hi, log_z = self._interior_bounds(m, s)
        yc = np.clip(y, self.eps, 1.0 - self.eps)
        x = special.logit(yc)
        interior = (
            np.log(p[2])
            + norm_logpdf((x - m) / s)
            - np.log(s)
            - np.log(yc * (1.0 - yc))
            - log_z
        )
        out = np.where(y <= self.eps, np.log(p[0]), interior)
        return np.where(y >= 1.0 - self.eps, np.log(p[1]), out)

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_1d(np.asarray(target, dtype=float))
        m, s = self.value("loc"), self.value("sd")
        p = self.value("mix")
        jac = self._simplex.jacobian(self.raw("mix"))  # (3, 2)
        z_lo, z_hi, log_z = self._interior_bounds(m, s)
        z_mass = np.exp(log_z)
        n = y.shape[0]
        g = np.zeros((n, self.n_params))
        at_lo = y <= self.eps
        at_hi = y >= 1.0 - self.eps
        inside = ~(at_lo | at_hi)
        mix_sl = self.block_slice("mix")
        g[at_lo, mix_sl] = jac[0] / p[0]
        g[at_hi, mix_sl] = jac[1] / p[1]
        if np.any(inside):
            x = special.logit(y[inside])
            r = (x - m) / s
            # d/dm, d/ds of the interior normal part
            d_m = r / s
            d_s = (r * r - 1.0) / s
            # renormalization: -log Z with Z = Phi(z_hi) - Phi(z_lo)
            pdf_lo, pdf_hi = np.exp(norm_logpdf(z_lo)), np.exp(norm_logpdf(z_hi))
            d_m = d_m + (pdf_hi - pdf_lo) / (s * z_mass)
            d_s = d_s + (pdf_hi * z_hi - pdf_lo * z_lo) / (s * z_mass)
            g[inside, self.block_slice("loc")] = d_m[:, None]
            g[inside, self.block_slice("sd")] = (d_s * s)[:, None]
            g[inside, mix_sl] = jac[2] / p[2]
        return g
