"""Extrapolation: predict a label at an unreachable point of design space.

A shared 2-dim latent psi drives two Bernoulli variables: theta, the label at
a fixed probe location, and y, the label observed at the chosen design.  The
pair (theta, y) is cheap to sample jointly, but y cannot be sampled given
theta alone, and the likelihood density is implicit.  Both sample spaces are
binary, so exact enumeration (with quadrature over psi) is available to
oracles via :meth:`joint_table`.
"""

from __future__ import annotations

import numpy as np

from ..dists import sigmoid
from ..errors import CapabilityError, ImplicitLikelihood, ParameterError
from ..rng import as_generator
from .base import DesignGrid, ProbModel, psd_sqrt

X_PROBE = np.array([1.0, -0.5])


class ExtrapolationModel(ProbModel):
    name = "extrapolation"
    theta_dim = 1
    implicit = True

    def __init__(
        self,
        psi_mean=(0.0, 0.0),
        psi_cov=((1.0, 0.0), (0.0, 1.0)),
        design_grid_size=11,
        design_low=-2.0,
        design_high=2.0,
        quad_order=64,
    ):
        self.psi_mean = np.asarray(psi_mean, dtype=float)
        self.psi_cov = np.asarray(psi_cov, dtype=float)
        if self.psi_mean.shape != (2,) or self.psi_cov.shape != (2, 2):
            raise ParameterError("psi prior must be 2-dimensional")
        self._psi_chol = psd_sqrt(self.psi_cov)
        self.quad_order = int(quad_order)
        self.design_space = DesignGrid(
            np.linspace(design_low, design_high, int(design_grid_size))
        )
        self._prior_theta1 = None

    def design_vector(self, d):
        return np.array([-1.0, float(d)])

    # -- quadrature over psi ------------------------------------------------
    def _psi_nodes(self, order=None):
        order = order or self.quad_order
        x, w = np.polynomial.hermite_e.hermegauss(order)
        w = w / np.sqrt(2.0 * np.pi)
        z1, z2 = np.meshgrid(x, x, indexing="ij")
        z = np.stack([z1.ravel(), z2.ravel()], axis=1)
        psi = self.psi_mean + z @ self._psi_chol.T
        weights = np.outer(w, w).ravel()
        return psi, weights

    def joint_table(self, d, order=None):
        """Exact p(theta, y | d) on {0,1}^2 via 2-D Gauss-Hermite quadrature."""
        psi, w = self._psi_nodes(order)
        p_theta = sigmoid(psi @ X_PROBE)
        p_y = sigmoid(psi @ self.design_vector(d))
        table = np.empty((2, 2))
        for t in (0, 1):
            pt = p_theta if t else 1.0 - p_theta
            for yy in (0, 1):
                py = p_y if yy else 1.0 - p_y
                table[t, yy] = np.sum(w * pt * py)
        return table / table.sum()

    def prior_theta_prob(self):
        """p(theta = 1), by quadrature (cached)."""
        if self._prior_theta1 is None:
            psi, w = self._psi_nodes()
            self._prior_theta1 = float(np.sum(w * sigmoid(psi @ X_PROBE)))
        return self._prior_theta1

    # -- prior ---------------------------------------------------------------
    def sample_prior(self, n, rng):
        g = as_generator(rng)
        return (g.random(n) < self.prior_theta_prob()).astype(float)[:, None]

    def prior_log_prob(self, theta):
        th = np.atleast_2d(theta)[:, 0]
        p1 = self.prior_theta_prob()
        return np.where(th == 1.0, np.log(p1), np.log1p(-p1))

    def prior_entropy(self):
        p1 = self.prior_theta_prob()
        return float(-p1 * np.log(p1) - (1 - p1) * np.log1p(-p1))

    # -- joint sampling --------------------------------------------------------
    def sample_joint(self, d, n, rng):
        self.validate_design(d)
        g = as_generator(rng)
        psi = self.psi_mean + g.standard_normal((n, 2)) @ self._psi_chol.T
        theta = (g.random(n) < sigmoid(psi @ X_PROBE)).astype(float)[:, None]
        y = (g.random(n) < sigmoid(psi @ self.design_vector(d))).astype(float)
        return theta, y

    def simulate(self, theta, d, rng):
        raise CapabilityError(
            "extrapolation admits joint (theta, y) sampling only; y cannot be "
            "drawn conditionally on theta"
        )

    def log_likelihood(self, theta, d, y):
        raise ImplicitLikelihood(
            "extrapolation marginalizes the shared latent; the likelihood "
            "density is not evaluable"
        )
