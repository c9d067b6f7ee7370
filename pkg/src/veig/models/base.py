"""Common probabilistic-model interface for the benchmark models.

A model owns a prior over the target latent block, a likelihood simulator,
and (when tractable) the explicit likelihood density.  Latents are stored as
float arrays of shape (n, theta_dim); observations are model specific.
Models are immutable after construction and all operations are pure given an
RNG, so they may be used concurrently without restriction.
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError, ImplicitLikelihood

__all__ = ["ProbModel", "DesignGrid", "DesignBounds", "psd_sqrt"]


class DesignGrid:
    """Finite design space: an explicit list of design points."""

    def __init__(self, designs):
        self.designs = list(designs)

    def __len__(self):
        return len(self.designs)

    def __iter__(self):
        return iter(self.designs)

    def __getitem__(self, i):
        return self.designs[i]


class DesignBounds:
    """Box-constrained continuous design space."""

    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        if self.low.shape != self.high.shape or np.any(self.low >= self.high):
            raise ValueError("need elementwise low < high")

    @property
    def dim(self):
        return self.low.size

    def contains(self, d):
        d = np.asarray(d, dtype=float)
        return d.shape == self.low.shape and bool(
            np.all(d >= self.low) and np.all(d <= self.high)
        )


def psd_sqrt(cov):
    """Lower-triangular-ish factor L with L L^T = cov, tolerating PSD inputs.

    Uses Cholesky when the matrix is PD and falls back to an eigenvalue
    square root for singular covariances (e.g. a point-mass prior).
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        w = np.clip(w, 0.0, None)
        return v * np.sqrt(w)


class ProbModel:
    """Base class; subclasses fill in the sampling/density contract."""

    name: str = ""
    theta_dim: int = 0
    implicit: bool = False

    # -- prior ---------------------------------------------------------
    def sample_prior(self, n, rng):
        raise NotImplementedError

    def prior_log_prob(self, theta):
        raise NotImplementedError

    def prior_entropy(self):
        raise NotImplementedError

    # -- likelihood ----------------------------------------------------
    def simulate(self, theta, d, rng):
        """Draw y ~ p(y | theta, d), one row per row of theta."""
        raise NotImplementedError

    def log_likelihood(self, theta, d, y):
        """Exact log p(y | theta, d); ImplicitLikelihood when intractable."""
        if self.implicit:
            raise ImplicitLikelihood(
                f"{self.name} has an implicit likelihood; use a posterior or "
                "marginal+likelihood estimator"
            )
        raise NotImplementedError

    def sample_joint(self, d, n, rng):
        """n i.i.d. draws (theta, y); nuisance blocks are marginalized out."""
        self.validate_design(d)
        theta = self.sample_prior(n, rng)
        y = self.simulate(theta, d, rng)
        return theta, y

    # -- optional analytic derivatives (Laplace / VNMC) ------------------
    def grad_log_joint(self, theta, d, y):
        """d/dtheta [log p(theta) + log p(y|theta,d)], or None if unavailable."""
        return None

    def hess_log_joint(self, theta, d, y):
        return None

    # -- designs ---------------------------------------------------------
    def validate_design(self, d):
        space = self.design_space
        if isinstance(space, DesignGrid):
            return
        if isinstance(space, DesignBounds) and not space.contains(d):
            raise DomainError(f"design {d!r} outside bounds for {self.name}")

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r}>"
