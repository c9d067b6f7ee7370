"""Mixed effects regression for the two-image comparison task.

Population-level fixed effects (theta, 6-dim, the EIG target) combine with
per-participant random effects (psi, 6-dim) and a per-participant response
gain k through a censored-sigmoid link.  Marginalizing the random effects
makes the likelihood implicit: it can be simulated but not evaluated.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..dists import CensoredSigmoidNormal, MultivariateNormal
from ..errors import DomainError, ImplicitLikelihood, ParameterError
from ..rng import as_generator
from .base import DesignGrid, ProbModel

N_FEATURE_DIMS = 2
N_LEVELS = 3


def stimulus_features(image_index):
    """One-hot encoding (1x6) of one image from the 3x3 feature grid."""
    if not 0 <= image_index < N_LEVELS**N_FEATURE_DIMS:
        raise DomainError(f"image index {image_index} outside the 3x3 grid")
    mouth, brow = divmod(int(image_index), N_LEVELS)
    x = np.zeros(N_FEATURE_DIMS * N_LEVELS)
    x[mouth] = 1.0
    x[N_LEVELS + brow] = 1.0
    return x


def comparison_designs():
    """All 36 unordered image pairs; left-right symmetry is encoded by the
    difference of the two feature vectors."""
    return [
        (i, j) for i, j in itertools.combinations(range(N_LEVELS**N_FEATURE_DIMS), 2)
    ]


class MixedEffectsModel(ProbModel):
    name = "mixed_effects"
    theta_dim = 6
    implicit = True

    def __init__(
        self,
        prior_scale2=100.0,
        noise_sd=10.0,
        a_psi=2.0,
        b_psi=2.0,
        a_k=2.0,
        b_k=2.0,
        n_participants=8,
        eps=0.005,
    ):
        if prior_scale2 <= 0 or noise_sd <= 0:
            raise ParameterError("scales must be positive")
        self.prior_cov = prior_scale2 * np.eye(6)
        self.noise_sd = float(noise_sd)
        self.a_psi, self.b_psi = float(a_psi), float(b_psi)
        self.a_k, self.b_k = float(a_k), float(b_k)
        self.n_participants = int(n_participants)
        self.eps = float(eps)
        self.design_space = DesignGrid(comparison_designs())

    def design_vector(self, d):
        i, j = d
        return stimulus_features(i) - stimulus_features(j)

    def validate_design(self, d):
        i, j = d
        if i == j:
            raise DomainError("a comparison needs two distinct images")
        stimulus_features(i), stimulus_features(j)

    # -- prior ------------------------------------------------------------
    def sample_prior(self, n, rng):
        g = as_generator(rng)
        return g.standard_normal((n, 6)) * np.sqrt(self.prior_cov[0, 0])

    def prior_log_prob(self, theta):
        return MultivariateNormal(np.zeros(6), cov=self.prior_cov).log_prob(theta)

    def prior_entropy(self):
        return MultivariateNormal(np.zeros(6), cov=self.prior_cov).entropy()

    # -- nuisance ----------------------------------------------------------
    def sample_nuisance(self, n, rng):
        """Fresh per-response random effects: (psi, k) for one participant."""
        g = as_generator(rng)
        sd_psi = 1.0 / np.sqrt(g.gamma(self.a_psi, 1.0 / self.b_psi, size=n))
        psi = g.standard_normal((n, 6)) * sd_psi[:, None]
        sd_k = 1.0 / np.sqrt(g.gamma(self.a_k, 1.0 / self.b_k, size=n))
        k = np.exp(g.standard_normal(n) * sd_k)
        return psi, k

    def response_dist(self, theta, psi, k, d):
        xd = self.design_vector(d)
        theta = np.atleast_2d(theta)
        psi = np.atleast_2d(psi)
        loc = k * ((theta + psi) @ xd)
        return CensoredSigmoidNormal(loc, self.noise_sd, self.eps)

    def conditional_log_lik(self, theta, psi, k, d, y):
        """log p(y | theta, psi, k, d): explicit given all latents."""
        return self.response_dist(theta, psi, k, d).log_prob(np.asarray(y, float))

    # -- likelihood ----------------------------------------------------------
    def simulate(self, theta, d, rng):
        g = as_generator(rng)
        theta = np.atleast_2d(theta)
        psi, k = self.sample_nuisance(theta.shape[0], g)
        return self.response_dist(theta, psi, k, d).sample(g)

    def log_likelihood(self, theta, d, y):
        raise ImplicitLikelihood(
            "mixed_effects marginalizes random effects; the likelihood density "
            "is not evaluable"
        )
