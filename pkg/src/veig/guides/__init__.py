"""Variational families, critics, and their initialization registry.

Initialization policy: posterior-type guides start at the prior and critics
start at zero, so every bound's training trace starts at a known value (0);
marginal and likelihood guides start moment-matched to a small pilot sample.
"""

from __future__ import annotations

import numpy as np

from ..dists import logit
from ..errors import ConfigurationError
from ..rng import as_generator
from .ab_test import ABDvCritic, ABLfireCritic, ABMarginalGuide, ABPosteriorGuide
from .base import (
    ConditionalGaussian,
    Critic,
    Guide,
    ScalarConditionalGaussian,
    censored_head_log_prob,
)
from .ces import CESMarginalGuide
from .death_process import DeathLogNormalGuide, DeathTruncatedNormalGuide
from .extrapolation import (
    ExtrapolationDvCritic,
    ExtrapolationLikelihoodGuide,
    ExtrapolationMarginalGuide,
    ExtrapolationPosteriorGuide,
)
from .mixed_effects import (
    MixedDvCritic,
    MixedLfireCritic,
    MixedLikelihoodGuide,
    MixedPosteriorGuide,
)
from .preference import (
    CensoredMarginalGuide,
    PreferenceDvCritic,
    PreferenceLfireCritic,
    PreferencePosteriorGuide,
)

__all__ = [
    "Guide",
    "Critic",
    "PriorProposalGuide",
    "init_guide",
    "registered_pairs",
    "finite_difference_check",
    "ABPosteriorGuide",
    "ABMarginalGuide",
    "ABLfireCritic",
    "ABDvCritic",
    "PreferencePosteriorGuide",
    "CensoredMarginalGuide",
    "PreferenceLfireCritic",
    "PreferenceDvCritic",
    "MixedPosteriorGuide",
    "MixedLikelihoodGuide",
    "MixedLfireCritic",
    "MixedDvCritic",
    "ExtrapolationPosteriorGuide",
    "ExtrapolationMarginalGuide",
    "ExtrapolationLikelihoodGuide",
    "ExtrapolationDvCritic",
    "DeathLogNormalGuide",
    "DeathTruncatedNormalGuide",
    "CESMarginalGuide",
]


class PriorProposalGuide(Guide):
    """The prior wearing a proposal-guide hat.

    Nested Monte Carlo is the special case of the proposal-based estimator
    whose proposal is the prior; using this wrapper keeps the two estimators
    on one code path (and one RNG layout), so they agree bit for bit.
    """

    family = "prior_proposal"
    role = "proposal"
    is_prior = True

    def __init__(self, model):
        self.model_name = model.name
        self._model = model
        super().__init__([])

    def log_prob(self, target, cond, d):
        return self._model.prior_log_prob(target)

    def grad_log_prob(self, target, cond, d):
        n = np.atleast_2d(target).shape[0]
        return np.zeros((n, 0))

    def sample_conditional(self, cond, d, m, rng):
        n = np.atleast_2d(cond).shape[0] if cond is not None else 1
        theta = self._model.sample_prior(n * m, rng)
        return theta.reshape(n, m, -1), None

    def log_prob_nm(self, theta_nm, cond, d):
        n, m, k = theta_nm.shape
        return self._model.prior_log_prob(theta_nm.reshape(n * m, k)).reshape(n, m)


_BUILDERS = {
    ("ab_test", "posterior"): lambda model: ABPosteriorGuide(model, role="posterior"),
    ("ab_test", "proposal"): lambda model: ABPosteriorGuide(model, role="proposal"),
    ("ab_test", "marginal"): ABMarginalGuide,
    ("ab_test", "lfire"): ABLfireCritic,
    ("ab_test", "dv"): ABDvCritic,
    ("preference", "posterior"): lambda model: PreferencePosteriorGuide(
        model, role="posterior"
    ),
    ("preference", "proposal"): lambda model: PreferencePosteriorGuide(
        model, role="proposal"
    ),
    ("preference", "marginal"): CensoredMarginalGuide,
    ("preference", "lfire"): PreferenceLfireCritic,
    ("preference", "dv"): PreferenceDvCritic,
    ("mixed_effects", "posterior"): MixedPosteriorGuide,
    ("mixed_effects", "marginal"): CensoredMarginalGuide,
    ("mixed_effects", "likelihood"): MixedLikelihoodGuide,
    ("mixed_effects", "lfire"): MixedLfireCritic,
    ("mixed_effects", "dv"): MixedDvCritic,
    ("extrapolation", "posterior"): ExtrapolationPosteriorGuide,
    ("extrapolation", "marginal"): ExtrapolationMarginalGuide,
    ("extrapolation", "likelihood"): ExtrapolationLikelihoodGuide,
    ("extrapolation", "dv"): ExtrapolationDvCritic,
    ("death_process", "posterior"): DeathLogNormalGuide,
    ("death_process", "posterior-truncnormal"): DeathTruncatedNormalGuide,
    ("ces", "marginal"): CESMarginalGuide,
}


def registered_pairs():
    """All (model_name, role) pairs with a guide family."""
    return sorted(_BUILDERS)


def init_guide(role, model, d=None, rng=None, pilot_size=1000):
    """Build and initialize the guide for (model, role).

    Marginal and likelihood guides are moment-matched to ``pilot_size``
    simulations of the model at design ``d`` (deterministic given ``rng``);
    other families use their built-in starting points.
    """
    key = (model.name, role)
    if key not in _BUILDERS:
        raise ConfigurationError(f"no guide registered for {key!r}")
    guide = _BUILDERS[key](model)
    needs_pilot = role in ("marginal", "likelihood") and model.name != "extrapolation"
    if needs_pilot and d is not None and rng is not None:
        _moment_match(guide, model, d, rng, pilot_size)
    return guide


def _moment_match(guide, model, d, rng, pilot_size):
    g = as_generator(rng)
    theta, y = model.sample_joint(d, pilot_size, g)
    if isinstance(guide, ABMarginalGuide):
        cov = np.cov(y.T) + 1e-6 * np.eye(y.shape[1])
        guide.set_moments(y.mean(axis=0), cov)
    elif isinstance(guide, CensoredMarginalGuide):
        eta = logit(np.clip(y, model.eps, 1.0 - model.eps))
        guide.set_moments(eta.mean(), max(eta.std(), 1e-3))
    elif isinstance(guide, CESMarginalGuide):
        lo = y <= model.eps
        hi = y >= 1.0 - model.eps
        p0 = max(lo.mean(), 1e-3)
        p1 = max(hi.mean(), 1e-3)
        interior = y[~(lo | hi)]
        guide.set_value("mix", np.array([p0, p1, max(1 - p0 - p1, 1e-3)]))
        if interior.size >= 2:
            eta = logit(interior)
            guide.set_value("loc", [eta.mean()])
            guide.set_value("sd", [max(eta.std(), 1e-3)])
    elif isinstance(guide, MixedLikelihoodGuide):
        eta = logit(np.clip(y, model.eps, 1.0 - model.eps))
        proj = theta @ model.design_vector(d)
        denom = float(proj @ proj) + 1e-12
        gain = max(float(proj @ eta) / denom, 1e-3)
        resid = eta - gain * proj
        guide.set_value("log_gain", [np.log(gain)])
        guide.set_value("offset", [resid.mean()])
        guide.set_value("sd", [max(resid.std(), 1e-3)])
    return guide


# ---------------------------------------------------------------------------
# finite-difference gradient checking (the oracle for every analytic gradient)
# ---------------------------------------------------------------------------


def finite_difference_check(guide, target, cond, d, h=1e-5, rel_tol=1e-5):
    """Compare grad_log_prob against central differences of log_prob.

    Componentwise |analytic - numeric| <= rel_tol * max(1, |numeric|).
    Returns the worst relative error observed.
    """
    vals, grads = guide.eval_and_grad(target, cond, d)
    phi0 = guide.phi.copy()
    worst = 0.0
    for j in range(guide.n_params):
        guide.phi = phi0.copy()
        guide.phi[j] += h
        up = np.asarray(guide.log_prob(target, cond, d), dtype=float)
        guide.phi = phi0.copy()
        guide.phi[j] -= h
        dn = np.asarray(guide.log_prob(target, cond, d), dtype=float)
        guide.phi = phi0.copy()
        numeric = (up - dn) / (2.0 * h)
        denom = np.maximum(1.0, np.abs(numeric))
        err = float(np.max(np.abs(grads[:, j] - numeric) / denom))
        worst = max(worst, err)
    guide.phi = phi0
    if worst > rel_tol:
        raise AssertionError(
            f"gradient check failed for {guide.family}: worst rel err {worst:.3e}"
        )
    return worst
