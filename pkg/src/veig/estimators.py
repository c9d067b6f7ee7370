"""The nine EIG estimators as pure evaluations over (model, guide, design).

All nested averages run in log space with max-subtraction; the proposal-based
estimator and plain nested Monte Carlo share one code path (NMC is the
special case whose proposal is the prior), so the two agree bit for bit under
a shared stream.  Estimation is pure given a frozen guide and an RngStream;
runs across designs or seeds can proceed concurrently with distinct streams.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import CapabilityError, ContractError, EstimationFailure
from .guides import PriorProposalGuide
from .rng import as_generator

__all__ = [
    "EstimatorSpec",
    "EIGEstimate",
    "nmc_estimate",
    "posterior_estimate",
    "marginal_estimate",
    "vnmc_estimate",
    "ml_estimate",
    "laplace_estimate",
    "lfire_estimate",
    "dv_estimate",
    "marginal_cv_estimate",
    "ESTIMATOR_KINDS",
]

ESTIMATOR_KINDS = (
    "nmc",
    "posterior",
    "marginal",
    "vnmc",
    "ml",
    "laplace",
    "lfire",
    "dv",
    "marginal-cv",
)


@dataclass
class EstimatorSpec:
    """Estimator identity plus its budget knobs.

    ``n_inner=None`` selects the square-root schedule M = m0 * round(sqrt(N))
    for the nested estimators.
    """

    kind: str
    n_outer: int = 1000
    n_inner: int | None = None
    n_proposal: int = 1
    n_steps: int = 0
    m0: int = 1
    proposal: str = "learned"  # "prior" reproduces plain NMC exactly
    lfire_budget: int = 200
    schedule: object = None

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ContractError(f"unknown estimator kind {self.kind!r}")
        if self.n_outer < 1 or (self.n_inner is not None and self.n_inner < 1):
            raise ContractError("sample budgets must be >= 1")
        if self.n_proposal < 1 or self.n_steps < 0:
            raise ContractError("need n_proposal >= 1 and n_steps >= 0")

    def inner_for(self, n_outer):
        if self.n_inner is not None:
            return self.n_inner
        return max(1, self.m0 * int(round(math.sqrt(n_outer))))


@dataclass
class EIGEstimate:
    """An EIG value in nats with its Monte Carlo standard error."""

    value: float
    std_err: float
    n_used: int
    m_used: int = 0
    k_used: int = 0
    bound_direction: str = "none"
    trace: list = field(default_factory=list)
    wall_clock: float = 0.0


def _finish(terms, n, m=0, k=0, direction="none", t0=None, trace=None):
    terms = np.asarray(terms, dtype=float)
    value = float(np.mean(terms))
    std_err = float(np.std(terms, ddof=1) / math.sqrt(terms.size)) if terms.size > 1 else 0.0
    return EIGEstimate(
        value=value,
        std_err=std_err,
        n_used=int(n),
        m_used=int(m),
        k_used=int(k),
        bound_direction=direction,
        trace=list(trace) if trace else [],
        wall_clock=time.perf_counter() - t0 if t0 else 0.0,
    )


def _log_lik_nm(model, theta_nm, d, y):
    """log p(y_n | theta_(n,m), d) for an (n, m, k) block of latents."""
    n, m, k = theta_nm.shape
    y = np.asarray(y)
    y_rep = np.repeat(y, m, axis=0) if y.ndim > 1 else np.repeat(y, m)
    return model.log_likelihood(theta_nm.reshape(n * m, k), d, y_rep).reshape(n, m)


# ---------------------------------------------------------------------------
# nested Monte Carlo and its proposal-based refinement
# ---------------------------------------------------------------------------


def _nested_terms(model, proposal, d, n_outer, n_inner, g):
    theta0, y = model.sample_joint(d, n_outer, g)
    ll0 = model.log_likelihood(theta0, d, y)
    theta_in, _ = proposal.sample_conditional(y, d, n_inner, g)
    ll_in = _log_lik_nm(model, theta_in, d, y)
    if getattr(proposal, "is_prior", False):
        log_w = ll_in
    else:
        n, m, k = theta_in.shape
        log_prior = model.prior_log_prob(theta_in.reshape(n * m, k)).reshape(n, m)
        log_w = log_prior + ll_in - proposal.log_prob_nm(theta_in, y, d)
    inner = logsumexp(log_w, axis=1) - math.log(n_inner)
    return ll0 - inner


def nmc_estimate(model, d, n_outer, n_inner, rng):
    """Plain nested Monte Carlo; the inner average estimates the marginal
    with draws from the prior.  Consistent upper bound in expectation."""
    t0 = time.perf_counter()
    g = as_generator(rng)
    terms = _nested_terms(model, PriorProposalGuide(model), d, n_outer, n_inner, g)
    return _finish(terms, n_outer, n_inner, direction="consistent-upper", t0=t0)


def vnmc_estimate(model, guide, d, n_outer, n_inner, rng):
    """Nested Monte Carlo with an importance proposal for the inner average.

    With the proposal equal to the exact posterior the inner weights are
    constant and the estimator is exact for any inner budget; with the prior
    it reproduces :func:`nmc_estimate` bit for bit under a shared stream.
    """
    t0 = time.perf_counter()
    g = as_generator(rng)
    terms = _nested_terms(model, guide, d, n_outer, n_inner, g)
    if not np.all(np.isfinite(terms)):
        raise EstimationFailure(
            "proposal produced non-finite importance weights; the guide "
            "assigns vanishing density somewhere the joint does not"
        )
    return _finish(terms, n_outer, n_inner, direction="consistent-upper", t0=t0)


# ---------------------------------------------------------------------------
# amortized bounds
# ---------------------------------------------------------------------------


def posterior_estimate(model, guide, d, n_outer, rng):
    """Average log-ratio of the amortized posterior to the prior: a lower
    bound in expectation, applicable to implicit-likelihood models."""
    t0 = time.perf_counter()
    g = as_generator(rng)
    theta, y = model.sample_joint(d, n_outer, g)
    terms = guide.log_prob(theta, y, d) - model.prior_log_prob(theta)
    return _finish(terms, n_outer, direction="lower", t0=t0)


def marginal_estimate(model, guide, d, n_outer, rng):
    """Average log-ratio of the likelihood to an approximate marginal: an
    upper bound in expectation; needs an explicit likelihood."""
    t0 = time.perf_counter()
    g = as_generator(rng)
    theta, y = model.sample_joint(d, n_outer, g)
    terms = model.log_likelihood(theta, d, y) - guide.log_prob(y, None, d)
    return _finish(terms, n_outer, direction="upper", t0=t0)


def ml_estimate(model, marginal_guide, likelihood_guide, d, n_outer, rng):
    """Two approximate densities, one ratio; not a bound, but its error is
    controlled by how well the pair fits the true marginal and likelihood."""
    t0 = time.perf_counter()
    g = as_generator(rng)
    theta, y = model.sample_joint(d, n_outer, g)
    terms = likelihood_guide.log_prob(y, theta, d) - marginal_guide.log_prob(
        y, None, d
    )
    return _finish(terms, n_outer, direction="none", t0=t0)


# ---------------------------------------------------------------------------
# Laplace baseline
# ---------------------------------------------------------------------------


def _fd_grad_hess(model, theta, d, y):
    """Central-difference fallback for models without analytic derivatives."""

    def logj(th):
        return model.prior_log_prob(th) + model.log_likelihood(th, d, y)

    n, k = theta.shape
    grad = np.zeros((n, k))
    hess = np.zeros((n, k, k))
    h = 1e-4 * (1.0 + np.abs(theta))
    for i in range(k):
        up = theta.copy()
        dn = theta.copy()
        up[:, i] += h[:, i]
        dn[:, i] -= h[:, i]
        grad[:, i] = (logj(up) - logj(dn)) / (2 * h[:, i])
        for j in range(i, k):
            pp = theta.copy()
            pm = theta.copy()
            mp = theta.copy()
            mm = theta.copy()
            pp[:, i] += h[:, i]
            pp[:, j] += h[:, j]
            pm[:, i] += h[:, i]
            pm[:, j] -= h[:, j]
            mp[:, i] -= h[:, i]
            mp[:, j] += h[:, j]
            mm[:, i] -= h[:, i]
            mm[:, j] -= h[:, j]
            hess[:, i, j] = (logj(pp) - logj(pm) - logj(mp) + logj(mm)) / (
                4 * h[:, i] * h[:, j]
            )
            hess[:, j, i] = hess[:, i, j]
    return grad, hess


def _map_and_hessian(model, theta_init, d, y, max_iter=200, tol=1e-8):
    """Damped Newton MAP search, batched over samples.

    Non-concave spots get per-sample Levenberg regularization; candidate
    points outside the support are rejected during backtracking.
    """
    theta = np.atleast_2d(theta_init).astype(float).copy()
    n, k = theta.shape
    analytic = model.grad_log_joint(theta, d, y) is not None
    positive_support = getattr(model, "name", "") == "death_process"

    def derivs(th):
        if analytic:
            g = model.grad_log_joint(th, d, y)
            h = model.hess_log_joint(th, d, y)
            if h is not None and h.ndim == 2:
                h = np.broadcast_to(h, (n, k, k))
            return g, h
        return _fd_grad_hess(model, th, d, y)

    def logj(th):
        return model.prior_log_prob(th) + model.log_likelihood(th, d, y)

    f = logj(theta)
    for _ in range(max_iter):
        grad, hess = derivs(theta)
        if np.max(np.abs(grad)) < tol:
            break
        neg_h = -hess
        # ridge any sample whose curvature is not safely positive definite
        eigs = np.linalg.eigvalsh(neg_h)
        ridge = np.maximum(0.0, 1e-6 - eigs[:, 0])
        neg_h = neg_h + ridge[:, None, None] * np.eye(k)
        try:
            step = np.linalg.solve(neg_h, grad[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise EstimationFailure("singular Hessian during MAP search") from exc
        lam = np.ones(n)
        accepted = np.zeros(n, dtype=bool)
        f_base = f.copy()
        for _ in range(40):
            cand = theta + np.where(accepted, 0.0, lam)[:, None] * step
            bad = ~np.isfinite(cand).all(axis=1)
            if positive_support:
                bad |= cand[:, 0] <= 0
            safe = np.where(bad[:, None], theta, cand)
            f_new = logj(safe)
            improved = (f_new >= f_base - 1e-12) & ~bad & ~accepted
            theta = np.where(improved[:, None], safe, theta)
            f = np.where(improved, f_new, f)
            accepted |= improved
            if accepted.all() or np.all(lam[~accepted] < 1e-10):
                break
            lam = np.where(accepted, lam, lam / 2.0)
    else:
        grad, _ = derivs(theta)
        if np.max(np.abs(grad)) > 1e-4:
            raise EstimationFailure(
                f"MAP search did not converge (|grad|={np.max(np.abs(grad)):.2e})"
            )
    _, hess = derivs(theta)
    return theta, hess


def laplace_estimate(model, d, n_outer, rng):
    """Gaussian fit at the per-observation MAP; EIG as the average drop from
    prior entropy to the fitted posterior entropy."""
    t0 = time.perf_counter()
    g = as_generator(rng)
    try:
        h_prior = model.prior_entropy()
    except NotImplementedError as exc:
        raise CapabilityError(f"{model.name} has no tractable prior entropy") from exc
    theta, y = model.sample_joint(d, n_outer, g)
    _, hess = _map_and_hessian(model, theta, d, y)
    k = theta.shape[1]
    sign, logdet = np.linalg.slogdet(-hess)
    if np.any(sign <= 0):
        raise EstimationFailure("non-PD negative Hessian at the MAP")
    h_post = 0.5 * (k * (1.0 + math.log(2.0 * math.pi)) - logdet)
    terms = h_prior - h_post
    return _finish(terms, n_outer, direction="none", t0=t0)


# ---------------------------------------------------------------------------
# ratio-estimation and critic baselines
# ---------------------------------------------------------------------------


def fit_lfire_logodds(critic, y_pos, y_neg, d, ridge=0.1, iters=40):
    """Ridge-penalized logistic regression on the critic's feature map.

    The quadratic critics are linear in their natural features (the critic
    object supplies the map), so the fit is convex: a damped Newton / IRLS
    solve.  The intercept is unpenalized; the penalty keeps the per-sample
    classifier from separating its finite training sets, which would blow up
    the log odds.  Returns a callable y -> fitted log odds.
    """
    from scipy.special import expit

    x = np.vstack([critic.lfire_features(y_pos, d), critic.lfire_features(y_neg, d)])
    x = np.column_stack([np.ones(x.shape[0]), x])
    labels = np.concatenate([np.ones(len(y_pos)), np.zeros(len(y_neg))])
    # standardized features keep one penalty scale meaningful everywhere
    loc = x.mean(axis=0)
    scale = x.std(axis=0)
    loc[0], scale[0] = 0.0, 1.0
    scale[scale < 1e-12] = 1.0
    xs = (x - loc) / scale
    w = np.zeros(x.shape[1])
    pen = 2.0 * ridge * np.ones(x.shape[1])
    pen[0] = 0.0
    if iters == 0:
        w = np.zeros(x.shape[1])
    for _ in range(iters):
        p = expit(xs @ w)
        grad = xs.T @ (labels - p) - pen * w
        if not np.all(np.isfinite(grad)):
            raise EstimationFailure("non-finite gradient in logistic fit")
        if np.max(np.abs(grad)) < 1e-10:
            break
        weights = np.maximum(p * (1.0 - p), 1e-12)
        hess = (xs * weights[:, None]).T @ xs
        hess[np.diag_indices_from(hess)] += pen + 1e-12
        w = w + np.linalg.solve(hess, grad)

    def logodds(y_new):
        f = critic.lfire_features(np.atleast_1d(y_new), d)
        f = np.column_stack([np.ones(f.shape[0]), f])
        return ((f - loc) / scale) @ w

    return logodds


def lfire_estimate(
    model, critic_template, d, n_outer, rng, inner_budget=200, ridge=0.1, iters=40
):
    """Likelihood-free ratio estimation: one logistic fit per outer sample."""
    t0 = time.perf_counter()
    g = as_generator(rng)
    theta, y = model.sample_joint(d, n_outer, g)
    terms = np.empty(n_outer)
    for i in range(n_outer):
        theta_rep = np.repeat(theta[i : i + 1], inner_budget, axis=0)
        y_pos = model.simulate(theta_rep, d, g)
        _, y_neg = model.sample_joint(d, inner_budget, g)
        fit = fit_lfire_logodds(
            critic_template, y_pos, y_neg, d, ridge=ridge, iters=iters
        )
        terms[i] = fit(y[i : i + 1])[0]
    return _finish(terms, n_outer, m=inner_budget, direction="none", t0=t0)


def dv_estimate(model, critic, d, n_outer, rng):
    """Donsker-Varadhan style estimate: joint average of the critic minus the
    log-mean-exp over within-batch shuffled pairs."""
    t0 = time.perf_counter()
    g = as_generator(rng)
    theta, y = model.sample_joint(d, n_outer, g)
    t_joint = critic.log_prob(y, theta, d)
    perm = g.permutation(n_outer)
    t_shuf = critic.log_prob(y, theta[perm], d)
    lse = logsumexp(t_shuf) - math.log(n_outer)
    value = float(np.mean(t_joint) - lse)
    se_joint = float(np.std(t_joint, ddof=1) / math.sqrt(n_outer))
    # delta method for the log term
    w = np.exp(t_shuf - t_shuf.max())
    se_log = float(np.std(w, ddof=1) / (np.mean(w) * math.sqrt(n_outer)))
    est = EIGEstimate(
        value=value,
        std_err=math.hypot(se_joint, se_log),
        n_used=n_outer,
        bound_direction="lower",
        trace=[f"batch={n_outer}"],
        wall_clock=time.perf_counter() - t0,
    )
    return est


# ---------------------------------------------------------------------------
# control-variate refinement of NMC
# ---------------------------------------------------------------------------


def marginal_cv_estimate(model, guide, d, n_outer, n_inner, rng):
    """Analytic per-latent KL to the fitted marginal, minus an NMC correction
    for the gap between the fitted and true marginals.

    Requires Gaussian likelihood/marginal pairs (the linear-Gaussian model).
    """
    t0 = time.perf_counter()
    if model.name != "ab_test":
        raise CapabilityError(
            "the control-variate estimator needs an analytic Gaussian KL; "
            f"{model.name} does not provide one"
        )
    g = as_generator(rng)
    x = model.design_matrix(d)
    mu_m = guide.value("loc")
    chol_m = guide.chol
    theta, y = model.sample_joint(d, n_outer, g)
    # KL( N(x theta, sd^2 I) || N(mu_m, Sigma_m) ), vectorized over theta
    from scipy.linalg import solve_triangular

    k = model.n_participants
    inv_l = solve_triangular(chol_m, np.eye(k), lower=True)
    prec = inv_l.T @ inv_l
    tr = model.obs_sd**2 * np.trace(prec)
    logdet_q = 2.0 * np.sum(np.log(np.diag(chol_m)))
    logdet_p = 2.0 * k * math.log(model.obs_sd)
    delta = theta @ x.T - mu_m
    quad = np.einsum("ni,ij,nj->n", delta, prec, delta)
    kl_terms = 0.5 * (tr + quad - k + logdet_q - logdet_p)
    # NMC correction: KL(p(y|d) || q_m) estimated with prior inner draws
    theta_in, _ = PriorProposalGuide(model).sample_conditional(y, d, n_inner, g)
    ll_in = _log_lik_nm(model, theta_in, d, y)
    log_phat = logsumexp(ll_in, axis=1) - math.log(n_inner)
    corr_terms = log_phat - guide.log_prob(y, None, d)
    return _finish(
        kl_terms - corr_terms, n_outer, n_inner, direction="none", t0=t0
    )
