"""Independent ground-truth EIG computations and the KL fitting diagnostic.

These are the references the test suite compares estimators against: exact
determinant formulas where conjugacy allows, adaptive Gauss-Hermite
quadrature where outcome spaces are finite, exact enumeration for binary
spaces, and a repeated-run brute-force combination for the mixed-effects
model.  Everything except the brute-force oracle is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .dists import logit
from .errors import CapabilityError, EstimationFailure
from .rng import as_generator

__all__ = [
    "OracleResult",
    "analytic_eig_linear_gaussian",
    "quadrature_eig_death_process",
    "enumeration_eig_extrapolation",
    "bruteforce_eig_mixed_effects",
    "quadrature_eig_preference",
    "converged_marginal_eig_preference",
    "partial_kl_scan",
    "oracle_for",
    "oracle_table",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class OracleResult:
    eig: float
    method: str
    error_bound: float = 0.0


from functools import lru_cache


@lru_cache(maxsize=32)
def _hermegauss(order):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / math.sqrt(2.0 * math.pi)


def _gauss_hermite(mean, sd, order):
    """Nodes/weights for E[f(T)] with T ~ N(mean, sd^2)."""
    x, w = _hermegauss(order)
    return mean + sd * x, w


# ---------------------------------------------------------------------------
# linear-Gaussian closed form
# ---------------------------------------------------------------------------


def analytic_eig_linear_gaussian(model, d):
    """EIG = 1/2 log det(I + Sigma_theta X^T X / sd^2), exact for the A/B model."""
    if model.name != "ab_test":
        raise CapabilityError("analytic oracle requires the linear-Gaussian model")
    x = model.design_matrix(d)
    m = np.eye(2) + model.prior_cov @ (x.T @ x) / model.obs_sd**2
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0:
        raise EstimationFailure("information matrix lost positive definiteness")
    return OracleResult(0.5 * logdet, "analytic", 0.0)


# ---------------------------------------------------------------------------
# death process: quadrature over the rate, exact outcome summation
# ---------------------------------------------------------------------------


def _death_eig_fixed_order(model, d, order):
    nodes, weights = _gauss_hermite(model.log_rate_mean, model.log_rate_sd, order)
    b = np.exp(nodes)[:, None]
    outs = np.asarray(model.outcomes(), dtype=float)
    n_out = outs.shape[0]
    log_lik = np.empty((order, n_out))
    for j, y in enumerate(outs):
        log_lik[:, j] = model.log_likelihood(b, d, y[None, :])
    lik = np.exp(log_lik)
    marg = weights @ lik
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = lik * (log_lik - np.log(marg)[None, :])
    inner[lik == 0.0] = 0.0
    return float(weights @ inner.sum(axis=1))


def quadrature_eig_death_process(model, d, order=64, tol=1e-9, max_order=320):
    """Gauss-Hermite over log rate with automatic order doubling."""
    model.validate_design(d)
    val = _death_eig_fixed_order(model, d, order)
    while order < max_order:
        order *= 2
        new = _death_eig_fixed_order(model, d, order)
        if abs(new - val) < tol:
            return OracleResult(new, "quadrature", abs(new - val))
        val = new
    return OracleResult(val, "quadrature", float("nan"))


# ---------------------------------------------------------------------------
# extrapolation: exact 2x2 enumeration
# ---------------------------------------------------------------------------


def _mi_from_table(table):
    pt = table.sum(axis=1)
    py = table.sum(axis=0)
    mi = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            if table[i, j] > 0:
                mi += table[i, j] * math.log(table[i, j] / (pt[i] * py[j]))
    return mi


def enumeration_eig_extrapolation(model, d, order=64, tol=1e-10, max_order=320):
    val = _mi_from_table(model.joint_table(d, order))
    while order < max_order:
        order *= 2
        new = _mi_from_table(model.joint_table(d, order))
        if abs(new - val) < tol:
            return OracleResult(new, "enumeration", abs(new - val))
        val = new
    return OracleResult(val, "enumeration", float("nan"))


# ---------------------------------------------------------------------------
# mixed effects: brute-force marginalization, consistent as budgets grow
# ---------------------------------------------------------------------------


def _mixed_bruteforce_once(model, d, n_outer, n_inner, g):
    xd = model.design_vector(d)
    theta, y = model.sample_joint(d, n_outer, g)
    proj = theta @ xd
    # likelihood: marginalize fresh per-response random effects
    psi, k = model.sample_nuisance(n_inner, g)
    loc_lik = k[None, :] * (proj[:, None] + (psi @ xd)[None, :])
    from .dists import CensoredSigmoidNormal

    dens_lik = CensoredSigmoidNormal(loc_lik, model.noise_sd, model.eps)
    ll = dens_lik.log_prob(np.broadcast_to(y[:, None], loc_lik.shape))
    log_lik = special.logsumexp(ll, axis=1) - math.log(n_inner)
    # marginal: fresh joint draws
    theta_m = model.sample_prior(n_inner, g)
    psi_m, k_m = model.sample_nuisance(n_inner, g)
    loc_m = k_m * ((theta_m + psi_m) @ xd)
    dens_m = CensoredSigmoidNormal(loc_m[None, :], model.noise_sd, model.eps)
    lm = dens_m.log_prob(np.broadcast_to(y[:, None], (n_outer, n_inner)))
    log_marg = special.logsumexp(lm, axis=1) - math.log(n_inner)
    return float(np.mean(log_lik - log_marg))


def bruteforce_eig_mixed_effects(
    model, d, rng, n_outer=1500, n_inner=1500, n_repeats=5, tol=None
):
    """NMC with Monte Carlo marginalization of the random effects.

    Inefficient but statistically consistent; the error bound is the spread
    across independent repeats (plus nothing for the O(1/n_inner) bias, which
    the caller controls through the budget).
    """
    g = as_generator(rng)
    vals = [
        _mixed_bruteforce_once(model, d, n_outer, n_inner, g)
        for _ in range(n_repeats)
    ]
    vals = np.asarray(vals)
    spread = float(vals.std(ddof=1) / math.sqrt(n_repeats)) if n_repeats > 1 else 0.0
    if tol is not None and spread > tol:
        raise EstimationFailure(
            f"brute-force spread {spread:.3g} exceeds requested tolerance {tol:.3g}; "
            "increase the budget"
        )
    return OracleResult(float(vals.mean()), "bruteforce-nmc", spread)


# ---------------------------------------------------------------------------
# preference: nested quadrature (deterministic) and the converged-marginal run
# ---------------------------------------------------------------------------


def _preference_theta_nodes(model, d, panels_per_scale):
    """Composite Gauss-Legendre over theta, with panel width tied to the
    response scale: the censoring transitions are that sharp, which plain
    Gauss-Hermite under-resolves."""
    s = model.response_scale(d)
    half_width = 8.5 * model.prior_sd
    a = model.prior_mean - half_width
    b = model.prior_mean + half_width
    width = min(s / panels_per_scale, (b - a) / 64)
    n_panels = int(np.ceil((b - a) / width))
    edges = np.linspace(a, b, n_panels + 1)
    gl_x, gl_w = np.polynomial.legendre.leggauss(8)
    centers = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * np.diff(edges)
    nodes = (centers[:, None] + half[:, None] * gl_x).ravel()
    w = (half[:, None] * gl_w).ravel()
    prior = np.exp(
        -0.5 * ((nodes - model.prior_mean) / model.prior_sd) ** 2
    ) / (model.prior_sd * math.sqrt(2 * math.pi))
    return nodes, w * prior


def _preference_eig_fixed_order(model, d, theta_order, x_order):
    s = model.response_scale(d)
    lo, hi = logit(model.eps), logit(1.0 - model.eps)
    # theta_order doubles as the panel density knob (panels per unit scale)
    nodes, weights = _preference_theta_nodes(model, d, max(2, theta_order // 64))
    mean = float(d) - nodes  # response-location per prior node
    # atom probabilities per node
    z_lo = (lo - mean) / s
    z_hi = (hi - mean) / s
    p_lo = special.ndtr(z_lo)
    p_hi = special.ndtr(-z_hi)
    m_lo = float(weights @ p_lo)
    m_hi = float(weights @ p_hi)
    # interior: Gauss-Legendre on the logit scale
    gl_x, gl_w = np.polynomial.legendre.leggauss(x_order)
    x = 0.5 * (hi - lo) * gl_x + 0.5 * (hi + lo)
    wx = 0.5 * (hi - lo) * gl_w
    dens = np.exp(
        -0.5 * ((x[None, :] - mean[:, None]) / s) ** 2
    ) / (s * math.sqrt(2 * math.pi))
    marg = weights @ dens  # (x,)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(dens) - np.log(marg)[None, :]
    log_ratio[dens == 0.0] = 0.0
    interior = (dens * np.where(dens > 0, log_ratio, 0.0)) @ wx
    atoms = special.xlogy(p_lo, p_lo) - special.xlogy(p_lo, m_lo) + special.xlogy(
        p_hi, p_hi
    ) - special.xlogy(p_hi, m_hi)
    return float(weights @ (interior + atoms))


def quadrature_eig_preference(model, d, theta_order=150, x_order=200, tol=1e-8):
    val = _preference_eig_fixed_order(model, d, theta_order, x_order)
    ref = _preference_eig_fixed_order(model, d, 2 * theta_order, 2 * x_order)
    return OracleResult(ref, "quadrature", abs(ref - val))


def converged_marginal_eig_preference(
    model, d, rng, n_steps=100_000, n_outer=1_000_000, batch=10
):
    """The named reference run: train the marginal family (which contains the
    truth) to convergence and evaluate with a large Monte Carlo budget."""
    from .estimators import marginal_estimate
    from .guides import init_guide
    from .training import OptimizerSchedule, train_guide

    guide = init_guide("marginal", model, d, rng.child("init"))
    schedule = OptimizerSchedule(
        mode="sgd-averaged", step0=0.1, decay=0.5, batch=batch, steps=n_steps
    )
    train_guide("marginal", model, guide, d, schedule, rng.child("train"))
    est = marginal_estimate(model, guide, d, n_outer, rng.child("eval"))
    return OracleResult(est.value, "converged-marginal", 3.0 * est.std_err)


# ---------------------------------------------------------------------------
# forward vs reverse KL diagnostic
# ---------------------------------------------------------------------------


def _mixture_logpdf(t, delta, sds, weights):
    comp1 = -0.5 * ((t - delta) / sds[0]) ** 2 - math.log(sds[0]) - 0.5 * _LOG_2PI
    comp2 = -0.5 * (t / sds[1]) ** 2 - math.log(sds[1]) - 0.5 * _LOG_2PI
    stacked = np.stack([comp1 + math.log(weights[0]), comp2 + math.log(weights[1])])
    return special.logsumexp(stacked, axis=0)


def _mixture_moments(delta, sds, weights):
    mean = weights[0] * delta
    var = (
        weights[0] * (sds[0] ** 2 + delta**2)
        + weights[1] * sds[1] ** 2
        - mean**2
    )
    return mean, math.sqrt(var)


def _partial_kl(m, s, delta, sds, weights, order=200):
    """E_p[log q] with q = N(m, s^2), p the two-component mixture."""
    total = 0.0
    for comp_mean, comp_sd, w in ((delta, sds[0], weights[0]), (0.0, sds[1], weights[1])):
        nodes, wts = _gauss_hermite(comp_mean, comp_sd, order)
        logq = -0.5 * ((nodes - m) / s) ** 2 - math.log(s) - 0.5 * _LOG_2PI
        total += w * float(wts @ logq)
    return total


def _reverse_kl(params, delta, sds, weights, order=200):
    m, log_s = params
    s = math.exp(log_s)
    nodes, wts = _gauss_hermite(m, s, order)
    logq = -0.5 * ((nodes - m) / s) ** 2 - log_s - 0.5 * _LOG_2PI
    logp = _mixture_logpdf(nodes, delta, sds, weights)
    return float(wts @ (logq - logp))


def _classify_basin(m, s, delta):
    """0 = covering fit, 1 = locked on the narrow component (at delta),
    2 = locked on the wide component (at 0)."""
    if abs(m - delta) < 0.3 * abs(delta) and s < 0.8:
        return 1
    if abs(m) < 0.3 * abs(delta) and s < 1.15:
        return 2
    return 0


def _reverse_fit(delta, sds, weights):
    """Best reverse-KL Gaussian fit over multiple starts; returns
    ((m, s), kl, basin) with the basin read off the fitted parameters."""
    mm, ms = _mixture_moments(delta, sds, weights)
    starts = [(mm, ms), (delta, sds[0]), (0.0, sds[1])]
    best = None
    for m0, s0 in starts:
        res = optimize.minimize(
            _reverse_kl,
            x0=np.array([m0, math.log(s0)]),
            args=(delta, sds, weights),
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
        )
        if best is None or res.fun < best[1]:
            best = ((res.x[0], math.exp(res.x[1])), float(res.fun))
    (m, s), kl = best
    return (m, s), kl, _classify_basin(m, s, delta)


def partial_kl_scan(delta_grid, component_sds=(0.5, 1.0), weights=(0.6, 0.4)):
    """Partial-KL curves E_p[log q] for forward (moment-matched) and reverse
    (mode-seeking) Gaussian fits to a two-component mixture, as the component
    separation varies.  Returns a dict of curves plus the located reverse-fit
    discontinuity.

    Default weights put 0.6 on the narrow component, which places the
    mode-locking switch at separation ~3.2; equal weights would defer it to
    ~4.3."""
    sds = tuple(float(s) for s in component_sds)
    weights = tuple(float(w) for w in weights)
    fwd, rev, basins = [], [], []
    for delta in delta_grid:
        mm, ms = _mixture_moments(delta, sds, weights)
        fwd.append(_partial_kl(mm, ms, delta, sds, weights))
        (m, s), kl, basin = _reverse_fit(delta, sds, weights)
        rev.append(_partial_kl(m, s, delta, sds, weights))
        basins.append(basin)
    fwd = np.asarray(fwd)
    rev = np.asarray(rev)
    jump_at = _locate_reverse_jump(delta_grid, basins, sds, weights)
    return {
        "delta": np.asarray(delta_grid, dtype=float),
        "forward": fwd,
        "reverse": rev,
        "reverse_basin": np.asarray(basins),
        "jump_location": jump_at,
        "forward_max_jump": float(np.max(np.abs(np.diff(fwd)))) if len(fwd) > 1 else 0.0,
        "reverse_max_jump": float(np.max(np.abs(np.diff(rev)))) if len(rev) > 1 else 0.0,
    }


def _locate_reverse_jump(delta_grid, basins, sds, weights, tol=1e-4):
    """Bisect the separation at which the winning reverse-fit basin switches."""
    basins = np.asarray(basins)
    changed = np.nonzero(basins != basins[0])[0]
    if changed.size == 0:
        return float("nan")
    hi_idx = changed[0]
    lo = float(delta_grid[hi_idx - 1]) if hi_idx > 0 else float(delta_grid[0])
    hi = float(delta_grid[hi_idx])
    base = basins[0]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        _, _, basin = _reverse_fit(mid, sds, weights)
        if basin == base:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# dispatch + export
# ---------------------------------------------------------------------------


def oracle_for(model, d, rng=None, **kw):
    """The reference EIG for (model, design), by whatever method applies."""
    if model.name == "ab_test":
        return analytic_eig_linear_gaussian(model, d)
    if model.name == "death_process":
        return quadrature_eig_death_process(model, d, **kw)
    if model.name == "extrapolation":
        return enumeration_eig_extrapolation(model, d, **kw)
    if model.name == "preference":
        return quadrature_eig_preference(model, d, **kw)
    if model.name == "mixed_effects":
        if rng is None:
            raise CapabilityError("brute-force oracle needs an RngStream")
        return bruteforce_eig_mixed_effects(model, d, rng, **kw)
    raise CapabilityError(f"no oracle for {model.name}")


def oracle_table(model, designs=None, rng=None, **kw):
    """Rows (design, eig, method, error_bound) for CSV export."""
    designs = list(designs) if designs is not None else list(model.design_space)
    rows = []
    for d in designs:
        res = oracle_for(model, d, rng=rng, **kw)
        rows.append({
            "design": d,
            "eig": res.eig,
            "method": res.method,
            "error_bound": res.error_bound,
        })
    return rows
