"""Stochastic-gradient training of guides and the train-then-evaluate pipeline.

Two optimizer modes: plain decaying-step SGD with Polyak-Ruppert iterate
averaging (the regime the square-root convergence guarantee speaks about),
and an adaptive per-coordinate second-moment mode for wall-clock benchmark
runs.  All gradients are analytic: score-style for the density objectives
(the sampling distribution never depends on the parameters) and pathwise
through reparameterized proposal draws for the nested-importance objective.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import CapabilityError, ConfigurationError, ContractError, EstimationFailure
from .estimators import (
    EIGEstimate,
    EstimatorSpec,
    dv_estimate,
    laplace_estimate,
    lfire_estimate,
    marginal_cv_estimate,
    marginal_estimate,
    ml_estimate,
    nmc_estimate,
    posterior_estimate,
    vnmc_estimate,
)
from .guides import PriorProposalGuide, init_guide
from .rng import as_generator

__all__ = [
    "OptimizerSchedule",
    "TrainingTrace",
    "objective_gradient",
    "train_guide",
    "estimate_eig",
    "OBJECTIVE_KINDS",
]

OBJECTIVE_KINDS = ("posterior", "marginal", "ml", "vnmc", "dv")


@dataclass
class OptimizerSchedule:
    """How the guide parameters move.

    Both modes scale gradients per coordinate by a running RMS (the bound
    objectives are badly conditioned across parameter blocks; an unscaled
    step either stalls or diverges).  sgd-averaged decays the step as
    step0 * k^-decay and returns the Polyak-Ruppert average of iterates from
    ``averaging_start`` on; adaptive keeps the step constant and returns the
    final iterate.
    """

    mode: str = "sgd-averaged"
    step0: float = 0.1
    decay: float = 0.5
    batch: int = 10
    steps: int = 1000
    averaging_start: int | None = None
    rms_beta: float = 0.9
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in ("sgd-averaged", "adaptive"):
            raise ConfigurationError(f"unknown optimizer mode {self.mode!r}")
        if self.step0 <= 0 or self.batch < 1 or self.steps < 0:
            raise ConfigurationError("need step0 > 0, batch >= 1, steps >= 0")
        if self.mode == "sgd-averaged" and not 0.5 <= self.decay <= 1.0:
            raise ConfigurationError("decay exponent must lie in [0.5, 1]")

    def start_averaging_at(self):
        if self.averaging_start is not None:
            return self.averaging_start
        return self.steps // 2


@dataclass
class TrainingTrace:
    objective: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    seed_note: str = ""

    def __len__(self):
        return len(self.objective)


def _as_guide_dict(kind, guides):
    if kind == "ml":
        if not isinstance(guides, dict) or set(guides) != {"marginal", "likelihood"}:
            raise ContractError(
                "the marginal+likelihood objective needs guides "
                "{'marginal': ..., 'likelihood': ...}"
            )
        return guides
    if isinstance(guides, dict):
        (guide,) = guides.values()
    else:
        guide = guides
    return {kind: guide}


def objective_gradient(kind, model, guides, d, batch, rng, n_proposal=1):
    """One stochastic estimate of (objective value, ascent gradients).

    The value is always of the quantity being *maximized*: the posterior
    bound, the negated marginal / nested-importance upper bounds, the
    marginal+likelihood surrogate, or the critic bound.  Gradients come back
    as {guide_key: array} matching the ``guides`` argument.
    """
    g = as_generator(rng)
    gd = _as_guide_dict(kind, guides)

    if kind == "posterior":
        guide = gd["posterior"]
        theta, y = model.sample_joint(d, batch, g)
        logq, grads = guide.eval_and_grad(theta, y, d)
        vals = logq - model.prior_log_prob(theta)
        return float(vals.mean()), {"posterior": grads.mean(axis=0)}

    if kind == "marginal":
        guide = gd["marginal"]
        theta, y = model.sample_joint(d, batch, g)
        logq, grads = guide.eval_and_grad(y, None, d)
        vals = logq - model.log_likelihood(theta, d, y)
        return float(vals.mean()), {"marginal": grads.mean(axis=0)}

    if kind == "ml":
        qm, ql = gd["marginal"], gd["likelihood"]
        theta, y = model.sample_joint(d, batch, g)
        logq_m, grads_m = qm.eval_and_grad(y, None, d)
        logq_l, grads_l = ql.eval_and_grad(y, theta, d)
        vals = logq_m + logq_l
        return float(vals.mean()), {
            "marginal": grads_m.mean(axis=0),
            "likelihood": grads_l.mean(axis=0),
        }

    if kind == "dv":
        critic = gd["dv"]
        theta, y = model.sample_joint(d, batch, g)
        t_joint = critic.log_prob(y, theta, d)
        g_joint = critic.grad_log_prob(y, theta, d)
        perm = g.permutation(batch)
        t_shuf = critic.log_prob(y, theta[perm], d)
        g_shuf = critic.grad_log_prob(y, theta[perm], d)
        value = float(t_joint.mean() - (logsumexp(t_shuf) - math.log(batch)))
        sm = softmax(t_shuf)
        grad = g_joint.mean(axis=0) - sm @ g_shuf
        return value, {"dv": grad}

    if kind == "vnmc":
        guide = gd["vnmc"]
        if not hasattr(guide, "reparam_jac"):
            raise CapabilityError(
                f"proposal family {getattr(guide, 'family', '?')} is not "
                "reparameterizable"
            )
        return _vnmc_objective_gradient(model, guide, d, batch, n_proposal, g)

    raise ConfigurationError(f"unknown objective kind {kind!r}")


def _vnmc_objective_gradient(model, guide, d, batch, n_prop, g):
    theta0, y = model.sample_joint(d, batch, g)
    ll0 = model.log_likelihood(theta0, d, y)
    theta, z = guide.sample_conditional(y, d, n_prop, g)
    n, m, k = theta.shape
    flat = theta.reshape(n * m, k)
    y_rep = np.repeat(y, m, axis=0) if np.ndim(y) > 1 else np.repeat(y, m)
    log_prior = model.prior_log_prob(flat).reshape(n, m)
    log_lik = model.log_likelihood(flat, d, y_rep).reshape(n, m)
    log_q = guide.log_prob(flat, y_rep, d).reshape(n, m)
    log_w = log_prior + log_lik - log_q
    glj = model.grad_log_joint(flat, d, y_rep)
    if glj is None:
        raise CapabilityError(
            f"{model.name} provides no joint gradient; the nested-importance "
            "objective cannot be trained pathwise"
        )
    gq_theta = guide.grad_log_prob_target(flat, y_rep, d)
    gq_phi = guide.grad_log_prob(flat, y_rep, d)
    jac = guide.reparam_jac(y, d, z)  # (n, m, k, P)
    ds = (
        np.einsum("nmk,nmkp->nmp", (glj - gq_theta).reshape(n, m, k), jac)
        - gq_phi.reshape(n, m, -1)
    )
    sm = softmax(log_w, axis=1)
    # maximize the negated upper bound
    value = -float(np.mean(ll0 - (logsumexp(log_w, axis=1) - math.log(m))))
    grad = np.einsum("nm,nmp->p", sm, ds) / n
    return value, {"vnmc": grad}


def train_guide(kind, model, guides, d, schedule, rng, n_proposal=1, deadline=None):
    """Run the schedule; returns (guides, TrainingTrace).

    The guide objects are mutated in place (single-writer); sgd-averaged mode
    leaves them holding the Polyak-Ruppert average of the visited iterates.
    ``deadline`` (absolute perf_counter value) stops training early for
    time-budgeted runs.
    """
    gd = _as_guide_dict(kind, guides)
    g = as_generator(rng)
    trace = TrainingTrace()
    if schedule.steps == 0:
        return guides, trace
    keys = sorted(gd)
    rms = {key: np.zeros(gd[key].n_params) for key in keys}
    avg = {key: np.zeros(gd[key].n_params) for key in keys}
    avg_n = 0
    start_avg = schedule.start_averaging_at()
    for step in range(1, schedule.steps + 1):
        value, grads = objective_gradient(
            kind, model, gd if kind == "ml" else gd[kind], d, schedule.batch, g,
            n_proposal=n_proposal,
        )
        trace.objective.append(value)
        for key in keys:
            guide = gd[key]
            grad = grads[key]
            if not np.all(np.isfinite(grad)):
                raise EstimationFailure(
                    f"non-finite gradient for {key} guide at step {step}"
                )
            rms[key] = schedule.rms_beta * rms[key] + (1 - schedule.rms_beta) * grad**2
            precond = np.sqrt(rms[key]) + 1e-8
            if schedule.mode == "sgd-averaged":
                lr = schedule.step0 * step**-schedule.decay
                guide.set_phi(guide.phi + lr * grad / precond)
            else:
                guide.set_phi(guide.phi + schedule.step0 * grad / precond)
        if schedule.mode == "sgd-averaged" and step > start_avg:
            for key in keys:
                avg[key] += gd[key].phi
            avg_n += 1
        if schedule.checkpoint_every and step % schedule.checkpoint_every == 0:
            trace.checkpoints.append(
                {key: gd[key].phi.copy() for key in keys}
            )
        if deadline is not None and time.perf_counter() > deadline:
            break
    if schedule.mode == "sgd-averaged" and avg_n > 0:
        for key in keys:
            gd[key].set_phi(avg[key] / avg_n)
    return guides, trace


# ---------------------------------------------------------------------------
# end-to-end pipeline
# ---------------------------------------------------------------------------

_BENCH_SCHEDULE = dict(mode="adaptive", step0=0.01, decay=0.5, batch=100)


def default_schedule(kind, n_steps):
    """Benchmark-style default: adaptive with modest batches."""
    return OptimizerSchedule(steps=n_steps, **_BENCH_SCHEDULE)


def estimate_eig(spec: EstimatorSpec, model, d, rng):
    """Train whatever guides the estimator needs, then evaluate it.

    The training and evaluation streams are independent children of ``rng``,
    so the result is a deterministic function of (spec, model, d, seed).
    """
    t0 = time.perf_counter()
    kind = spec.kind
    train_rng = rng.child("train")
    eval_rng = rng.child("eval")
    schedule = spec.schedule or default_schedule(kind, spec.n_steps)
    if schedule.steps != spec.n_steps:
        schedule = OptimizerSchedule(
            mode=schedule.mode,
            step0=schedule.step0,
            decay=schedule.decay,
            batch=schedule.batch,
            steps=spec.n_steps,
            averaging_start=schedule.averaging_start,
            rms_beta=schedule.rms_beta,
        )
    trace = TrainingTrace()
    n = spec.n_outer

    if kind == "nmc":
        est = nmc_estimate(model, d, n, spec.inner_for(n), eval_rng)
    elif kind == "posterior":
        guide = init_guide("posterior", model, d, train_rng.child("init"))
        _, trace = train_guide("posterior", model, guide, d, schedule, train_rng)
        est = posterior_estimate(model, guide, d, n, eval_rng)
    elif kind == "marginal":
        guide = init_guide("marginal", model, d, train_rng.child("init"))
        _, trace = train_guide("marginal", model, guide, d, schedule, train_rng)
        est = marginal_estimate(model, guide, d, n, eval_rng)
    elif kind == "vnmc":
        if spec.proposal == "prior":
            guide = PriorProposalGuide(model)
        else:
            guide = init_guide("proposal", model, d, train_rng.child("init"))
            _, trace = train_guide(
                "vnmc", model, guide, d, schedule, train_rng, n_proposal=spec.n_proposal
            )
        est = vnmc_estimate(model, guide, d, n, spec.inner_for(n), eval_rng)
    elif kind == "ml":
        guides = {
            "marginal": init_guide("marginal", model, d, train_rng.child("init_m")),
            "likelihood": init_guide("likelihood", model, d, train_rng.child("init_l")),
        }
        _, trace = train_guide("ml", model, guides, d, schedule, train_rng)
        est = ml_estimate(model, guides["marginal"], guides["likelihood"], d, n, eval_rng)
    elif kind == "laplace":
        est = laplace_estimate(model, d, n, eval_rng)
    elif kind == "lfire":
        critic = init_guide("lfire", model, d, train_rng.child("init"))
        est = lfire_estimate(
            model, critic, d, n, eval_rng, inner_budget=spec.lfire_budget
        )
    elif kind == "dv":
        critic = init_guide("dv", model, d, train_rng.child("init"))
        _, trace = train_guide("dv", model, critic, d, schedule, train_rng)
        est = dv_estimate(model, critic, d, n, eval_rng)
    elif kind == "marginal-cv":
        guide = init_guide("marginal", model, d, train_rng.child("init"))
        _, trace = train_guide("marginal", model, guide, d, schedule, train_rng)
        est = marginal_cv_estimate(model, guide, d, n, spec.inner_for(n), eval_rng)
    else:
        raise ConfigurationError(f"unknown estimator kind {kind!r}")

    est.k_used = len(trace)
    est.trace = list(trace.objective)
    est.wall_clock = time.perf_counter() - t0
    return est


def estimate_eig_timed(kind, model, d, seconds, rng, k_fraction=0.7, spec_kw=None):
    """Wall-clock-budgeted estimation: train for about ``k_fraction`` of the
    budget (adaptive mode, deadline-stopped), then evaluate in chunks until
    the budget runs out.  Reported wall_clock tracks the budget to within a
    chunk."""
    from .estimators import EIGEstimate

    t0 = time.perf_counter()
    spec_kw = dict(spec_kw or {})
    trains = kind in ("posterior", "marginal", "ml", "vnmc", "dv", "marginal-cv")
    train_rng = rng.child("train")
    eval_rng = rng.child("eval")
    guides = None
    k_used = 0
    if trains:
        schedule = OptimizerSchedule(
            mode="adaptive", step0=0.01, batch=100, steps=10_000_000,
            decay=0.5,
        )
        deadline = t0 + k_fraction * seconds
        if kind == "ml":
            guides = {
                "marginal": init_guide("marginal", model, d, train_rng.child("init_m")),
                "likelihood": init_guide("likelihood", model, d, train_rng.child("init_l")),
            }
            _, tr = train_guide("ml", model, guides, d, schedule, train_rng, deadline=deadline)
        elif kind == "vnmc":
            guides = init_guide("proposal", model, d, train_rng.child("init"))
            _, tr = train_guide("vnmc", model, guides, d, schedule, train_rng, deadline=deadline)
        elif kind == "marginal-cv":
            guides = init_guide("marginal", model, d, train_rng.child("init"))
            _, tr = train_guide("marginal", model, guides, d, schedule, train_rng, deadline=deadline)
        else:
            role = {"posterior": "posterior", "marginal": "marginal", "dv": "dv"}[kind]
            guides = init_guide(role, model, d, train_rng.child("init"))
            _, tr = train_guide(kind, model, guides, d, schedule, train_rng, deadline=deadline)
        k_used = len(tr)

    # evaluation chunks
    from .estimators import (
        dv_estimate,
        laplace_estimate,
        lfire_estimate,
        marginal_cv_estimate,
        marginal_estimate,
        ml_estimate,
        nmc_estimate,
        posterior_estimate,
        vnmc_estimate,
    )

    chunk_n = {"lfire": 4, "laplace": 200}.get(kind, 1000)
    m_inner = spec_kw.get("n_inner")
    if kind in ("nmc", "vnmc", "marginal-cv") and m_inner is None:
        # calibrate the inner budget from the time left and a probe chunk
        m_inner = max(2, spec_kw.get("m0", 1) * int(round(math.sqrt(chunk_n))))

    means, ses, ns = [], [], []
    i = 0
    while True:
        sub = eval_rng.child("chunk", i)
        if kind == "nmc":
            est = nmc_estimate(model, d, chunk_n, m_inner, sub)
        elif kind == "posterior":
            est = posterior_estimate(model, guides, d, chunk_n, sub)
        elif kind == "marginal":
            est = marginal_estimate(model, guides, d, chunk_n, sub)
        elif kind == "vnmc":
            est = vnmc_estimate(model, guides, d, chunk_n, m_inner, sub)
        elif kind == "ml":
            est = ml_estimate(model, guides["marginal"], guides["likelihood"], d, chunk_n, sub)
        elif kind == "laplace":
            est = laplace_estimate(model, d, chunk_n, sub)
        elif kind == "lfire":
            critic = init_guide("lfire", model, d, train_rng.child("critic"))
            est = lfire_estimate(model, critic, d, chunk_n, sub)
        elif kind == "dv":
            est = dv_estimate(model, guides, d, chunk_n, sub)
        elif kind == "marginal-cv":
            est = marginal_cv_estimate(model, guides, d, chunk_n, m_inner, sub)
        else:
            raise ConfigurationError(f"unknown estimator kind {kind!r}")
        means.append(est.value)
        ses.append(est.std_err)
        ns.append(est.n_used)
        i += 1
        elapsed = time.perf_counter() - t0
        per_chunk = (elapsed - (k_fraction * seconds if trains else 0.0)) / i
        if elapsed + per_chunk > seconds:
            break
    total_n = sum(ns)
    value = float(np.dot(means, ns) / total_n)
    se = float(math.sqrt(sum((s * n) ** 2 for s, n in zip(ses, ns))) / total_n)
    return EIGEstimate(
        value=value,
        std_err=se,
        n_used=total_n,
        m_used=m_inner or 0,
        k_used=k_used,
        bound_direction="none",
        trace=[],
        wall_clock=time.perf_counter() - t0,
    )
