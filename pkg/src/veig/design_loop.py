"""Design-space optimization and the sequential adaptive-experiment engine.

The sequential loop replaces the prior with the current approximate
posterior (a :class:`veig.vi.MeanFieldPosterior`), picks the next design by
grid search or Bayesian optimization over the chosen EIG estimator, presents
it to a responder (simulated agent or live session), and refits the
posterior on the extended history.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, EstimationFailure
from .estimators import EstimatorSpec
from .models.base import DesignBounds, DesignGrid
from .rng import RngStream, as_generator
from .training import estimate_eig
from .vi import MeanFieldPosterior, fit_posterior, make_program

__all__ = [
    "PosteriorState",
    "posterior_update",
    "sequential_bound_target",
    "grid_argmax_eig",
    "GPSurrogate",
    "bo_optimize_eig",
    "SimulatedResponder",
    "run_sequential",
    "ExperimentLog",
]


# ---------------------------------------------------------------------------
# posterior state
# ---------------------------------------------------------------------------


@dataclass
class PosteriorState:
    """History plus the current mean-field approximate posterior."""

    model: object
    program: object
    posterior: MeanFieldPosterior
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, model, **program_kw):
        program = make_program(model, **program_kw)
        return cls(model=model, program=program, posterior=program.initial_posterior())

    @property
    def step(self):
        return len(self.history) + 1

    def entropy(self):
        """Total entropy of the approximate posterior over the EIG target."""
        if self.model.name == "mixed_effects":
            return self.posterior.entropy(["theta"])
        if self.model.name == "ces":
            return self.posterior.entropy(["rho", "alpha", "u"])
        return self.posterior.entropy()

    def sample_theta(self, n, rng):
        draws = self.posterior.sample(n, rng)
        if self.model.name == "ces":
            return self.program.theta_matrix(draws), draws
        return draws["theta"], draws

    def rmse(self, theta_true, n=1000, rng=None):
        """sqrt(E_posterior ||theta - theta*||^2), by posterior sampling."""
        rng = rng or RngStream(0, 99)
        theta, _ = self.sample_theta(n, rng)
        delta = theta - np.asarray(theta_true, dtype=float)
        return float(np.sqrt(np.mean(np.sum(delta * delta, axis=1))))

    def rmse_blocks(self, theta_true, n=1000, rng=None):
        """Per-block recovery errors; for the CES latents these are the
        elasticity, the weight vector, and the response scale separately."""
        rng = rng or RngStream(0, 99)
        theta, _ = self.sample_theta(n, rng)
        delta = theta - np.asarray(theta_true, dtype=float)
        if self.model.name == "ces":
            return {
                "rho": float(np.sqrt(np.mean(delta[:, 0] ** 2))),
                "alpha": float(np.sqrt(np.mean(np.sum(delta[:, 1:4] ** 2, axis=1)))),
                "u": float(np.sqrt(np.mean(delta[:, 4] ** 2))),
            }
        return {"theta": float(np.sqrt(np.mean(np.sum(delta * delta, axis=1))))}


def posterior_update(
    state, new_obs, rng, vi_steps=800, vi_batch=16, step0=0.05, warm_start=True
):
    """Refit the mean-field posterior on the extended history.

    ``new_obs`` is (design, y) or (design, y, participant) for models with
    per-participant blocks.  Returns a new PosteriorState; zero-history
    states keep the prior exactly.  Warm starts resume from the current
    posterior, which one extra observation rarely moves far.
    """
    history = state.history + [tuple(new_obs)]
    if warm_start and state.history:
        posterior = state.posterior.copy()
    else:
        posterior = state.program.initial_posterior()
    fit_posterior(
        state.program, posterior, history, rng, steps=vi_steps, batch=vi_batch,
        step0=step0,
    )
    return PosteriorState(
        model=state.model, program=state.program, posterior=posterior,
        history=history,
    )


def sequential_bound_target(model, state, d_t, guide, theta, y_t):
    """The d_t-dependent part of the sequential posterior-bound integrand.

    Substituting the unnormalized posterior for the prior leaves
    log q(theta | y_t, d_t) - [log p(theta) + sum_i log p(y_i | theta, d_i)];
    the dropped history evidence term is constant in (theta, d_t, phi).
    """
    theta = np.atleast_2d(theta)
    target = guide.log_prob(theta, y_t, d_t) - model.prior_log_prob(theta)
    for item in state.history:
        d_i, y_i = item[0], item[1]
        y_rep = np.broadcast_to(np.asarray(y_i), (theta.shape[0],) + np.shape(y_i))
        target = target - model.log_likelihood(theta, d_i, y_rep)
    return target


# ---------------------------------------------------------------------------
# posterior-as-prior model view
# ---------------------------------------------------------------------------


class SequentialModelView:
    """A model whose prior is the current approximate posterior.

    Joint sampling draws every latent block from the posterior, so estimator
    code written against the static interface runs unchanged inside the
    sequential loop.
    """

    def __init__(self, state, rng_tag=0):
        self._state = state
        model = state.model
        self.name = model.name
        self.theta_dim = model.theta_dim
        self.implicit = model.implicit
        self.design_space = model.design_space
        self.eps = getattr(model, "eps", None)

    def __getattr__(self, name):
        # guides reach for model helpers (design_vector, response_dist, ...)
        return getattr(self._state.model, name)

    def validate_design(self, d):
        self._state.model.validate_design(d)

    def sample_prior(self, n, rng):
        theta, _ = self._state.sample_theta(n, rng)
        return theta

    def prior_log_prob(self, theta):
        state = self._state
        if state.model.name == "ces":
            theta = np.atleast_2d(theta)
            return (
                state.posterior.block("rho").log_prob(theta[:, 0])
                + state.posterior.block("alpha").log_prob(theta[:, 1:4])
                + state.posterior.block("u").log_prob(theta[:, 4])
            )
        return state.posterior.block("theta").log_prob(theta)

    def log_likelihood(self, theta, d, y):
        return self._state.model.log_likelihood(theta, d, y)

    def simulate(self, theta, d, rng):
        return self._state.model.simulate(theta, d, rng)

    def sample_joint(self, d, n, rng):
        state = self._state
        model = state.model
        g = as_generator(rng)
        if model.name == "mixed_effects":
            draws = state.posterior.sample(n, g)
            theta = draws["theta"]
            part = self._participant()
            psi = draws[f"psi_{part}"]
            k = np.exp(draws[f"logk_{part}"][:, 0])
            y = model.response_dist(theta, psi, k, d).sample(g)
            return theta, y
        theta, _ = state.sample_theta(n, g)
        y = model.simulate(theta, d, g)
        return theta, y

    def _participant(self):
        parts = getattr(self._state.program, "participants", (0,))
        return parts[0]


# ---------------------------------------------------------------------------
# grid argmax
# ---------------------------------------------------------------------------


def grid_argmax_eig(model, spec, designs, rng, workers=1):
    """Estimate the EIG for every design on the grid and return
    (best_design, {design_index: EIGEstimate}).  Ties break to the lowest
    index; failed designs are excluded with a warning."""
    designs = list(designs)
    estimates = {}

    def run_one(i):
        return estimate_eig(spec, model, designs[i], rng.child("design", i))

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(run_one, i) for i in range(len(designs))}
        results = {i: f for i, f in futures.items()}
    else:
        results = {i: None for i in range(len(designs))}

    best_idx, best_val = None, -np.inf
    for i in range(len(designs)):
        try:
            est = results[i].result() if workers > 1 else run_one(i)
        except EstimationFailure as exc:
            warnings.warn(f"design {designs[i]!r} failed: {exc}")
            continue
        estimates[i] = est
        if est.value > best_val:
            best_idx, best_val = i, est.value
    if best_idx is None:
        raise EstimationFailure("every design on the grid failed")
    return designs[best_idx], estimates


# ---------------------------------------------------------------------------
# Bayesian optimization over box-bounded design spaces
# ---------------------------------------------------------------------------


class GPSurrogate:
    """Matern-5/2 GP with per-point observation noise, for noisy EIG values."""

    def __init__(self, lengthscale=20.0, signal_var=1.0, jitter=1e-6):
        if lengthscale <= 0 or signal_var <= 0:
            raise ValueError("kernel hyperparameters must be positive")
        self.lengthscale = float(lengthscale)
        self.signal_var = float(signal_var)
        self.jitter = float(jitter)
        self.x = np.zeros((0, 0))
        self.y = np.zeros(0)
        self.noise = np.zeros(0)
        self._chol = None
        self._alpha = None
        self._y_mean = 0.0

    def kernel(self, a, b):
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
        r = math.sqrt(5.0) * d / self.lengthscale
        return self.signal_var * (1.0 + r + r * r / 3.0) * np.exp(-r)

    def fit(self, x, y, noise_var):
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.y = np.asarray(y, dtype=float)
        self.noise = np.asarray(noise_var, dtype=float)
        # signal variance tracks the spread of what we have seen
        if self.y.size >= 3:
            self.signal_var = max(float(np.var(self.y)), 1e-6)
        self._y_mean = float(np.mean(self.y))
        k = self.kernel(self.x, self.x)
        k[np.diag_indices_from(k)] += self.noise + self.jitter
        self._chol = np.linalg.cholesky(k)
        from scipy.linalg import cho_solve

        self._alpha = cho_solve((self._chol, True), self.y - self._y_mean)
        return self

    def predict(self, x_new):
        from scipy.linalg import solve_triangular

        x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
        ks = self.kernel(self.x, x_new)
        mean = self._y_mean + ks.T @ self._alpha
        v = solve_triangular(self._chol, ks, lower=True)
        var = self.kernel(x_new, x_new).diagonal() - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 1e-12)


def _latin_hypercube(bounds, n, g):
    dim = bounds.dim
    u = (g.permuted(np.tile(np.arange(n), (dim, 1)), axis=1).T + g.random((n, dim))) / n
    return bounds.low + u * (bounds.high - bounds.low)


def bo_optimize_eig(
    model,
    spec,
    bounds,
    rng,
    iterations=10,
    init_points=20,
    ucb_beta=2.0,
    lengthscale=20.0,
    candidate_pool=2000,
):
    """UCB Bayesian optimization of the estimated EIG over a box.

    Observation noise is taken from each estimate's standard error; on GP
    failure the best probed design is returned (flagged in the result)."""
    g = as_generator(rng)
    xs = list(_latin_hypercube(bounds, init_points, g))
    ys, noise = [], []
    for i, x in enumerate(xs):
        est = estimate_eig(spec, model, np.asarray(x), rng.child("bo_init", i))
        ys.append(est.value)
        noise.append(max(est.std_err, 1e-4) ** 2)
    gp = GPSurrogate(lengthscale=lengthscale)
    fallback = False
    for it in range(iterations):
        try:
            gp.fit(np.asarray(xs), np.asarray(ys), np.asarray(noise))
        except np.linalg.LinAlgError:
            fallback = True
            break
        cand = bounds.low + g.random((candidate_pool, bounds.dim)) * (
            bounds.high - bounds.low
        )
        mean, var = gp.predict(cand)
        pick = cand[int(np.argmax(mean + ucb_beta * np.sqrt(var)))]
        est = estimate_eig(spec, model, pick, rng.child("bo_iter", it))
        xs.append(pick)
        ys.append(est.value)
        noise.append(max(est.std_err, 1e-4) ** 2)
    if fallback:
        best = int(np.argmax(ys))
        return np.asarray(xs[best]), {"fallback": True, "probed": len(xs)}
    gp.fit(np.asarray(xs), np.asarray(ys), np.asarray(noise))
    cand = np.vstack(
        [np.asarray(xs), bounds.low + g.random((candidate_pool, bounds.dim)) * (bounds.high - bounds.low)]
    )
    mean, _ = gp.predict(cand)
    best = cand[int(np.argmax(mean))]
    return np.asarray(best), {"fallback": False, "probed": len(xs)}


# ---------------------------------------------------------------------------
# sequential engine
# ---------------------------------------------------------------------------


class ExperimentLog:
    """One record per step; serializable as JSON lines."""

    def __init__(self, meta=None):
        self.meta = dict(meta or {})
        self.records = []

    def add(self, **rec):
        self.records.append(rec)

    def to_jsonl(self):
        return "\n".join(json.dumps(r) for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl() + "\n")

    def column(self, key):
        return [r.get(key) for r in self.records if key in r]


class SimulatedResponder:
    """An agent with fixed true latents answering through the model's
    response channel."""

    def __init__(self, model, theta_true, rng, nuisance=None):
        self.model = model
        self.theta_true = np.atleast_2d(np.asarray(theta_true, dtype=float))
        self._rng = rng
        self._count = 0
        if model.name == "mixed_effects":
            if nuisance is None:
                psi, k = model.sample_nuisance(1, rng.child("agent_nuisance"))
                nuisance = (psi, k)
            self.psi, self.k = nuisance
        else:
            self.psi = self.k = None

    def __call__(self, d):
        g = self._rng.child("response", self._count).generator()
        self._count += 1
        if self.model.name == "mixed_effects":
            dist = self.model.response_dist(self.theta_true, self.psi, self.k, d)
            return float(dist.sample(g)[0])
        y = self.model.simulate(self.theta_true, d, g)
        return float(np.asarray(y).reshape(-1)[0])


def _select_design(state, strategy, spec, rng, bo_kw):
    model_view = SequentialModelView(state)
    space = state.model.design_space
    if strategy == "random":
        g = as_generator(rng)
        if isinstance(space, DesignGrid):
            return space[int(g.integers(len(space)))], None
        return space.low + g.random(space.dim) * (space.high - space.low), None
    if strategy.startswith("oed"):
        if isinstance(space, DesignGrid):
            best, ests = grid_argmax_eig(model_view, spec, list(space), rng)
            return best, {str(i): e.value for i, e in ests.items()}
        best, info = bo_optimize_eig(model_view, spec, space, rng, **bo_kw)
        return best, info
    raise CapabilityError(f"unknown strategy {strategy!r}")


def run_sequential(
    model,
    strategy,
    responder,
    steps,
    rng,
    spec=None,
    theta_true=None,
    vi_steps=800,
    vi_batch=16,
    bo_kw=None,
    deadline_s=30.0,
    program_kw=None,
):
    """Run an adaptive (or random) experiment; returns an ExperimentLog.

    ``responder`` maps a design to an observed response.  ``theta_true``
    (when known, i.e. simulated agents) adds posterior-RMSE tracking.
    """
    spec = spec or EstimatorSpec(kind="marginal", n_outer=500, n_steps=400)
    bo_kw = dict(bo_kw or {})
    state = PosteriorState.fresh(model, **(program_kw or {}))
    log = ExperimentLog(
        meta={"model": model.name, "strategy": strategy, "steps": steps}
    )
    log.add(
        t=0,
        design=None,
        outcome=None,
        entropy=state.entropy(),
        rmse=(state.rmse(theta_true, rng=rng.child("rmse", 0)) if theta_true is not None else None),
        rmse_blocks=(
            state.rmse_blocks(theta_true, rng=rng.child("rmse", 0))
            if theta_true is not None
            else None
        ),
        wall_ms=0.0,
    )
    for t in range(1, steps + 1):
        t_start = time.perf_counter()
        d_t, eig_info = _select_design(
            state, strategy, spec, rng.child("select", t), bo_kw
        )
        y_t = responder(d_t)
        obs = (d_t, y_t, 0) if model.name == "mixed_effects" else (d_t, y_t)
        state = posterior_update(
            state, obs, rng.child("vi", t), vi_steps=vi_steps, vi_batch=vi_batch
        )
        wall_ms = 1000.0 * (time.perf_counter() - t_start)
        if wall_ms > deadline_s * 1000.0:
            warnings.warn(f"step {t} exceeded the {deadline_s}s deadline budget")
        log.add(
            t=t,
            design=np.asarray(d_t).tolist() if not np.isscalar(d_t) else d_t,
            outcome=float(y_t),
            entropy=state.entropy(),
            rmse=(
                state.rmse(theta_true, rng=rng.child("rmse", t))
                if theta_true is not None
                else None
            ),
            rmse_blocks=(
                state.rmse_blocks(theta_true, rng=rng.child("rmse", t))
                if theta_true is not None
                else None
            ),
            eig_estimates=eig_info,
            wall_ms=wall_ms,
        )
    return log
