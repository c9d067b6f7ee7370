"""Mean-field variational posteriors for the sequential experiment loop.

A posterior is a set of named blocks (full-covariance Gaussian, diagonal
Gaussian, log-normal, Gamma, Beta, Dirichlet).  Fitting maximizes the
evidence lower bound on the accumulated history with stochastic gradients:
reparameterized (pathwise) for the Gaussian/log-normal blocks with analytic
block entropies, and score-function with a running-mean baseline for the
Gamma/Beta/Dirichlet blocks, which have no useful location-scale form.

Each benchmark model contributes a "program": its block layout plus the log
joint density of latents and history, with the partial derivatives the
pathwise blocks need.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special, stats

from .errors import ConfigurationError, EstimationFailure
from .guides.base import censored_head_grads, censored_head_log_prob
from .rng import as_generator

_LOG_2PI = math.log(2.0 * math.pi)

__all__ = ["MeanFieldPosterior", "fit_posterior", "make_program"]


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


class _Block:
    name: str
    pathwise: bool

    def sample(self, n, g):
        raise NotImplementedError

    def entropy(self):
        raise NotImplementedError

    def log_prob(self, x):
        raise NotImplementedError


class MvnBlock(_Block):
    pathwise = True

    def __init__(self, name, mean, chol):
        self.name = name
        self.mean = np.asarray(mean, dtype=float)
        self.chol = np.asarray(chol, dtype=float)
        self.dim = self.mean.size

    def sample(self, n, g):
        z = g.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T, z

    def entropy(self):
        return 0.5 * self.dim * (1 + _LOG_2PI) + np.sum(np.log(np.diag(self.chol)))

    def log_prob(self, x):
        from scipy.linalg import solve_triangular

        w = solve_triangular(self.chol, (np.atleast_2d(x) - self.mean).T, lower=True)
        return (
            -0.5 * np.sum(w * w, axis=0)
            - np.sum(np.log(np.diag(self.chol)))
            - 0.5 * self.dim * _LOG_2PI
        )

    def apply_pathwise(self, dg_dx, z, lr_scale, opt):
        """dg_dx: (n, dim) gradient of the log joint at the samples.

        Uses the pathwise ELBO gradient with the zero-mean direct score term
        dropped: per-sample gradients vanish identically once the block
        matches the true conditional, so late-stage noise collapses."""
        from scipy.linalg import solve_triangular

        # eff = d/dx [log joint - log q] along the reparameterized path
        eff = dg_dx + solve_triangular(self.chol.T, z.T, lower=False).T
        g_mean = eff.mean(axis=0)
        g_chol = np.tril(np.einsum("ni,nj->ij", eff, z) / eff.shape[0])
        rows, cols = np.tril_indices(self.dim)
        diag = rows == cols
        packed = g_chol[rows, cols]
        packed[diag] = packed[diag] * np.diag(self.chol)
        up_mean = opt.step(self.name + ".mean", g_mean) * lr_scale
        up_chol = opt.step(self.name + ".chol", packed) * lr_scale
        self.mean = self.mean + up_mean
        vals = np.log(np.diag(self.chol)) + up_chol[diag]
        L = self.chol.copy()
        L[rows[~diag], cols[~diag]] += up_chol[~diag]
        L[np.arange(self.dim), np.arange(self.dim)] = np.exp(vals)
        self.chol = L


class DiagNormalBlock(_Block):
    pathwise = True

    def __init__(self, name, mean, sd):
        self.name = name
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.sd = np.atleast_1d(np.asarray(sd, dtype=float))
        self.dim = self.mean.size

    def sample(self, n, g):
        z = g.standard_normal((n, self.dim))
        return self.mean + self.sd * z, z

    def entropy(self):
        return 0.5 * self.dim * (1 + _LOG_2PI) + np.sum(np.log(self.sd))

    def log_prob(self, x):
        z = (np.atleast_2d(x) - self.mean) / self.sd
        return np.sum(-0.5 * z * z - np.log(self.sd) - 0.5 * _LOG_2PI, axis=1)

    def apply_pathwise(self, dg_dx, z, lr_scale, opt):
        eff = dg_dx + z / self.sd
        g_mean = eff.mean(axis=0)
        g_logsd = (eff * z).mean(axis=0) * self.sd
        self.mean = self.mean + opt.step(self.name + ".mean", g_mean) * lr_scale
        self.sd = self.sd * np.exp(opt.step(self.name + ".logsd", g_logsd) * lr_scale)


class LogNormalBlock(_Block):
    """Scalar positive latent; samples come back already exponentiated."""

    pathwise = True

    def __init__(self, name, mu, sigma):
        self.name = name
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.dim = 1

    def sample(self, n, g):
        z = g.standard_normal(n)
        return np.exp(self.mu + self.sigma * z), z

    def entropy(self):
        return self.mu + 0.5 * (1 + _LOG_2PI) + math.log(self.sigma)

    def log_prob(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
        zz = (np.log(x) - self.mu) / self.sigma
        return -0.5 * zz * zz - math.log(self.sigma) - 0.5 * _LOG_2PI - np.log(x)

    def apply_pathwise(self, dg_du, z, u, lr_scale, opt):
        """dg_du: (n,) derivative of the log joint w.r.t. the positive value."""
        eff = dg_du + (z / self.sigma + 1.0) / u
        g_mu = float(np.mean(eff * u))
        g_logsigma = float(np.mean(eff * u * self.sigma * z))
        self.mu += opt.step(self.name + ".mu", np.array([g_mu]))[0] * lr_scale
        self.mu = float(np.clip(self.mu, -80.0, 80.0))
        self.sigma *= math.exp(
            opt.step(self.name + ".logsigma", np.array([g_logsigma]))[0] * lr_scale
        )
        self.sigma = float(np.clip(self.sigma, 1e-6, 40.0))


class GammaBlock(_Block):
    pathwise = False

    def __init__(self, name, shape, rate):
        self.name = name
        self.shape = float(shape)
        self.rate = float(rate)
        self.dim = 1

    def sample(self, n, g):
        return g.gamma(self.shape, 1.0 / self.rate, size=n), None

    def entropy(self):
        return float(stats.gamma.entropy(self.shape, scale=1.0 / self.rate))

    def log_prob(self, x):
        return stats.gamma.logpdf(np.asarray(x, dtype=float).reshape(-1), self.shape, scale=1.0 / self.rate)

    def score(self, x):
        """d log q / d (log shape, log rate), shape (n, 2)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        da = (math.log(self.rate) - special.digamma(self.shape) + np.log(x)) * self.shape
        db = (self.shape / self.rate - x) * self.rate
        return np.stack([da, db], axis=1)

    def apply_score(self, weighted_score, lr_scale, opt):
        up = opt.step(self.name + ".params", weighted_score) * lr_scale
        self.shape = float(np.clip(self.shape * math.exp(up[0]), 1e-2, 1e6))
        self.rate = float(np.clip(self.rate * math.exp(up[1]), 1e-2, 1e6))


class BetaBlock(_Block):
    pathwise = False

    def __init__(self, name, a, b):
        self.name = name
        self.a = float(a)
        self.b = float(b)
        self.dim = 1

    def sample(self, n, g):
        # keep draws off the boundary: small concentrations can return
        # exactly 0/1 in floating point, which kills the densities
        x = g.beta(self.a, self.b, size=n)
        return np.clip(x, 1e-9, 1.0 - 1e-9), None

    def entropy(self):
        return float(stats.beta.entropy(self.a, self.b))

    def log_prob(self, x):
        return stats.beta.logpdf(np.asarray(x, dtype=float).reshape(-1), self.a, self.b)

    def score(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        common = special.digamma(self.a + self.b)
        da = (np.log(x) - special.digamma(self.a) + common) * self.a
        db = (np.log1p(-x) - special.digamma(self.b) + common) * self.b
        return np.stack([da, db], axis=1)

    def apply_score(self, weighted_score, lr_scale, opt):
        up = opt.step(self.name + ".params", weighted_score) * lr_scale
        self.a = float(np.clip(self.a * math.exp(up[0]), 1e-2, 1e6))
        self.b = float(np.clip(self.b * math.exp(up[1]), 1e-2, 1e6))


class DirichletBlock(_Block):
    pathwise = False

    def __init__(self, name, conc):
        self.name = name
        self.conc = np.asarray(conc, dtype=float)
        self.dim = self.conc.size

    def sample(self, n, g):
        x = g.dirichlet(self.conc, size=n)
        x = np.clip(x, 1e-9, None)
        return x / x.sum(axis=1, keepdims=True), None

    def entropy(self):
        return float(stats.dirichlet.entropy(self.conc))

    def log_prob(self, x):
        return stats.dirichlet.logpdf(np.atleast_2d(x).T, self.conc)

    def score(self, x):
        x = np.atleast_2d(x)
        common = special.digamma(self.conc.sum())
        return (np.log(x) - special.digamma(self.conc) + common) * self.conc

    def apply_score(self, weighted_score, lr_scale, opt):
        up = opt.step(self.name + ".params", weighted_score) * lr_scale
        self.conc = np.clip(self.conc * np.exp(up), 1e-2, 1e6)


# ---------------------------------------------------------------------------
# posterior container
# ---------------------------------------------------------------------------


class _RmsProp:
    """Per-coordinate RMS scaling with geometric step decay: the step shrinks
    smoothly to ``final_frac`` of its initial size over ``total`` calls per
    key, which kills the stationary parameter noise of a constant step."""

    def __init__(self, step0=0.05, beta=0.9, total=None, final_frac=0.01):
        self.step0 = step0
        self.beta = beta
        self.total = total
        self.final_frac = final_frac
        self.v = {}
        self.k = {}

    def step(self, key, grad):
        grad = np.asarray(grad, dtype=float)
        v = self.v.get(key, np.zeros_like(grad))
        v = self.beta * v + (1 - self.beta) * grad * grad
        self.v[key] = v
        k = self.k.get(key, 0) + 1
        self.k[key] = k
        lr = self.step0
        if self.total:
            lr *= self.final_frac ** (k / self.total)
        return lr * grad / (np.sqrt(v) + 1e-8)


class MeanFieldPosterior:
    """Named mean-field blocks with sampling, entropy, and summaries."""

    def __init__(self, blocks):
        self.blocks = {b.name: b for b in blocks}

    def copy(self):
        import copy as _copy

        return MeanFieldPosterior([_copy.deepcopy(b) for b in self.blocks.values()])

    def sample(self, n, rng):
        g = as_generator(rng)
        draws = {}
        for name, b in self.blocks.items():
            x, _ = b.sample(n, g)
            draws[name] = x
        return draws

    def entropy(self, names=None):
        names = names or list(self.blocks)
        return float(sum(self.blocks[n].entropy() for n in names))

    def block(self, name):
        return self.blocks[name]

    def summaries(self):
        out = {}
        for name, b in self.blocks.items():
            if isinstance(b, MvnBlock):
                out[name] = {
                    "mean": b.mean.tolist(),
                    "sd": np.sqrt(np.diag(b.chol @ b.chol.T)).tolist(),
                }
            elif isinstance(b, DiagNormalBlock):
                out[name] = {"mean": b.mean.tolist(), "sd": b.sd.tolist()}
            elif isinstance(b, LogNormalBlock):
                out[name] = {"log_mean": b.mu, "log_sd": b.sigma}
            elif isinstance(b, GammaBlock):
                out[name] = {"shape": b.shape, "rate": b.rate}
            elif isinstance(b, BetaBlock):
                out[name] = {"a": b.a, "b": b.b}
            elif isinstance(b, DirichletBlock):
                out[name] = {"concentration": b.conc.tolist()}
        return out


# ---------------------------------------------------------------------------
# generic fitting loop
# ---------------------------------------------------------------------------


def fit_posterior(
    program, posterior, history, rng, steps=800, batch=16, step0=0.05,
    final_frac=0.01,
):
    """Stochastic VI on the accumulated history.  Mutates ``posterior``."""
    g = as_generator(rng)
    opt = _RmsProp(step0=step0, total=steps, final_frac=final_frac)
    baseline = 0.0
    have_baseline = False
    for it in range(steps):
        draws, zs = {}, {}
        for name, b in posterior.blocks.items():
            x, z = b.sample(batch, g)
            draws[name], zs[name] = x, z
        logp, path_grads = program.log_joint(draws, history)
        logq = sum(b.log_prob(draws[n]) for n, b in posterior.blocks.items())
        f = logp - logq
        if not np.all(np.isfinite(f)):
            raise EstimationFailure(f"non-finite ELBO integrand at VI step {it}")
        fb = float(f.mean())
        if not have_baseline:
            baseline, have_baseline = fb, True
        centred = f - baseline
        baseline = 0.9 * baseline + 0.1 * fb
        for name, b in posterior.blocks.items():
            if b.pathwise:
                if isinstance(b, LogNormalBlock):
                    b.apply_pathwise(path_grads[name], zs[name], draws[name], 1.0, opt)
                else:
                    b.apply_pathwise(path_grads[name], zs[name], 1.0, opt)
            else:
                w = (centred[:, None] * b.score(draws[name])).mean(axis=0)
                b.apply_score(w, 1.0, opt)
    return posterior


# ---------------------------------------------------------------------------
# per-model programs
# ---------------------------------------------------------------------------


class CESProgram:
    """Blocks: elasticity (Beta), weights (Dirichlet), scale (LogNormal)."""

    def __init__(self, model):
        self.model = model

    def initial_posterior(self):
        m = self.model
        return MeanFieldPosterior(
            [
                BetaBlock("rho", *m.rho_conc),
                DirichletBlock("alpha", m.alpha_conc),
                LogNormalBlock("u", m.log_u_mean, m.log_u_sd),
            ]
        )

    def theta_matrix(self, draws):
        return np.column_stack([draws["rho"], draws["alpha"], draws["u"]])

    def log_joint(self, draws, history):
        m = self.model
        theta = self.theta_matrix(draws)
        u = draws["u"]
        logp = (
            stats.beta.logpdf(draws["rho"], *m.rho_conc)
            + stats.dirichlet.logpdf(np.atleast_2d(draws["alpha"]).T, m.alpha_conc)
            + stats.norm.logpdf(np.log(u), m.log_u_mean, m.log_u_sd)
            - np.log(u)
        )
        du = -1.0 / u - (np.log(u) - m.log_u_mean) / (m.log_u_sd**2 * u)
        if history:
            designs = np.asarray([h[0] for h in history], dtype=float)
            ys = np.asarray([h[1] for h in history], dtype=float)
            ll, dll = m.history_log_lik_u(theta, designs, ys)
            logp = logp + ll
            du = du + dll
        return logp, {"u": du}


class MixedEffectsProgram:
    """Blocks: fixed effects (full-cov Gaussian), random-effect precision
    (Gamma), per-participant offsets (diagonal Gaussian), gain precision
    (Gamma), per-participant log gains (diagonal Gaussian).

    History entries are (design, y, participant)."""

    def __init__(self, model, participants=(0,)):
        self.model = model
        self.participants = tuple(participants)

    def initial_posterior(self):
        m = self.model
        blocks = [
            MvnBlock("theta", np.zeros(6), np.linalg.cholesky(m.prior_cov)),
            GammaBlock("tau_psi", m.a_psi, m.b_psi),
            GammaBlock("tau_k", m.a_k, m.b_k),
        ]
        for i in self.participants:
            # prior scale of psi and log k at the precision prior's mean
            blocks.append(DiagNormalBlock(f"psi_{i}", np.zeros(6), np.ones(6)))
            blocks.append(DiagNormalBlock(f"logk_{i}", [0.0], [1.0]))
        return MeanFieldPosterior(blocks)

    def log_joint(self, draws, history):
        m = self.model
        theta = draws["theta"]
        n = theta.shape[0]
        tau_psi = draws["tau_psi"]
        tau_k = draws["tau_k"]
        logp = (
            -0.5 * np.sum(theta * theta, axis=1) / m.prior_cov[0, 0]
            - 3.0 * np.log(2 * np.pi * m.prior_cov[0, 0])
            + stats.gamma.logpdf(tau_psi, m.a_psi, scale=1.0 / m.b_psi)
            + stats.gamma.logpdf(tau_k, m.a_k, scale=1.0 / m.b_k)
        )
        grads = {"theta": -theta / m.prior_cov[0, 0]}
        for i in self.participants:
            psi = draws[f"psi_{i}"]
            logk = draws[f"logk_{i}"][:, 0]
            logp = logp + np.sum(
                -0.5 * psi * psi * tau_psi[:, None]
                + 0.5 * np.log(tau_psi)[:, None]
                - 0.5 * _LOG_2PI,
                axis=1,
            )
            logp = logp + (
                -0.5 * logk * logk * tau_k + 0.5 * np.log(tau_k) - 0.5 * _LOG_2PI
            )
            grads[f"psi_{i}"] = -psi * tau_psi[:, None]
            grads[f"logk_{i}"] = (-logk * tau_k)[:, None]
        for d, y, part in history:
            xd = m.design_vector(d)
            psi = draws[f"psi_{part}"]
            logk = draws[f"logk_{part}"][:, 0]
            k = np.exp(logk)
            loc = k * ((theta + psi) @ xd)
            logp = logp + censored_head_log_prob(
                np.full(n, y), loc, m.noise_sd, m.eps
            )
            d_loc, _ = censored_head_grads(
                np.full(n, y), loc, np.full(n, m.noise_sd), m.eps
            )
            grads["theta"] = grads["theta"] + (d_loc * k)[:, None] * xd
            grads[f"psi_{part}"] = grads[f"psi_{part}"] + (d_loc * k)[:, None] * xd
            grads[f"logk_{part}"] = grads[f"logk_{part}"] + (d_loc * loc)[:, None]
        return logp, grads


class ABTestProgram:
    """Single full-covariance Gaussian block; conjugate, so it doubles as the
    correctness check for the fitting loop."""

    def __init__(self, model):
        self.model = model

    def initial_posterior(self):
        return MeanFieldPosterior(
            [MvnBlock("theta", np.zeros(2), np.linalg.cholesky(self.model.prior_cov))]
        )

    def log_joint(self, draws, history):
        m = self.model
        theta = draws["theta"]
        prec = np.linalg.inv(m.prior_cov)
        logp = -0.5 * np.einsum("ni,ij,nj->n", theta, prec, theta)
        grads = {"theta": -theta @ prec.T}
        for d, y in history:
            x = m.design_matrix(d)
            resid = y - theta @ x.T
            logp = logp - 0.5 * np.sum(resid * resid, axis=1) / m.obs_sd**2
            grads["theta"] = grads["theta"] + (resid / m.obs_sd**2) @ x
        return logp, grads


def make_program(model, **kw):
    if model.name == "ces":
        return CESProgram(model)
    if model.name == "mixed_effects":
        return MixedEffectsProgram(model, **kw)
    if model.name == "ab_test":
        return ABTestProgram(model)
    raise ConfigurationError(f"no posterior program for {model.name}")
