"""Guide infrastructure: named parameter blocks, constraint transforms, and
the shared Gaussian / censored-slider density machinery.

Every guide keeps one flat unconstrained parameter vector ``phi`` split into
named blocks.  Constrained quantities (covariance factors, probabilities,
positive scales) are stored unconstrained and mapped through bijections, so
any phi produced by gradient training is valid.  Training mutates phi through
``set_phi``; all read operations are pure, so estimation can run concurrently
on a frozen snapshot.
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from ..errors import ContractError
from ..rng import as_generator

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# constraint transforms (bijective; round trips are exact)
# ---------------------------------------------------------------------------


class Identity:
    def __init__(self, shape=()):
        self.shape = tuple(shape) if not isinstance(shape, int) else (shape,)
        self.size = int(np.prod(self.shape)) if self.shape else 1

    def constrain(self, u):
        return u.reshape(self.shape) if self.shape else float(u[0])

    def unconstrain(self, v):
        return np.asarray(v, dtype=float).reshape(self.size)


class Positive:
    """Scalar or vector positive parameter stored as its log."""

    def __init__(self, shape=()):
        self.shape = tuple(shape) if not isinstance(shape, int) else (shape,)
        self.size = int(np.prod(self.shape)) if self.shape else 1

    def constrain(self, u):
        v = np.exp(u)
        return v.reshape(self.shape) if self.shape else float(v[0])

    def unconstrain(self, v):
        return np.log(np.asarray(v, dtype=float)).reshape(self.size)


class CholeskyFactor:
    """Lower-triangular factor of a k x k PD matrix; diagonal stored as log."""

    def __init__(self, k):
        self.k = int(k)
        self.size = self.k * (self.k + 1) // 2
        self._rows, self._cols = np.tril_indices(self.k)
        self._diag_mask = self._rows == self._cols

    def constrain(self, u):
        vals = np.array(u, dtype=float)
        vals[self._diag_mask] = np.exp(vals[self._diag_mask])
        L = np.zeros((self.k, self.k))
        L[self._rows, self._cols] = vals
        return L

    def unconstrain(self, L):
        """Expects a lower-triangular factor (use Guide.set_cov for a
        covariance; a diagonal matrix is ambiguous between the two)."""
        L = np.asarray(L, dtype=float)
        if not np.allclose(L, np.tril(L)) or np.any(np.diag(L) <= 0):
            raise ValueError("not a lower-triangular factor with positive diagonal")
        vals = L[self._rows, self._cols].copy()
        vals[self._diag_mask] = np.log(vals[self._diag_mask])
        return vals

    def grad_chain(self, grad_L, u):
        """Map d/dL (lower-tri gradient matrix) to d/du for packed params."""
        g = grad_L[self._rows, self._cols].copy()
        diag_vals = np.exp(np.asarray(u, dtype=float)[self._diag_mask])
        g[self._diag_mask] *= diag_vals
        return g


class SimplexPoint:
    """Point on the open k-simplex via centered softmax (last logit fixed 0)."""

    def __init__(self, k):
        self.k = int(k)
        self.size = self.k - 1

    def constrain(self, u):
        z = np.concatenate([u, [0.0]])
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def unconstrain(self, p):
        p = np.asarray(p, dtype=float)
        return np.log(p[:-1]) - np.log(p[-1])

    def jacobian(self, u):
        """d p_i / d u_j, shape (k, k-1)."""
        p = self.constrain(u)
        jac = -np.outer(p, p[:-1])
        jac[np.arange(self.size), np.arange(self.size)] += p[:-1]
        return jac


# ---------------------------------------------------------------------------
# guide base
# ---------------------------------------------------------------------------


class Guide:
    """Base guide: flat unconstrained phi with named, transformed blocks."""

    role = ""
    family = ""
    model_name = ""

    def __init__(self, blocks):
        self._blocks = {}
        offset = 0
        for name, transform in blocks:
            self._blocks[name] = (offset, transform)
            offset += transform.size
        self.phi = np.zeros(offset)

    # -- parameter access -------------------------------------------------
    @property
    def n_params(self):
        return self.phi.size

    def block_slice(self, name):
        off, tr = self._blocks[name]
        return slice(off, off + tr.size)

    def raw(self, name):
        off, tr = self._blocks[name]
        return self.phi[off : off + tr.size]

    def value(self, name):
        off, tr = self._blocks[name]
        return tr.constrain(self.phi[off : off + tr.size])

    def set_value(self, name, v):
        off, tr = self._blocks[name]
        self.phi[off : off + tr.size] = tr.unconstrain(v)

    def set_cov(self, name, cov):
        """Set a Cholesky-factor block from a covariance matrix."""
        self.set_value(name, np.linalg.cholesky(np.asarray(cov, dtype=float)))

    def set_phi(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != self.phi.shape:
            raise ContractError(
                f"phi has {phi.size} entries, guide expects {self.phi.size}"
            )
        self.phi = phi.copy()
        self._version = getattr(self, "_version", 0) + 1

    def copy(self):
        import copy as _copy

        g = _copy.copy(self)
        g.phi = self.phi.copy()
        return g

    # -- serialization ------------------------------------------------------
    def to_json(self):
        return json.dumps(
            {
                "family": self.family,
                "model": self.model_name,
                "role": self.role,
                "blocks": {
                    name: {"offset": off, "size": tr.size}
                    for name, (off, tr) in self._blocks.items()
                },
                "phi": self.phi.tolist(),
            }
        )

    def load_phi_json(self, payload):
        obj = json.loads(payload) if isinstance(payload, str) else payload
        if obj.get("family") != self.family:
            raise ContractError(
                f"checkpoint family {obj.get('family')!r} != guide {self.family!r}"
            )
        self.set_phi(np.asarray(obj["phi"], dtype=float))
        return self

    # -- contract -----------------------------------------------------------
    def log_prob(self, target, cond, d):
        raise NotImplementedError

    def grad_log_prob(self, target, cond, d):
        """Gradient of log_prob w.r.t. unconstrained phi, shape (n, P)."""
        raise NotImplementedError

    def eval_and_grad(self, target, cond, d):
        return self.log_prob(target, cond, d), self.grad_log_prob(target, cond, d)


class Critic(Guide):
    """A trainable scalar function of (y, theta, d) rather than a density.

    ``log_prob`` returns the critic value so the shared training and
    finite-difference machinery applies unchanged.
    """


# ---------------------------------------------------------------------------
# shared Gaussian pieces
# ---------------------------------------------------------------------------


def gaussian_log_prob(resid, chol):
    """log N(resid; 0, L L^T) for resid of shape (..., k)."""
    k = chol.shape[0]
    w = solve_triangular(chol, resid.reshape(-1, k).T, lower=True).T
    quad = np.sum(w * w, axis=-1).reshape(resid.shape[:-1])
    logdet = np.sum(np.log(np.diag(chol)))
    return -0.5 * quad - logdet - 0.5 * k * _LOG_2PI


class ConditionalGaussian(Guide):
    """Gaussian guide q(target | features) = N(mean(features), L L^T).

    Subclasses provide the mean map and its parameter Jacobian; the
    covariance factor lives in block ``cov_chol``.  Supplies analytic
    phi-gradients, target-gradients, and reparameterized sampling with the
    pathwise Jacobians needed to differentiate through draws.
    """

    dim = 0  # target dimension

    # subclass contract ----------------------------------------------------
    def mean(self, cond, d):
        """Per-row mean, shape (n, dim)."""
        raise NotImplementedError

    def mean_jac(self, cond, d):
        """d mean / d phi, shape (n, dim, P) (zeros outside mean blocks)."""
        raise NotImplementedError

    # shared ----------------------------------------------------------------
    def _chol_cache(self):
        key = self.phi[self.block_slice("cov_chol")].tobytes()
        cache = getattr(self, "_chol_state", None)
        if cache is None or cache[0] != key:
            L = self.value("cov_chol")
            # tiny triangular matrices: explicit inverse beats repeated solves
            inv_l = np.linalg.inv(L)
            logdet = float(np.sum(np.log(np.diag(L))))
            cache = (key, L, inv_l, logdet)
            self._chol_state = cache
        return cache[1], cache[2], cache[3]

    @property
    def chol(self):
        return self._chol_cache()[0]

    def _inv_chol(self):
        return self._chol_cache()[1]

    def log_prob(self, target, cond, d):
        theta = np.atleast_2d(target)
        resid = theta - self.mean(cond, d)
        return gaussian_log_prob(resid, self.chol)

    def _mean_param_grads(self, grads, lam, cond, d):
        """Accumulate lam . (d mean / d phi) into grads; subclasses with a
        sparse mean map override this instead of building the dense Jacobian."""
        jac = self.mean_jac(cond, d)  # (n, k, P)
        grads += np.einsum("nk,nkp->np", lam, jac)

    def eval_and_grad(self, target, cond, d):
        theta = np.atleast_2d(target)
        L, inv_l, logdet = self._chol_cache()
        resid = theta - self.mean(cond, d)
        w = resid @ inv_l.T
        lam = w @ inv_l
        vals = -0.5 * np.sum(w * w, axis=1) - logdet - 0.5 * self.dim * _LOG_2PI
        n = theta.shape[0]
        grads = np.zeros((n, self.n_params))
        self._mean_param_grads(grads, lam, cond, d)
        # covariance factor block: d log q / d L = L^-T (w w^T - I)
        tr = self._blocks["cov_chol"][1]
        sl = self.block_slice("cov_chol")
        outer = np.einsum("ni,nj->nij", w, w) - np.eye(self.dim)
        grad_L = np.einsum("ab,nbc->nac", inv_l.T, outer)
        packed = grad_L[:, tr._rows, tr._cols]
        packed[:, tr._diag_mask] *= np.diag(L)
        grads[:, sl] = packed
        return vals, grads

    def grad_log_prob(self, target, cond, d):
        return self.eval_and_grad(target, cond, d)[1]

    def grad_log_prob_target(self, target, cond, d):
        """d log q / d target, shape (n, k)."""
        theta = np.atleast_2d(target)
        inv_l = self._inv_chol()
        resid = theta - self.mean(cond, d)
        return -(resid @ inv_l.T) @ inv_l

    def log_prob_nm(self, theta_nm, cond, d):
        """log q for an (n, m, k) array of targets against n conditioning rows."""
        mu = self.mean(cond, d)
        return gaussian_log_prob(theta_nm - mu[:, None, :], self.chol)

    # reparameterized sampling ------------------------------------------------
    def sample_conditional(self, cond, d, m, rng):
        """m draws per conditioning row: returns (theta (n, m, k), z)."""
        g = as_generator(rng)
        mu = self.mean(cond, d)
        n = mu.shape[0]
        z = g.standard_normal((n, m, self.dim))
        return mu[:, None, :] + z @ self.chol.T, z

    def reparam_jac(self, cond, d, z):
        """d theta / d phi for theta = mean + L z, shape (n, m, k, P)."""
        mu_jac = self.mean_jac(cond, d)  # (n, k, P)
        n, m, k = z.shape
        out = np.broadcast_to(mu_jac[:, None], (n, m, k, self.n_params)).copy()
        tr = self._blocks["cov_chol"][1]
        sl = self.block_slice("cov_chol")
        u = self.raw("cov_chol")
        rows, cols = tr._rows, tr._cols
        diag = tr._diag_mask
        L = self.chol
        # d theta_i / d L_(r,c) = delta_(i,r) z_c   (times L_rr for log-diag)
        scale = np.ones(tr.size)
        scale[diag] = np.diag(L)
        block = np.zeros((n, m, k, tr.size))
        block[:, :, rows, np.arange(tr.size)] = z[:, :, cols] * scale
        out[..., sl] = block
        return out


class ScalarConditionalGaussian(Guide):
    """1-D Gaussian guide with per-row mean and scale maps.

    Subclasses provide ``mean_sd(cond, d) -> (m, s)`` and
    ``mean_sd_jacs(cond, d) -> (dm, ds)`` with dm, ds of shape (n, P);
    everything else (density, phi/target gradients, reparameterized draws)
    is shared.
    """

    dim = 1

    def mean_sd(self, cond, d):
        raise NotImplementedError

    def mean_sd_jacs(self, cond, d):
        raise NotImplementedError

    def _target_col(self, target):
        t = np.asarray(target, dtype=float)
        return t[:, 0] if t.ndim == 2 else np.atleast_1d(t)

    def log_prob(self, target, cond, d):
        t = self._target_col(target)
        m, s = self.mean_sd(cond, d)
        z = (t - m) / s
        return -0.5 * z * z - np.log(s) - 0.5 * _LOG_2PI

    def grad_log_prob(self, target, cond, d):
        t = self._target_col(target)
        m, s = self.mean_sd(cond, d)
        dm, ds = self.mean_sd_jacs(cond, d)
        r = t - m
        d_mean = r / s**2
        d_sd = (r * r / s**2 - 1.0) / s
        return d_mean[:, None] * dm + d_sd[:, None] * ds

    def grad_log_prob_target(self, target, cond, d):
        t = self._target_col(target)
        m, s = self.mean_sd(cond, d)
        return (-(t - m) / s**2)[:, None]

    def log_prob_nm(self, theta_nm, cond, d):
        m, s = self.mean_sd(cond, d)
        z = (theta_nm[:, :, 0] - m[:, None]) / s[:, None]
        return -0.5 * z * z - np.log(s)[:, None] - 0.5 * _LOG_2PI

    def sample_conditional(self, cond, d, m_draws, rng):
        g = as_generator(rng)
        m, s = self.mean_sd(cond, d)
        z = g.standard_normal((m.shape[0], m_draws, 1))
        theta = m[:, None, None] + s[:, None, None] * z
        return theta, z

    def reparam_jac(self, cond, d, z):
        # d theta / d phi = dm + z * ds, shaped (n, m, 1, P)
        dm, ds = self.mean_sd_jacs(cond, d)
        return dm[:, None, None, :] + z[..., None] * ds[:, None, None, :]


# ---------------------------------------------------------------------------
# censored-slider density head
# ---------------------------------------------------------------------------


def norm_logpdf(z):
    return -0.5 * z * z - 0.5 * _LOG_2PI


def ndtr_ratio(z):
    """phi(z) / Phi(z), stable in the left tail."""
    return np.exp(norm_logpdf(z) - special.log_ndtr(z))


def censored_head_log_prob(y, mean, sd, eps):
    """log density/mass of the push-forward of N(mean, sd^2) through the
    censored sigmoid, elementwise over aligned arrays."""
    y = np.asarray(y, dtype=float)
    mean, sd, y = np.broadcast_arrays(mean, sd, y)
    lo, hi = special.logit(eps), special.logit(1.0 - eps)
    z_lo = (lo - mean) / sd
    z_hi = (hi - mean) / sd
    yc = np.clip(y, eps, 1.0 - eps)
    x = special.logit(yc)
    interior = norm_logpdf((x - mean) / sd) - np.log(sd) - np.log(yc * (1.0 - yc))
    out = np.where(y <= eps, special.log_ndtr(z_lo), interior)
    return np.where(y >= 1.0 - eps, special.log_ndtr(-z_hi), out)


def censored_head_grads(y, mean, sd, eps):
    """(d/d mean, d/d sd) of :func:`censored_head_log_prob`, elementwise."""
    y = np.asarray(y, dtype=float)
    mean, sd, y = np.broadcast_arrays(np.asarray(mean, float), np.asarray(sd, float), y)
    lo, hi = special.logit(eps), special.logit(1.0 - eps)
    d_mean = np.empty_like(y)
    d_sd = np.empty_like(y)
    at_lo = y <= eps
    at_hi = y >= 1.0 - eps
    inside = ~(at_lo | at_hi)
    if np.any(inside):
        x = special.logit(y[inside])
        r = (x - mean[inside]) / sd[inside]
        d_mean[inside] = r / sd[inside]
        d_sd[inside] = (r * r - 1.0) / sd[inside]
    if np.any(at_lo):
        z = (lo - mean[at_lo]) / sd[at_lo]
        ratio = ndtr_ratio(z)
        d_mean[at_lo] = -ratio / sd[at_lo]
        d_sd[at_lo] = -ratio * z / sd[at_lo]
    if np.any(at_hi):
        w = (mean[at_hi] - hi) / sd[at_hi]  # log Phi(w)
        ratio = ndtr_ratio(w)
        d_mean[at_hi] = ratio / sd[at_hi]
        d_sd[at_hi] = -ratio * w / sd[at_hi]
    return d_mean, d_sd
