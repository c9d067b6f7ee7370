"""Primitive probability distributions and deterministic transforms.

Every model and guide in the package is built from these pieces.  All
distributions are immutable values; operations are pure given a stream from
:mod:`veig.rng`, so unrestricted concurrent use is safe.

Densities are returned in nats.  Covariances are held as lower-triangular
Cholesky factors with strictly positive diagonal, which keeps them positive
definite by construction.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special, stats

from .errors import CapabilityError, DomainError, ParameterError
from .rng import as_generator

__all__ = [
    "Normal",
    "MultivariateNormal",
    "LogNormal",
    "TruncatedNormal",
    "Bernoulli",
    "Beta",
    "Dirichlet",
    "Gamma",
    "CensoredSigmoidNormal",
    "sigmoid",
    "logit",
    "censored_sigmoid",
    "kl_closed_form",
    "reparam_sample",
]

_LOG_2PI = math.log(2.0 * math.pi)


def sigmoid(x):
    """Standard logistic function, stable for large |x|."""
    return special.expit(x)


def logit(p):
    """Inverse of :func:`sigmoid`: log p - log(1-p)."""
    return special.logit(p)


def censored_sigmoid(x, eps):
    """Sigmoid squashed into [eps, 1-eps] with hard censoring at the ends.

    Returns eps for x <= logit(eps), 1-eps for x >= logit(1-eps), and
    sigmoid(x) in between.  Total on the reals; monotone non-decreasing.
    """
    if not 0.0 < eps < 0.5:
        raise ParameterError(f"censoring level must lie in (0, 0.5), got {eps}")
    x = np.asarray(x, dtype=float)
    lo, hi = logit(eps), logit(1.0 - eps)
    out = sigmoid(np.clip(x, lo, hi))
    # exact atom values, immune to sigmoid round-off at the edges
    out = np.where(x <= lo, eps, out)
    out = np.where(x >= hi, 1.0 - eps, out)
    return out if out.ndim else float(out)


def _chol_from_cov(cov):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ParameterError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise ParameterError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ParameterError("covariance is not positive definite") from exc


class Normal:
    """Univariate normal N(loc, scale^2).  scale == 0 is a point mass
    (sampling only; densities require scale > 0)."""

    def __init__(self, loc, scale):
        if scale < 0:
            raise ParameterError(f"scale must be >= 0, got {scale}")
        self.loc = float(loc)
        self.scale = float(scale)

    def log_prob(self, x):
        if self.scale == 0.0:
            raise ParameterError("point-mass Normal has no density")
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return -0.5 * z * z - math.log(self.scale) - 0.5 * _LOG_2PI

    def sample(self, rng, n=None):
        g = as_generator(rng)
        if self.scale == 0.0:
            return np.full(() if n is None else n, self.loc)
        return g.normal(self.loc, self.scale, size=n)

    def reparam_sample(self, rng, n=None):
        g = as_generator(rng)
        z = g.standard_normal(size=n)
        return self.loc + self.scale * z, z

    def entropy(self):
        return 0.5 * (1.0 + _LOG_2PI) + math.log(self.scale)


class MultivariateNormal:
    """Multivariate normal, parameterized by mean and covariance (or its
    lower Cholesky factor via ``chol=``)."""

    def __init__(self, mean, cov=None, chol=None):
        self.mean = np.asarray(mean, dtype=float)
        if self.mean.ndim != 1:
            raise ParameterError("mean must be a vector")
        if (cov is None) == (chol is None):
            raise ParameterError("pass exactly one of cov= or chol=")
        if chol is not None:
            L = np.asarray(chol, dtype=float)
            if np.any(np.diag(L) <= 0):
                raise ParameterError("Cholesky factor needs a positive diagonal")
            self.chol = np.tril(L)
        else:
            self.chol = _chol_from_cov(cov)
        if self.chol.shape[0] != self.mean.shape[0]:
            raise ParameterError("mean / covariance dimension mismatch")
        self.dim = self.mean.shape[0]

    @property
    def cov(self):
        return self.chol @ self.chol.T

    def log_prob(self, x):
        from scipy.linalg import solve_triangular

        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[-1] != self.dim:
            raise DomainError(f"expected dimension {self.dim}, got {x.shape[-1]}")
        resid = (x - self.mean).T
        w = solve_triangular(self.chol, resid, lower=True)
        quad = np.sum(w * w, axis=0)
        logdet = np.sum(np.log(np.diag(self.chol)))
        out = -0.5 * quad - logdet - 0.5 * self.dim * _LOG_2PI
        return float(out[0]) if single else out

    def sample(self, rng, n=None):
        g = as_generator(rng)
        shape = (self.dim,) if n is None else (n, self.dim)
        z = g.standard_normal(size=shape)
        return self.mean + z @ self.chol.T

    def reparam_sample(self, rng, n=None):
        g = as_generator(rng)
        shape = (self.dim,) if n is None else (n, self.dim)
        z = g.standard_normal(size=shape)
        return self.mean + z @ self.chol.T, z

    def entropy(self):
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return 0.5 * (self.dim * (1.0 + _LOG_2PI) + logdet)


class LogNormal:
    """log X ~ N(mu, sigma^2)."""

    def __init__(self, mu, sigma):
        if sigma <= 0:
            raise ParameterError(f"sigma must be > 0, got {sigma}")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def log_prob(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("LogNormal support is (0, inf)")
        z = (np.log(x) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - 0.5 * _LOG_2PI - np.log(x)

    def sample(self, rng, n=None):
        g = as_generator(rng)
        return np.exp(g.normal(self.mu, self.sigma, size=n))

    def reparam_sample(self, rng, n=None):
        g = as_generator(rng)
        z = g.standard_normal(size=n)
        return np.exp(self.mu + self.sigma * z), z

    def entropy(self):
        return self.mu + 0.5 * (1.0 + _LOG_2PI) + math.log(self.sigma)


class TruncatedNormal:
    """Normal(loc, scale^2) truncated to (low, high)."""

    def __init__(self, loc, scale, low=0.0, high=np.inf):
        if scale <= 0:
            raise ParameterError(f"scale must be > 0, got {scale}")
        if not low < high:
            raise ParameterError("need low < high")
        self.loc, self.scale = float(loc), float(scale)
        self.low, self.high = float(low), float(high)
        a = (self.low - self.loc) / self.scale
        b = (self.high - self.loc) / self.scale
        self._a, self._b = a, b
        # log normalizing constant, stable in both tails
        self._log_z = _log_ndtr_diff(a, b)

    def log_prob(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < self.low) | (x > self.high)):
            raise DomainError("value outside truncation interval")
        z = (x - self.loc) / self.scale
        return (-0.5 * z * z - 0.5 * _LOG_2PI - math.log(self.scale)) - self._log_z

    def sample(self, rng, n=None):
        g = as_generator(rng)
        return stats.truncnorm.rvs(
            self._a, self._b, loc=self.loc, scale=self.scale, size=n, random_state=g
        )


def _log_ndtr_diff(a, b):
    """log(Phi(b) - Phi(a)) computed stably for a < b."""
    # work on the side with more mass to avoid cancellation
    if a > 0:
        return _log_ndtr_diff(-b, -a)
    log_phi_b = special.log_ndtr(b)
    log_phi_a = special.log_ndtr(a)
    return log_phi_b + np.log1p(-np.exp(log_phi_a - log_phi_b))


class Bernoulli:
    def __init__(self, p):
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"probability must be in [0,1], got {p}")
        self.p = float(p)

    def log_prob(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x != 0) & (x != 1)):
            raise DomainError("Bernoulli support is {0, 1}")
        with np.errstate(divide="ignore"):
            return np.where(x == 1, np.log(self.p), np.log1p(-self.p))

    def sample(self, rng, n=None):
        g = as_generator(rng)
        return (g.random(size=n) < self.p).astype(float)


class Beta:
    def __init__(self, a, b):
        if a <= 0 or b <= 0:
            raise ParameterError("Beta concentrations must be > 0")
        self.a, self.b = float(a), float(b)

    def log_prob(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x <= 0) | (x >= 1)):
            raise DomainError("Beta support is (0, 1)")
        return stats.beta.logpdf(x, self.a, self.b)

    def sample(self, rng, n=None):
        return as_generator(rng).beta(self.a, self.b, size=n)

    def entropy(self):
        return stats.beta.entropy(self.a, self.b)


class Dirichlet:
    def __init__(self, conc):
        self.conc = np.asarray(conc, dtype=float)
        if self.conc.ndim != 1 or np.any(self.conc <= 0):
            raise ParameterError("Dirichlet concentration must be a positive vector")

    def log_prob(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0) or not np.allclose(np.sum(x, axis=-1), 1.0, atol=1e-8):
            raise DomainError("Dirichlet support is the open simplex")
        return stats.dirichlet.logpdf(np.moveaxis(x, -1, 0), self.conc)

    def sample(self, rng, n=None):
        g = as_generator(rng)
        return g.dirichlet(self.conc, size=n)

    def entropy(self):
        return stats.dirichlet.entropy(self.conc)


class Gamma:
    """Shape/rate parametrization."""

    def __init__(self, shape, rate):
        if shape <= 0 or rate <= 0:
            raise ParameterError("Gamma shape and rate must be > 0")
        self.shape, self.rate = float(shape), float(rate)

    def log_prob(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("Gamma support is (0, inf)")
        return stats.gamma.logpdf(x, self.shape, scale=1.0 / self.rate)

    def sample(self, rng, n=None):
        return as_generator(rng).gamma(self.shape, 1.0 / self.rate, size=n)

    def entropy(self):
        return stats.gamma.entropy(self.shape, scale=1.0 / self.rate)


class CensoredSigmoidNormal:
    """Push-forward of N(loc, scale^2) through the censored sigmoid.

    Values in the open interval (eps, 1-eps) carry the transformed density;
    the end points eps and 1-eps are atoms carrying the censored tail mass.
    """

    def __init__(self, loc, scale, eps):
        if not 0.0 < eps < 0.5:
            raise ParameterError(f"censoring level must lie in (0, 0.5), got {eps}")
        if np.any(np.asarray(scale) <= 0):
            raise ParameterError("scale must be > 0")
        self.loc = np.asarray(loc, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.eps = float(eps)
        self._lo = logit(eps)
        self._hi = logit(1.0 - eps)

    def atom_probs(self):
        """(P(y = eps), P(y = 1-eps))."""
        z_lo = (self._lo - self.loc) / self.scale
        z_hi = (self._hi - self.loc) / self.scale
        return special.ndtr(z_lo), special.ndtr(-z_hi)

    def log_prob(self, y):
        y = np.asarray(y, dtype=float)
        if np.any((y < self.eps) | (y > 1.0 - self.eps)):
            raise DomainError("value outside [eps, 1-eps]")
        loc, scale = np.broadcast_arrays(self.loc, self.scale)
        loc, scale, y = np.broadcast_arrays(loc, scale, y)
        z_lo = (self._lo - loc) / scale
        z_hi = (self._hi - loc) / scale
        # interior: base-normal density at logit(y) times |d logit/dy|
        x = logit(np.clip(y, self.eps, 1.0 - self.eps))
        zi = (x - loc) / scale
        interior = (
            -0.5 * zi * zi - 0.5 * _LOG_2PI - np.log(scale) - np.log(y * (1.0 - y))
        )
        out = np.where(y <= self.eps, special.log_ndtr(z_lo), interior)
        out = np.where(y >= 1.0 - self.eps, special.log_ndtr(-z_hi), out)
        return out if out.ndim else float(out)

    def _noise_shape(self, n):
        # n=None with vector parameters means one draw per element
        if n is not None:
            return n
        return np.broadcast(self.loc, self.scale).shape

    def sample(self, rng, n=None):
        g = as_generator(rng)
        eta = g.normal(size=self._noise_shape(n)) * self.scale + self.loc
        return censored_sigmoid(eta, self.eps)

    def reparam_sample(self, rng, n=None):
        g = as_generator(rng)
        z = g.standard_normal(size=self._noise_shape(n))
        return censored_sigmoid(self.loc + self.scale * z, self.eps), z


def reparam_sample(dist, rng, n=None):
    """Location-scale draw plus its base noise, for kinds that support it."""
    if not hasattr(dist, "reparam_sample"):
        raise CapabilityError(
            f"{type(dist).__name__} has no location-scale reparameterization"
        )
    return dist.reparam_sample(rng, n)


def kl_closed_form(p, q):
    """Exact KL(p || q) in nats for Gaussian pairs of equal dimension."""
    if isinstance(p, Normal) and isinstance(q, Normal):
        if p.scale <= 0 or q.scale <= 0:
            raise ParameterError("KL needs non-degenerate scales")
        r = p.scale / q.scale
        return math.log(q.scale / p.scale) + 0.5 * (
            r * r + ((p.loc - q.loc) / q.scale) ** 2 - 1.0
        )
    if isinstance(p, MultivariateNormal) and isinstance(q, MultivariateNormal):
        if p.dim != q.dim:
            raise CapabilityError("KL needs equal dimensions")
        from scipy.linalg import solve_triangular

        k = p.dim
        # tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
        m = solve_triangular(q.chol, p.chol, lower=True)
        tr = np.sum(m * m)
        delta = solve_triangular(q.chol, q.mean - p.mean, lower=True)
        quad = float(delta @ delta)
        logdet = 2.0 * (
            np.sum(np.log(np.diag(q.chol))) - np.sum(np.log(np.diag(p.chol)))
        )
        return 0.5 * (tr + quad - k + logdet)
    raise CapabilityError(
        f"closed-form KL supports Gaussian pairs only, got {type(p).__name__}/{type(q).__name__}"
    )
