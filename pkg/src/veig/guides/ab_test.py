"""Variational families and critics for the A/B test model.

The posterior/proposal family is an affine map from the responses to a full-
covariance Gaussian over the two group means; the marginal family is a full-
covariance Gaussian over the ten responses.  Both contain the conjugate
truth.  The critics are the quadratic forms used by the ratio-estimation and
Donsker-Varadhan baselines, parameterized to start at exactly zero.
"""

from __future__ import annotations

import numpy as np

from .base import CholeskyFactor, ConditionalGaussian, Critic, Guide, Identity


class ABPosteriorGuide(ConditionalGaussian):
    """q(theta | y) = N(A y, Sigma) with A a (2 x 10) response map."""

    family = "ab_posterior"
    model_name = "ab_test"
    dim = 2

    def __init__(self, model, role="posterior"):
        self.role = role
        self.n_obs = model.n_participants
        super().__init__(
            [
                ("map", Identity((self.dim, self.n_obs))),
                ("cov_chol", CholeskyFactor(self.dim)),
            ]
        )
        self.set_value("map", np.zeros((self.dim, self.n_obs)))
        self.set_cov("cov_chol", model.prior_cov)

    def mean(self, cond, d):
        y = np.atleast_2d(cond)
        return y @ self.value("map").T

    def mean_jac(self, cond, d):
        y = np.atleast_2d(cond)
        n = y.shape[0]
        jac = np.zeros((n, self.dim, self.n_params))
        sl = self.block_slice("map")
        # d mean_i / d A_(i, j) = y_j
        block = np.zeros((n, self.dim, self.dim, self.n_obs))
        for i in range(self.dim):
            block[:, i, i, :] = y
        jac[..., sl] = block.reshape(n, self.dim, -1)
        return jac

    def _mean_param_grads(self, grads, lam, cond, d):
        y = np.atleast_2d(cond)
        sl = self.block_slice("map")
        grads[:, sl] = np.einsum("nk,no->nko", lam, y).reshape(y.shape[0], -1)

    def set_from_conjugacy(self, model, d):
        """Set phi to the exact conditional posterior for this design."""
        a, cov = model.conjugate_posterior(d)
        self.set_value("map", a)
        self.set_cov("cov_chol", cov)
        return self


class ABMarginalGuide(ConditionalGaussian):
    """q(y) = N(mu, Sigma) over the ten responses (conditioning-free)."""

    family = "ab_marginal"
    model_name = "ab_test"
    role = "marginal"

    def __init__(self, model):
        self.dim = model.n_participants
        super().__init__(
            [("loc", Identity((self.dim,))), ("cov_chol", CholeskyFactor(self.dim))]
        )
        self.set_value("loc", np.zeros(self.dim))
        self.set_value("cov_chol", np.eye(self.dim))

    def mean(self, cond, d):
        n = 1 if cond is None else np.atleast_2d(cond).shape[0]
        return np.broadcast_to(self.value("loc"), (n, self.dim))

    def mean_jac(self, cond, d):
        n = 1 if cond is None else np.atleast_2d(cond).shape[0]
        jac = np.zeros((n, self.dim, self.n_params))
        sl = self.block_slice("loc")
        jac[:, np.arange(self.dim), sl.start + np.arange(self.dim)] = 1.0
        return jac

    def _mean_param_grads(self, grads, lam, cond, d):
        grads[:, self.block_slice("loc")] = lam

    def log_prob(self, target, cond, d):
        # target is y itself; conditioning is unused
        theta = np.atleast_2d(target)
        return super().log_prob(theta, theta, d)

    def grad_log_prob(self, target, cond, d):
        theta = np.atleast_2d(target)
        return super().grad_log_prob(theta, theta, d)

    def eval_and_grad(self, target, cond, d):
        theta = np.atleast_2d(target)
        return super().eval_and_grad(theta, theta, d)

    def set_moments(self, mean, cov):
        self.set_value("loc", mean)
        self.set_cov("cov_chol", cov)
        return self


class SymmetricMatrix:
    """Packed symmetric k x k matrix (upper triangle, unconstrained)."""

    def __init__(self, k):
        self.k = int(k)
        self.size = self.k * (self.k + 1) // 2
        self._rows, self._cols = np.triu_indices(self.k)
        self._off_diag = self._rows != self._cols

    def constrain(self, u):
        m = np.zeros((self.k, self.k))
        m[self._rows, self._cols] = u
        m[self._cols, self._rows] = u
        return m

    def unconstrain(self, m):
        return np.asarray(m, dtype=float)[self._rows, self._cols].copy()

    def quad_grad(self, v):
        """d (v^T M v) / d u for packed entries, batched over rows of v."""
        outer = v[:, self._rows] * v[:, self._cols]
        outer[:, self._off_diag] *= 2.0
        return outer


class ABLfireCritic(Critic):
    """log ratio estimate b - (y - c)^T Q (y - c), Q symmetric."""

    family = "ab_lfire"
    model_name = "ab_test"
    role = "lfire"

    def __init__(self, model):
        self.n_obs = model.n_participants
        self._sym = SymmetricMatrix(self.n_obs)
        super().__init__(
            [
                ("bias", Identity(())),
                ("center", Identity((self.n_obs,))),
                ("quad", self._sym),
            ]
        )

    def log_prob(self, target, cond, d):
        y = np.atleast_2d(target)
        r = y - self.value("center")
        q = self.value("quad")
        return self.value("bias") - np.einsum("ni,ij,nj->n", r, q, r)

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_2d(target)
        r = y - self.value("center")
        q = self.value("quad")
        n = y.shape[0]
        g = np.zeros((n, self.n_params))
        g[:, self.block_slice("bias")] = 1.0
        g[:, self.block_slice("center")] = 2.0 * r @ q
        g[:, self.block_slice("quad")] = -self._sym.quad_grad(r)
        return g

    def lfire_features(self, y, d):
        """Linear features spanning the quadratic log-odds family."""
        y = np.atleast_2d(y)
        rows, cols = np.triu_indices(self.n_obs)
        quad = (y[:, :, None] * y[:, None, :])[:, rows, cols]
        return np.concatenate([y, quad], axis=1)


class ABDvCritic(Critic):
    """T(y, theta) = -(theta - A y)^T Q (theta - A y), Q symmetric."""

    family = "ab_dv"
    model_name = "ab_test"
    role = "dv"

    def __init__(self, model):
        self.n_obs = model.n_participants
        self.dim = 2
        self._sym = SymmetricMatrix(self.dim)
        super().__init__(
            [("map", Identity((self.dim, self.n_obs))), ("quad", self._sym)]
        )

    def log_prob(self, target, cond, d):
        y = np.atleast_2d(target)
        theta = np.atleast_2d(cond)
        r = theta - y @ self.value("map").T
        q = self.value("quad")
        return -np.einsum("ni,ij,nj->n", r, q, r)

    def grad_log_prob(self, target, cond, d):
        y = np.atleast_2d(target)
        theta = np.atleast_2d(cond)
        a = self.value("map")
        q = self.value("quad")
        r = theta - y @ a.T
        n = y.shape[0]
        g = np.zeros((n, self.n_params))
        # d/dA_(i,j): +2 (Q r)_i y_j
        qr = r @ q
        g[:, self.block_slice("map")] = (2.0 * qr[:, :, None] * y[:, None, :]).reshape(
            n, -1
        )
        g[:, self.block_slice("quad")] = -self._sym.quad_grad(r)
        return g
