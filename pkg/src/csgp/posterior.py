"""Exact Gaussian posteriors for rewards and stacked spline coefficients.

Conditioning the CSGP prior on noisy rewards leaves the coefficients
``beta(x_1), ..., beta(x_m)`` jointly Gaussian; conditioning further on
concavity at those contexts truncates every C-spline coordinate above at 0.
:func:`beta_posterior` returns the untruncated moments together with that
truncation vector; the truncation is consumed by :mod:`csgp.tmvn`.
"""

from dataclasses import dataclass

import numpy as np

from csgp._linalg import chol_solve, cholesky_append, jitter_cholesky, tri_solve
from csgp.errors import DomainError
from csgp.kernels import (
    BaseKernelSpec,
    base_gram,
    csgp_cross,
    prior_mean_beta,
    prior_mean_f,
)
from csgp.splines import phi_matrix

__all__ = [
    "BanditHistory",
    "CoefficientPosterior",
    "gp_posterior",
    "beta_posterior",
    "unconstrained_reward_variance",
    "truncation_pattern",
    "PosteriorState",
]


class BanditHistory:
    """Append-only record of (context, action, reward) rounds."""

    def __init__(self, noise_var, dim=None):
        if not noise_var > 0:
            raise ValueError("noise_var must be positive")
        self.noise_var = float(noise_var)
        self.dim = dim
        self._rows = []
        self._rewards = []
        self._points = None

    def __len__(self):
        return len(self._rows)

    def append(self, context, action, reward):
        x = np.atleast_1d(np.asarray(context, dtype=float))
        if self.dim is None:
            self.dim = x.size
        elif x.size != self.dim:
            raise ValueError(f"context dimension {x.size} != {self.dim}")
        if not 0.0 <= action <= 1.0:
            raise DomainError(f"action {action} outside [0, 1]")
        self._rows.append(np.concatenate([[float(action)], x]))
        self._rewards.append(float(reward))
        self._points = None

    def extend(self, contexts, actions, rewards):
        for x, a, y in zip(contexts, actions, rewards):
            self.append(x, a, y)

    @property
    def points(self):
        """``(n, 1 + d)`` array; column 0 is the action."""
        if self._points is None:
            d = self.dim or 0
            self._points = np.array(self._rows) if self._rows else np.zeros((0, 1 + d))
        return self._points

    @property
    def actions(self):
        return self.points[:, 0]

    @property
    def contexts(self):
        return self.points[:, 1:]

    @property
    def rewards(self):
        return np.asarray(self._rewards, dtype=float)

    def copy(self):
        h = BanditHistory(self.noise_var, self.dim)
        h._rows = list(self._rows)
        h._rewards = list(self._rewards)
        return h


def truncation_pattern(J, m):
    """Upper bounds for ``m`` stacked coefficient blocks: 0 on C-splines, +inf on linear/constant."""
    block = np.zeros(J)
    block[-2:] = np.inf
    return np.tile(block, m)


@dataclass(frozen=True)
class CoefficientPosterior:
    """Untruncated posterior moments of stacked coefficients plus the truncation vector."""

    mean: np.ndarray
    cov: np.ndarray
    trunc: np.ndarray
    J: int

    @property
    def m(self):
        return self.mean.size // self.J

    def selector(self, Phi, block=-1):
        """Rows ``c(a)`` placing ``phi(a)`` in the given context block, shape ``(n, J m)``."""
        Phi = np.atleast_2d(Phi)
        C = np.zeros((Phi.shape[0], self.mean.size))
        b = block % self.m
        C[:, b * self.J:(b + 1) * self.J] = Phi
        return C


def gp_posterior(prior_mean, K_nn, K_mn, K_mm, noise_var, y, obs_mean=None):
    """Posterior mean and covariance of query values given noisy observations.

    ``prior_mean`` is the prior mean at the ``m`` query points, ``obs_mean``
    (default zero) the prior mean at the ``n`` observed points.
    """
    prior_mean = np.asarray(prior_mean, dtype=float)
    K_mm = np.asarray(K_mm, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        return prior_mean.copy(), K_mm.copy()
    K_nn = np.asarray(K_nn, dtype=float)
    K_mn = np.asarray(K_mn, dtype=float).reshape(prior_mean.size, n)
    obs_mean = np.zeros(n) if obs_mean is None else np.asarray(obs_mean, dtype=float)
    L, _ = jitter_cholesky(K_nn + noise_var * np.eye(n))
    mean = prior_mean + K_mn @ chol_solve(L, y - obs_mean)
    V = tri_solve(L, K_mn.T)
    cov = K_mm - V.T @ V
    return mean, 0.5 * (cov + cov.T)


class PosteriorState:
    """Cholesky factor of ``K + noise I`` over a growing history.

    New rounds are folded in with a block append; :meth:`reset` forces a full
    refactorisation (after a hyperparameter refit).
    """

    def __init__(self, kernel, noise_var):
        self.kernel = kernel
        self.noise_var = float(noise_var)
        self.reset()

    def reset(self, kernel=None):
        if kernel is not None:
            self.kernel = kernel
        self.L = np.zeros((0, 0))
        self.P = None
        self.n = 0

    def cov(self, P1, P2=None):
        if isinstance(self.kernel, BaseKernelSpec):
            return base_gram(self.kernel, P1, P2)
        return csgp_cross(self.kernel, P1, P2)

    def prior_mean(self, P):
        if isinstance(self.kernel, BaseKernelSpec):
            return np.full(P.shape[0], float(self.kernel.mean))
        return prior_mean_f(self.kernel, P)

    def sync(self, history):
        P = history.points
        n = P.shape[0]
        if n < self.n:
            self.reset()
        if n > self.n:
            new = P[self.n:]
            K_new = self.cov(new) + self.noise_var * np.eye(n - self.n)
            if self.n == 0:
                self.L, _ = jitter_cholesky(K_new)
            else:
                self.L = cholesky_append(self.L, self.cov(self.P, new), K_new)
            self.P = P.copy()
            self.n = n
        self.resid = history.rewards - self.prior_mean(P) if n else np.zeros(0)
        self.alpha = chol_solve(self.L, self.resid) if n else np.zeros(0)
        return self


def _state_for(kernel, history, state):
    if state is None:
        state = PosteriorState(kernel, history.noise_var)
    return state.sync(history)


def beta_posterior(kernel, history, contexts, state=None):
    """Posterior of ``beta`` at the given contexts, stacked block-wise (``J`` per context)."""
    Xq = np.atleast_2d(np.asarray(contexts, dtype=float))
    m, J = Xq.shape[0], kernel.J
    prior = prior_mean_beta(kernel, Xq).reshape(-1)
    comps = kernel.components
    prior_cov = np.zeros((J * m, J * m))
    Kq = [base_gram(c, Xq) for c in comps] if not kernel.tied else [base_gram(comps[0], Xq)] * J
    for j in range(J):
        prior_cov[j::J, j::J] = Kq[j]
    trunc = truncation_pattern(J, m)
    if len(history) == 0:
        return CoefficientPosterior(prior, prior_cov, trunc, J)
    st = _state_for(kernel, history, state)
    P = history.points
    Phi = phi_matrix(kernel.basis, P[:, 0])
    X = P[:, 1:]
    if kernel.tied:
        Kx = base_gram(comps[0], Xq, X)
        cross = (Kx[:, None, :] * Phi.T[None, :, :]).reshape(J * m, -1)
    else:
        cross = np.concatenate(
            [np.stack([Phi[:, j] * base_gram(comps[j], Xq[i:i + 1], X)[0] for j in range(J)])
             for i in range(m)]
        )
    mean = prior + cross @ st.alpha
    V = tri_solve(st.L, cross.T)
    cov = prior_cov - V.T @ V
    return CoefficientPosterior(mean, 0.5 * (cov + cov.T), trunc, J)


def unconstrained_reward_variance(kernel, history, a, x, state=None):
    """Posterior variance of ``f(a, x)`` without concavity conditioning (kernel form).

    ``a`` may be an array of actions sharing the context ``x``.
    """
    acts = np.atleast_1d(np.asarray(a, dtype=float))
    if np.any(acts < 0) or np.any(acts > 1):
        raise DomainError("actions must lie in [0, 1]")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Q = np.column_stack([acts, np.tile(x, (acts.size, 1))])
    if isinstance(kernel, BaseKernelSpec):
        prior = np.full(acts.size, kernel.variance)
        cross_fn = lambda P: base_gram(kernel, Q, P)  # noqa: E731
    else:
        Phi = phi_matrix(kernel.basis, acts)
        if kernel.tied:
            prior = kernel.components[0].variance * np.sum(Phi * Phi, axis=1)
        else:
            prior = Phi**2 @ np.array([c.variance for c in kernel.components])
        cross_fn = lambda P: csgp_cross(kernel, Q, P)  # noqa: E731
    if len(history) == 0:
        out = prior
    else:
        st = _state_for(kernel, history, state)
        V = tri_solve(st.L, cross_fn(history.points).T)
        out = np.clip(prior - np.sum(V * V, axis=0), 0.0, None)
    return float(out[0]) if np.ndim(a) == 0 else out
