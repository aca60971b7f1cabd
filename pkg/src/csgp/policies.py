"""Action selection: CSGP-UCB/Thompson and the unconstrained baselines.

All rules pick from a finite action grid for the current context ``x_t``.

* ``csgp_ucb``: truncated posterior mean of ``f`` plus ``sqrt(alpha_t)`` times
  the *unconstrained* posterior standard deviation.
* ``csgp_ts``: one joint draw of the truncated coefficient posterior, mapped
  through the feature map at every grid action.
* ``sgp_*``: same spline kernel, truncation disabled.
* ``gp_*``: plain GP with one isotropic kernel on ``(a, x)``.

Ties go to the lowest grid index.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from csgp._linalg import jitter_cholesky, psd_sqrt, tri_solve
from csgp.errors import NotPositiveDefinite, SamplerError
from csgp.kernels import BaseKernelSpec, base_gram, fit_base_hyperparams, fit_hyperparams
from csgp.posterior import PosteriorState, beta_posterior
from csgp.splines import phi_matrix
from csgp.tmvn import TruncatedGaussian, batch_means_se, ess_sample

__all__ = [
    "POLICY_NAMES",
    "AlphaSchedule",
    "SamplerConfig",
    "PolicyConfig",
    "alpha",
    "select_argmax",
    "ucb_from_posterior",
    "thompson_from_posterior",
    "csgp_ucb_select",
    "csgp_thompson_select",
    "sgp_ucb_select",
    "sgp_ts_select",
    "gp_ucb_select",
    "gp_ts_select",
    "Policy",
]

POLICY_NAMES = ("csgp_ucb", "csgp_ts", "gp_ucb", "gp_ts", "sgp_ucb", "sgp_ts")


@dataclass(frozen=True)
class AlphaSchedule:
    """Confidence multiplier ``alpha_t`` for the UCB rules.

    ``discrete``: ``2 log(2 |A| t^2 pi^2 / (6 delta))``.
    ``continuous``: ``2 log(4 pi^2 t^2 / (3 delta)) + 2 log(t^2 zeta sqrt(log(2 eta / delta)))``.
    ``override`` pins alpha to a constant (greedy limit when 0).
    """

    variant: str = "discrete"
    delta: float = 0.1
    action_count: int = 100
    eta: float = 1.0
    zeta: float = 1.0
    override: float = None

    def to_dict(self):
        return {
            "variant": self.variant,
            "delta": self.delta,
            "action_count": self.action_count,
            "eta": self.eta,
            "zeta": self.zeta,
            "override": self.override,
        }


def alpha(schedule, t):
    if t < 1:
        raise ValueError("t must be >= 1")
    if schedule.override is not None:
        return float(schedule.override)
    d = schedule.delta
    if not 0.0 < d < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {d}")
    if schedule.variant == "discrete":
        return 2.0 * math.log(2.0 * schedule.action_count * t * t * math.pi**2 / (6.0 * d))
    if schedule.variant == "continuous":
        return 2.0 * math.log(4.0 * math.pi**2 * t * t / (3.0 * d)) + 2.0 * math.log(
            t * t * schedule.zeta * math.sqrt(math.log(2.0 * schedule.eta / d))
        )
    raise ValueError(f"unknown alpha variant {schedule.variant!r}")


@dataclass(frozen=True)
class SamplerConfig:
    n: int = 2000
    burn_in: int = 200
    method: str = "analytic"
    max_shrink: int = 64
    rao_blackwell: bool = True

    def to_dict(self):
        return {
            "n": self.n,
            "burn_in": self.burn_in,
            "method": self.method,
            "max_shrink": self.max_shrink,
            "rao_blackwell": self.rao_blackwell,
        }


@dataclass(frozen=True)
class PolicyConfig:
    policy: str
    schedule: AlphaSchedule = field(default_factory=AlphaSchedule)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.policy not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICY_NAMES}")

    @property
    def constrained(self):
        return self.policy.startswith("csgp")

    @property
    def spline_model(self):
        return self.policy.startswith(("csgp", "sgp"))

    @property
    def is_ucb(self):
        return self.policy.endswith("ucb")


def select_argmax(scores):
    """Index of the largest score; the first one wins ties."""
    return int(np.argmax(np.asarray(scores)))


def _round_contexts(history, x_t, window):
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    if window <= 1 or len(history) == 0:
        return x_t[None, :]
    past = []
    for x in history.contexts[::-1]:
        if len(past) >= window - 1:
            break
        if not any(np.array_equal(x, p) for p in past) and not np.array_equal(x, x_t):
            past.append(x)
    return np.vstack(past[::-1] + [x_t])


def _truncated_moments(post, C, sampler, rng, trunc):
    tg = TruncatedGaussian(post.mean, post.cov, post.trunc if trunc is None else trunc)
    batch = ess_sample(tg, sampler.n, burn_in=sampler.burn_in, seed=rng,
                       method=sampler.method, max_shrink=sampler.max_shrink)
    vals = batch.rb_means if (sampler.rao_blackwell and batch.rb_means is not None) else batch.draws
    f_vals = vals @ C.T
    return f_vals.mean(axis=0), batch_means_se(f_vals)


def ucb_from_posterior(post, Phi, alpha_value, sampler=None, rng=None, truncate=True, trunc=None):
    """UCB scores over grid features ``Phi`` for a coefficient posterior.

    Returns ``(index, diagnostics)``; the bonus uses the untruncated variance.
    """
    C = post.selector(Phi)
    if truncate:
        try:
            mu, se = _truncated_moments(post, C, sampler or SamplerConfig(), rng, trunc)
        except SamplerError:
            raise
        except Exception as exc:  # linear-algebra trouble inside the sampler
            raise SamplerError(f"truncated mean failed: {exc}") from exc
    else:
        mu, se = C @ post.mean, np.zeros(C.shape[0])
    var = np.einsum("ij,jk,ik->i", C, post.cov, C)
    sigma = np.sqrt(np.clip(var, 0.0, None))
    scores = mu + math.sqrt(max(alpha_value, 0.0)) * sigma
    idx = select_argmax(scores)
    return idx, {"mu": mu, "sigma": sigma, "se": se, "score": scores, "alpha": alpha_value}


def thompson_from_posterior(post, Phi, sampler=None, rng=None, truncate=True):
    """Argmax of one joint posterior draw of the reward curve."""
    sampler = sampler or SamplerConfig()
    rng = np.random.default_rng(rng)
    C = post.selector(Phi)
    if truncate:
        tg = TruncatedGaussian(post.mean, post.cov, post.trunc)
        try:
            beta = ess_sample(tg, 1, burn_in=sampler.burn_in, seed=rng, method=sampler.method,
                              max_shrink=sampler.max_shrink).draws[0]
        except SamplerError:
            raise
        except Exception as exc:
            raise SamplerError(f"Thompson draw failed: {exc}") from exc
    else:
        beta = _gaussian_draw(post.mean, post.cov, rng)
    f = C @ beta
    return select_argmax(f), {"f_sample": f, "beta": beta}


def _gaussian_draw(mean, cov, rng):
    try:
        L = jitter_cholesky(cov)[0]
    except NotPositiveDefinite:
        L = psd_sqrt(cov)
    return mean + L @ rng.standard_normal(mean.size)


def csgp_ucb_select(kernel, history, x_t, action_grid, t, schedule, sampler_cfg=None, *, rng=None,
                    window=1, state=None, truncate=True, trunc=None):
    """CSGP-UCB action for context ``x_t``; returns ``(action, diagnostics)``."""
    grid = np.asarray(action_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("action grid is empty")
    post = beta_posterior(kernel, history, _round_contexts(history, x_t, window), state=state)
    Phi = phi_matrix(kernel.basis, grid)
    idx, diag = ucb_from_posterior(post, Phi, alpha(schedule, t), sampler_cfg, rng, truncate, trunc)
    diag["index"] = idx
    return float(grid[idx]), diag


def csgp_thompson_select(kernel, history, x_t, action_grid, sampler_cfg=None, *, rng=None, window=1,
                         state=None, truncate=True):
    """CSGP-Thompson action: argmax of one truncated joint posterior draw."""
    grid = np.asarray(action_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("action grid is empty")
    post = beta_posterior(kernel, history, _round_contexts(history, x_t, window), state=state)
    Phi = phi_matrix(kernel.basis, grid)
    idx, diag = thompson_from_posterior(post, Phi, sampler_cfg, rng, truncate)
    diag["index"] = idx
    return float(grid[idx]), diag


def sgp_ucb_select(kernel, history, x_t, action_grid, t, schedule, *, window=1, state=None):
    """Spline-kernel GP-UCB without concavity truncation."""
    return csgp_ucb_select(kernel, history, x_t, action_grid, t, schedule, window=window,
                           state=state, truncate=False)


def sgp_ts_select(kernel, history, x_t, action_grid, *, rng=None, window=1, state=None):
    """Spline-kernel GP Thompson sampling without truncation."""
    return csgp_thompson_select(kernel, history, x_t, action_grid, rng=rng, window=window,
                                state=state, truncate=False)


def _gp_moments(spec, history, x_t, grid, state):
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    Q = np.column_stack([grid, np.tile(x_t, (grid.size, 1))])
    K_qq = base_gram(spec, Q)
    if len(history) == 0:
        return np.full(grid.size, float(spec.mean)), K_qq
    st = (state or PosteriorState(spec, history.noise_var)).sync(history)
    K_qp = base_gram(spec, Q, history.points)
    mean = spec.mean + K_qp @ st.alpha
    V = tri_solve(st.L, K_qp.T)
    cov = K_qq - V.T @ V
    return mean, 0.5 * (cov + cov.T)


def gp_ucb_select(spec, history, x_t, action_grid, t, schedule, *, state=None):
    """Contextual GP-UCB with a joint isotropic kernel on ``(a, x)``."""
    grid = np.asarray(action_grid, dtype=float)
    mean, cov = _gp_moments(spec, history, x_t, grid, state)
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    a_t = alpha(schedule, t)
    scores = mean + math.sqrt(max(a_t, 0.0)) * sigma
    idx = select_argmax(scores)
    return float(grid[idx]), {"mu": mean, "sigma": sigma, "score": scores, "alpha": a_t, "index": idx}


def gp_ts_select(spec, history, x_t, action_grid, *, rng=None, state=None):
    """GP Thompson sampling on the grid, without variance inflation."""
    grid = np.asarray(action_grid, dtype=float)
    rng = np.random.default_rng(rng)
    mean, cov = _gp_moments(spec, history, x_t, grid, state)
    f = _gaussian_draw(mean, cov, rng)
    idx = select_argmax(f)
    return float(grid[idx]), {"f_sample": f, "mu": mean, "index": idx}


class Policy:
    """Stateful wrapper used by the harness: kernel, cached factorisation, refits."""

    def __init__(self, config, kernel, noise_var, grid, window=1, fit_budget=60, fit_bounds=None,
                 learn_mean=False):
        self.config = config
        self.learn_mean = learn_mean
        self.kernel = kernel
        self.initial_kernel = kernel
        self.fit_bounds = fit_bounds
        self.grid = np.asarray(grid, dtype=float)
        self.window = window
        self.fit_budget = fit_budget
        self.noise_var = noise_var
        self.state = PosteriorState(kernel, noise_var)
        if config.spline_model and isinstance(kernel, BaseKernelSpec):
            raise ValueError(f"{config.policy} needs a CSGP kernel")
        if not config.spline_model and not isinstance(kernel, BaseKernelSpec):
            raise ValueError(f"{config.policy} needs a base kernel on (a, x)")

    @property
    def name(self):
        return self.config.policy

    def refit(self, history, seed=0):
        if self.config.spline_model:
            fit = fit_hyperparams
        else:
            fit = fit_base_hyperparams
        # the configured kernel is always a restart so a collapsed fit can recover
        extra = () if self.kernel == self.initial_kernel else (self.initial_kernel,)
        new = fit(self.kernel, self.noise_var, history, self.fit_budget, seed, self.fit_bounds, extra,
                  learn_mean=self.learn_mean)
        if new != self.kernel:
            self.kernel = new
            self.state.reset(new)
        return new

    def select(self, history, x_t, t, rng):
        cfg, k, st = self.config, self.kernel, self.state
        if cfg.policy == "csgp_ucb":
            return csgp_ucb_select(k, history, x_t, self.grid, t, cfg.schedule, cfg.sampler, rng=rng,
                                   window=self.window, state=st)
        if cfg.policy == "sgp_ucb":
            return sgp_ucb_select(k, history, x_t, self.grid, t, cfg.schedule, window=self.window, state=st)
        if cfg.policy == "csgp_ts":
            return csgp_thompson_select(k, history, x_t, self.grid, cfg.sampler, rng=rng,
                                        window=self.window, state=st)
        if cfg.policy == "sgp_ts":
            return sgp_ts_select(k, history, x_t, self.grid, rng=rng, window=self.window, state=st)
        if cfg.policy == "gp_ucb":
            return gp_ucb_select(k, history, x_t, self.grid, t, cfg.schedule, state=st)
        return gp_ts_select(k, history, x_t, self.grid, rng=rng, state=st)
