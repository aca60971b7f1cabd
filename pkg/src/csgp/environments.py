"""Test environments: the Warfarin dosing function and a synthetic concave generator.

Every environment exposes the noiseless mean reward ``f(a, x)``, noisy
observations ``f + noise_sd * z`` and oracle regret against a fine action
grid. Regret is always computed on the noiseless reward.
"""

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_interp_spline

from csgp._linalg import cholesky_append, psd_sqrt, tri_solve
from csgp.errors import DomainError, SamplerError
from csgp.tmvn import TruncatedGaussian, ess_sample

__all__ = [
    "Environment",
    "SyntheticSpec",
    "SyntheticEnvironment",
    "warfarin_eval",
    "warfarin_environment",
    "synthetic_generate",
    "observe",
    "regret",
]


class Environment:
    """Noiseless reward function plus noise level and context distribution.

    ``reward_fn(a, x)`` takes an array of actions and one context and returns
    an array of mean rewards.
    """

    def __init__(self, dim, reward_fn, noise_sd, context_sampler, optimum_grid_size=1000, name="env"):
        self.dim = dim
        self.reward_fn = reward_fn
        self.noise_sd = float(noise_sd)
        self.context_sampler = context_sampler
        self.optimum_grid = np.linspace(0.0, 1.0, optimum_grid_size)
        self.name = name

    def mean_reward(self, a, x):
        a_arr = np.atleast_1d(np.asarray(a, dtype=float))
        if np.any(a_arr < 0.0) or np.any(a_arr > 1.0):
            raise DomainError("actions must lie in [0, 1]")
        out = np.asarray(self.reward_fn(a_arr, np.asarray(x, dtype=float)), dtype=float)
        return float(out[0]) if np.ndim(a) == 0 else out

    def sample_contexts(self, rng, n):
        return self.context_sampler(rng, n)

    def prepare(self, contexts):
        """Hook for environments that materialise context-dependent state."""

    def optimum(self, x):
        vals = self.mean_reward(self.optimum_grid, x)
        i = int(np.argmax(vals))
        return float(self.optimum_grid[i]), float(vals[i])


def observe(env, a, x, rng):
    """Noisy reward ``f(a, x) + noise_sd * z``."""
    mean = env.mean_reward(a, x)
    if env.noise_sd == 0.0:
        return mean
    return mean + env.noise_sd * rng.standard_normal()


def regret(env, a, x):
    """``max f(., x) - f(a, x)`` with the max over the optimum grid and ``a`` itself."""
    best = float(np.max(env.mean_reward(env.optimum_grid, x)))
    fa = env.mean_reward(a, x)
    return max(best, fa) - fa


# ---------------------------------------------------------------------------
# Warfarin dosing test function


def _warfarin_g(x):
    x1 = x[..., 0]
    g = np.where((x1 >= -0.5) & (x1 <= 0.5), 0.6, 0.0)
    g = g + np.where(x1 > 0.5, 1.2, 0.0) + np.where(x1 < -0.5, 1.2, 0.0)
    return g + x[..., 3] ** 2 + 0.5 * np.log(np.abs(x[..., 6]) + 1.0) - 0.6


def warfarin_eval(a, x):
    """Warfarin dose-response surface; ``a`` in [0, 1], ``x`` in [-1, 1]^7."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 7:
        raise DomainError(f"Warfarin contexts are 7-dimensional, got {x.shape[-1]}")
    if np.any(np.abs(x) > 1.0):
        raise DomainError("Warfarin contexts must lie in [-1, 1]^7")
    a_arr = np.asarray(a, dtype=float)
    if np.any(a_arr < 0.0) or np.any(a_arr > 1.0):
        raise DomainError("actions must lie in [0, 1]")
    g = _warfarin_g(x)
    base = 8.0 + 4.0 * np.cos(2.0 * math.pi * x[..., 1]) - 2.0 * x[..., 2] - 8.0 * x[..., 4] ** 3
    out = base - 15.0 * (g - 2.0 * a_arr) ** 2
    return float(out) if np.ndim(out) == 0 else out


def warfarin_optimal_action(x):
    """Vertex of the quadratic in ``a``, clamped to [0, 1]."""
    return float(np.clip(_warfarin_g(np.asarray(x, dtype=float)) / 2.0, 0.0, 1.0))


def warfarin_environment(noise_var=0.1, optimum_grid_size=1000):
    def sampler(rng, n):
        return rng.uniform(-1.0, 1.0, size=(n, 7))

    return Environment(7, warfarin_eval, math.sqrt(noise_var), sampler, optimum_grid_size, "warfarin")


# ---------------------------------------------------------------------------
# synthetic concave functions


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of ``f(a, x) = sum_s h_s(a) eta_s(x)^2 + gamma(x)``.

    ``h_s`` are concave curves on [0, 1]; ``eta_s`` and ``gamma`` are GP
    samples on contexts in [0, 1]^d with isotropic Gaussian kernels of
    lengthscale ``theta``.
    """

    d: int = 5
    theta: float = 1.0
    S: int = 10
    fine_grid: int = 200
    seed: int = 0
    h_lengthscale: float = 0.2
    noise_var: float = 0.1
    h_burn_in: int = 500
    optimum_grid_size: int = 1000

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _se_derivative_cov(s, t, p, q, ell):
    """``cov(h^(p)(s), h^(q)(t))`` for a unit-variance squared-exponential GP."""
    r = s[:, None] - t[None, :]
    u = r / ell
    k = np.exp(-0.5 * u * u)
    order = p + q
    if order == 0:
        d = k
    elif order == 1:
        d = -u / ell * k
    elif order == 2:
        d = (u * u - 1.0) / ell**2 * k
    elif order == 3:
        d = (3.0 * u - u**3) / ell**3 * k
    elif order == 4:
        d = (3.0 - 6.0 * u * u + u**4) / ell**4 * k
    else:
        raise ValueError("derivative order above 4 not needed")
    return (-1.0) ** q * d


def sample_concave_curve(grid, ell, rng, burn_in=500):
    """One concave curve: a GP sample conditioned on ``h'' <= 0`` at every grid point.

    The joint Gaussian of ``(h(0), h'(0), h''(grid))`` is sampled under the
    truncation ``h''(grid) <= 0``; ``h`` is then the double integral of the
    piecewise-linear interpolant of ``h''`` plus the sampled value and slope at
    0, so it is concave on the whole interval. Returns a callable.
    """
    g = np.asarray(grid, dtype=float)
    zero = np.zeros(1)
    blocks = [(zero, 0), (zero, 1), (g, 2)]
    cov = np.block([[_se_derivative_cov(s, t, p, q, ell) for (t, q) in blocks] for (s, p) in blocks])
    G = g.size
    upper = np.concatenate([[np.inf, np.inf], np.zeros(G)])
    tg = TruncatedGaussian(np.zeros(G + 2), cov, upper)
    sd2 = math.sqrt(3.0) / ell**2
    start = np.concatenate([[0.0, 0.0], np.full(G, -sd2)])
    try:
        draw = ess_sample(tg, 1, burn_in=burn_in, seed=rng, start=start, factor=psd_sqrt(cov)).draws[0]
    except SamplerError as exc:
        raise SamplerError(f"concave curve sampling failed: {exc}") from exc
    h0, dh0, h2 = draw[0], draw[1], np.minimum(draw[2:], 0.0)
    curv = make_interp_spline(g, h2, k=1).antiderivative(2)

    def h(a):
        a = np.asarray(a, dtype=float)
        return h0 + dh0 * a + curv(a)

    h.second_derivative_grid = h2
    return h


class _LazyGPField:
    """Several independent GP samples on contexts, materialised on first visit."""

    def __init__(self, n_fields, lengthscale, rng, nugget=1e-8):
        self.n_fields = n_fields
        self.lengthscale = float(lengthscale)
        self.rng = rng
        self.nugget = nugget
        self.X = None
        self.F = np.zeros((0, n_fields))
        self.L = np.zeros((0, 0))
        self.index = {}
        self._lock = threading.Lock()

    def _k(self, A, B):
        d2 = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
        return np.exp(-0.5 * d2 / self.lengthscale**2)

    def values(self, x):
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        with self._lock:
            i = self.index.get(key)
            if i is None:
                i = self._materialise(x, key)
            return self.F[i]

    def _materialise(self, x, key):
        xn = x[None, :]
        k_nn = self._k(xn, xn) + self.nugget
        if self.X is None:
            mean = np.zeros(self.n_fields)
            var = float(k_nn[0, 0])
            self.X = xn
            self.L = np.sqrt(k_nn)
        else:
            k_on = self._k(self.X, xn)
            v = tri_solve(self.L, k_on)[:, 0]
            w = tri_solve(self.L, self.F)
            mean = v @ w
            var = max(float(k_nn[0, 0] - v @ v), 0.0)
            self.L = cholesky_append(self.L, k_on, k_nn)
            self.X = np.vstack([self.X, xn])
        vals = mean + math.sqrt(var) * self.rng.standard_normal(self.n_fields)
        self.F = np.vstack([self.F, vals])
        self.index[key] = self.F.shape[0] - 1
        return self.index[key]


class SyntheticEnvironment(Environment):
    def __init__(self, spec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        grid = np.linspace(0.0, 1.0, spec.fine_grid)
        h_rng, field_rng = rng.spawn(2)
        self.curves = [sample_concave_curve(grid, spec.h_lengthscale, h_rng, spec.h_burn_in)
                       for _ in range(spec.S)]
        self.fields = _LazyGPField(spec.S + 1, spec.theta, field_rng)

        def sampler(r, n):
            return r.uniform(0.0, 1.0, size=(n, spec.d))

        super().__init__(spec.d, self._reward, math.sqrt(spec.noise_var), sampler,
                         spec.optimum_grid_size, "synthetic")

    def _reward(self, a, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.spec.d,):
            raise DomainError(f"expected a context of dimension {self.spec.d}")
        vals = self.fields.values(x)
        out = np.full(np.shape(a), vals[-1], dtype=float)
        for s, h in enumerate(self.curves):
            out = out + h(a) * vals[s] ** 2
        return out

    def prepare(self, contexts):
        for x in np.atleast_2d(contexts):
            self.fields.values(x)


def synthetic_generate(spec):
    """Build a synthetic concave environment; deterministic in ``spec.seed``."""
    if spec.d < 1 or spec.S < 0 or spec.fine_grid < 3 or not spec.theta > 0:
        raise ValueError("invalid synthetic spec")
    return SyntheticEnvironment(spec)
