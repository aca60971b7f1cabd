"""Built-in invariant suites behind ``csgp validate``.

Each check compares the library against an independent reference
(brute-force conditioning, closed forms, rejection sampling) with a fixed
seed and returns a :class:`CheckResult`. The same functions back the
acceptance tests, so the command line and the test-suite agree.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from csgp.kernels import make_csgp_kernel
from csgp.policies import AlphaSchedule, SamplerConfig, alpha, csgp_thompson_select
from csgp.posterior import BanditHistory, beta_posterior, gp_posterior, unconstrained_reward_variance
from csgp.splines import build_basis, mspline_eval, phi_matrix, second_derivative
from csgp.tmvn import TruncatedGaussian, trunc_mean, univariate_trunc_mean

__all__ = ["CheckResult", "SUITES", "run_suite", "format_table"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# splines


def concavity_grid(basis, n=1000):
    """``n`` points on [0, 1] that include every distinct knot."""
    grid = np.linspace(0.0, 1.0, n)
    for k in np.unique(basis.knots):
        grid[np.argmin(np.abs(grid - k))] = k
    return np.sort(grid)


@_timed
def check_concavity_equivalence(n_vectors=1000, seed=0, tol=1e-9):
    """Grid concavity of ``phi(a) @ beta`` iff the C-spline coefficients are all <= 0."""
    basis = build_basis(5, 2)
    grid = concavity_grid(basis)
    rng = np.random.default_rng(seed)
    J = basis.J
    B = rng.standard_normal((n_vectors, J))
    # half the vectors get a nonpositive C-spline block so both branches are exercised
    half = n_vectors // 2
    B[:half, : J - 2] = -np.abs(B[:half, : J - 2])
    d2 = second_derivative(basis, B, grid)  # (grid, n_vectors)
    concave = np.all(d2 <= tol, axis=0)
    nonpos = np.all(B[:, : J - 2] <= 0.0, axis=1)
    bad = int(np.sum(concave != nonpos))
    return CheckResult("splines.concavity_equivalence", bad == 0,
                       f"{n_vectors} vectors, {grid.size} grid points, {bad} counterexamples")


@_timed
def check_mspline_normalisation(tol=1e-8):
    """Each M-spline integrates to one (adaptive quadrature per knot span)."""
    basis = build_basis(5, 2)
    knots = np.unique(basis.knots)
    worst = 0.0
    for j in range(basis.num_mspline):
        total = 0.0
        for lo, hi in zip(knots[:-1], knots[1:]):
            total += integrate.quad(lambda s: mspline_eval(basis, float(s))[j], lo, hi)[0]
        worst = max(worst, abs(total - 1.0))
    return CheckResult("splines.mspline_integral", worst < tol, f"max |integral - 1| = {worst:.2e}")


# ---------------------------------------------------------------------------
# posterior


def _gauss_k(X, Y, ell, var):
    d2 = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
    return var * np.exp(-0.5 * d2 / ell**2)


def _random_history(rng, n, d, noise_var):
    h = BanditHistory(noise_var, d)
    for _ in range(n):
        h.append(rng.uniform(0, 1, d), float(rng.uniform()), float(rng.standard_normal()))
    return h


def brute_force_beta(kernel, history, Xq, ells, vars_):
    """Joint-Gaussian conditioning of stacked coefficients on rewards, by dense solve."""
    P = history.points
    A, X = P[:, 0], P[:, 1:]
    Phi = phi_matrix(kernel.basis, A)
    J, m, n = kernel.J, Xq.shape[0], len(history)
    S_bb = np.zeros((J * m, J * m))
    S_by = np.zeros((J * m, n))
    S_yy = history.noise_var * np.eye(n)
    for j in range(J):
        S_bb[j::J, j::J] = _gauss_k(Xq, Xq, ells[j], vars_[j])
        kx = _gauss_k(Xq, X, ells[j], vars_[j])
        S_by[j::J, :] = kx * Phi[:, j][None, :]
        S_yy += np.outer(Phi[:, j], Phi[:, j]) * _gauss_k(X, X, ells[j], vars_[j])
    mean = S_by @ np.linalg.solve(S_yy, history.rewards)
    cov = S_bb - S_by @ np.linalg.solve(S_yy, S_by.T)
    return mean, cov


def _random_untied(rng, basis):
    from csgp.kernels import BaseKernelSpec, CSGPKernel

    ells = rng.uniform(0.3, 2.0, basis.J)
    vars_ = rng.uniform(0.5, 2.0, basis.J)
    comps = tuple(BaseKernelSpec("gaussian", float(l), float(v)) for l, v in zip(ells, vars_))
    return CSGPKernel(basis, comps, None, tied=False), ells, vars_


@_timed
def check_gp_posterior_oracle(n_instances=100, seed=1, tol=1e-8):
    """Posterior moments against the textbook Schur complement, total dimension <= 10."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 11 - n))
        A = rng.standard_normal((n + m, n + m))
        S = A @ A.T + 0.1 * np.eye(n + m)
        mu = rng.standard_normal(n + m)
        noise = float(rng.uniform(0.05, 1.0))
        y = rng.standard_normal(n)
        mean, cov = gp_posterior(mu[n:], S[:n, :n], S[n:, :n], S[n:, n:], noise, y, obs_mean=mu[:n])
        G = S[:n, :n] + noise * np.eye(n)
        ref_mean = mu[n:] + S[n:, :n] @ np.linalg.solve(G, y - mu[:n])
        ref_cov = S[n:, n:] - S[n:, :n] @ np.linalg.solve(G, S[:n, n:])
        worst = max(worst, np.max(np.abs(mean - ref_mean)), np.max(np.abs(cov - ref_cov)))
    return CheckResult("posterior.gp_posterior_oracle", worst <= tol,
                       f"{n_instances} instances, max abs error {worst:.2e}")


@_timed
def check_beta_posterior_oracle(n_instances=100, seed=2, tol=1e-8):
    """Stacked coefficient posterior against dense joint conditioning, total dimension <= 10."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        basis = build_basis(1 + i % 2, 2)  # J = 5 or 6
        kernel, ells, vars_ = _random_untied(rng, basis)
        n = int(rng.integers(1, 11 - basis.J))
        d = int(rng.integers(1, 4))
        h = _random_history(rng, n, d, float(rng.uniform(0.05, 1.0)))
        Xq = h.contexts[-1:] if rng.uniform() < 0.5 else rng.uniform(0, 1, (1, d))
        post = beta_posterior(kernel, h, Xq)
        ref_mean, ref_cov = brute_force_beta(kernel, h, Xq, ells, vars_)
        worst = max(worst, np.max(np.abs(post.mean - ref_mean)), np.max(np.abs(post.cov - ref_cov)))
    return CheckResult("posterior.beta_posterior_oracle", worst <= tol,
                       f"{n_instances} instances, max abs error {worst:.2e}")


@_timed
def check_variance_dual_form(n_instances=100, seed=3, tol=1e-8):
    """Kernel-form reward variance equals ``c(a)' Sigma c(a)`` from the coefficient posterior."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    grid = np.linspace(0.0, 1.0, 11)
    for _ in range(n_instances):
        basis = build_basis(int(rng.integers(1, 6)), int(rng.integers(1, 3)))
        kernel, _, _ = _random_untied(rng, basis)
        d = int(rng.integers(1, 4))
        h = _random_history(rng, int(rng.integers(0, 15)), d, float(rng.uniform(0.05, 1.0)))
        x = rng.uniform(0, 1, d)
        v_kernel = unconstrained_reward_variance(kernel, h, grid, x)
        post = beta_posterior(kernel, h, x[None])
        C = post.selector(phi_matrix(basis, grid))
        v_coef = np.einsum("ij,jk,ik->i", C, post.cov, C)
        worst = max(worst, float(np.max(np.abs(v_kernel - v_coef))))
    return CheckResult("posterior.variance_dual_form", worst <= tol,
                       f"{n_instances} instances, max abs difference {worst:.2e}")


# ---------------------------------------------------------------------------
# truncated normals


def rejection_mean(mean, cov, upper, n, seed):
    """Mean and standard error of ``N(mean, cov)`` restricted to ``w <= upper`` by rejection."""
    rng = np.random.default_rng(seed)
    kept = []
    count = 0
    L = np.linalg.cholesky(cov)
    while count < n:
        w = mean + rng.standard_normal((4 * n, mean.size)) @ L.T
        ok = w[np.all(w <= upper, axis=1)]
        kept.append(ok)
        count += ok.shape[0]
    w = np.vstack(kept)[:n]
    return w.mean(axis=0), w.std(axis=0, ddof=1) / math.sqrt(n)


@_timed
def check_univariate_closed_form(n=10_000, seed=4):
    """Sampler mean of N(0, 1) truncated at 0 within 3 SE of -sqrt(2/pi), SE <= 0.01."""
    exact = -math.sqrt(2.0 / math.pi)
    closed = univariate_trunc_mean(0.0, 1.0, 0.0)
    mean, se = trunc_mean(TruncatedGaussian([0.0], [[1.0]], [0.0]), n=n, seed=seed)
    ok = abs(closed - exact) < 1e-12 and abs(mean[0] - exact) <= 3 * se[0] and se[0] <= 0.01
    return CheckResult("tmvn.univariate_closed_form", bool(ok),
                       f"closed form {closed:.5f}, sampled {mean[0]:.5f} +/- {se[0]:.4f} (exact {exact:.5f})")


@_timed
def check_diagonal_factorisation(n=10_000, seed=5):
    """Independent coordinates: each sampled mean matches its univariate closed form."""
    mu = np.array([0.0, -0.5, 1.0])
    var = np.array([1.0, 0.5, 2.0])
    upper = np.array([0.0, 0.0, np.inf])
    exact = np.array([univariate_trunc_mean(m, v, u) for m, v, u in zip(mu, var, upper)])
    mean, se = trunc_mean(TruncatedGaussian(mu, np.diag(var), upper), n=n, seed=seed)
    z = np.abs(mean - exact) / se
    finite = np.isfinite(upper)
    ok = bool(np.all(z <= 3.0) and np.all(se[finite] <= 0.01))
    return CheckResult("tmvn.diagonal_factorisation", ok,
                       f"max |z| {float(np.max(z)):.2f}, max SE on truncated coordinates "
                       f"{float(np.max(se[finite])):.4f}")


@_timed
def check_correlated_rejection(n=10_000, seed=6):
    """2-D correlated truncation against a rejection-sampling oracle within 3 combined SEs."""
    mu = np.zeros(2)
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    upper = np.zeros(2)
    mean, se = trunc_mean(TruncatedGaussian(mu, cov, upper), n=n, seed=seed)
    ref, ref_se = rejection_mean(mu, cov, upper, 200_000, seed + 100)
    comb = np.sqrt(se**2 + ref_se**2)
    z = np.abs(mean - ref) / comb
    return CheckResult("tmvn.correlated_rejection", bool(np.all(z <= 3.0)),
                       f"sampled {np.round(mean, 4).tolist()} vs rejection {np.round(ref, 4).tolist()}, "
                       f"max |z| {float(z.max()):.2f}")


# ---------------------------------------------------------------------------
# policies


@_timed
def check_alpha_values():
    s = AlphaSchedule("discrete", 0.1, 100)
    ref1 = 2 * math.log(2 * 100 * 1 * math.pi**2 / (6 * 0.1))
    ref10 = 2 * math.log(2 * 100 * 100 * math.pi**2 / (6 * 0.1))
    a1, a10 = alpha(s, 1), alpha(s, 10)
    mono = all(alpha(s, t + 1) > alpha(s, t) for t in range(1, 1000))
    ok = abs(a1 - ref1) < 1e-12 and abs(a10 - ref10) < 1e-12 and mono
    return CheckResult("policies.alpha_schedule", ok, f"alpha_1 = {a1:.4f}, alpha_10 = {a10:.4f}")


def thompson_curves(n_curves, seed=7, n_history=30, d=2, burn_in=50):
    """Second derivatives of CSGP-TS sampled curves on the action grid, one row per curve."""
    rng = np.random.default_rng(seed)
    kernel = make_csgp_kernel(build_basis(5, 2), lengthscale=0.5, variance=1.0)
    grid = np.linspace(0.0, 1.0, 100)
    rows = []
    h = BanditHistory(0.1, d)
    for i in range(n_curves):
        if i % 50 == 0:
            h = _random_history(rng, n_history, d, 0.1)
        x = rng.uniform(0, 1, d)
        _, diag = csgp_thompson_select(kernel, h, x, grid, SamplerConfig(n=1, burn_in=burn_in), rng=rng)
        rows.append(second_derivative(kernel.basis, diag["beta"][-kernel.J:], grid))
    return np.array(rows)


@_timed
def check_thompson_concavity(n_curves=200, seed=7, tol=1e-9):
    d2 = thompson_curves(n_curves, seed)
    worst = float(d2.max())
    return CheckResult("policies.thompson_concavity", worst <= tol,
                       f"{n_curves} curves, max second derivative {worst:.2e}")


SUITES = {
    "splines": [check_concavity_equivalence, check_mspline_normalisation],
    "posterior": [check_gp_posterior_oracle, check_beta_posterior_oracle, check_variance_dual_form],
    "tmvn": [check_univariate_closed_form, check_diagonal_factorisation, check_correlated_rejection],
    "policies": [check_alpha_values, check_thompson_concavity],
}


def run_suite(name):
    """Run one suite (or ``all``); returns a list of :class:`CheckResult`."""
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    results = []
    for n in names:
        for check in SUITES[n]:
            try:
                results.append(check())
            except Exception as exc:  # a crash is a failure, reported like one
                results.append(CheckResult(f"{n}.{check.__name__}", False, f"error: {exc!r}"))
    return results


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  seconds  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.2f}  {r.detail}")
    return "\n".join(lines)
