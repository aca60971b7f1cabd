import math

import numpy as np
import pytest

import csgp.policies as pol
from csgp.harness import make_policy
from csgp.config import parse_config
from csgp.kernels import BaseKernelSpec, base_gram, csgp_cross, log_marginal_likelihood, make_csgp_kernel
from csgp.posterior import BanditHistory, CoefficientPosterior, beta_posterior
from csgp.policies import (
    AlphaSchedule,
    PolicyConfig,
    SamplerConfig,
    alpha,
    csgp_thompson_select,
    csgp_ucb_select,
    gp_ts_select,
    gp_ucb_select,
    select_argmax,
    sgp_ts_select,
    sgp_ucb_select,
    thompson_from_posterior,
    ucb_from_posterior,
)
from csgp.splines import build_basis, phi_matrix
from csgp.validation import _random_history, check_alpha_values, check_thompson_concavity

GRID = np.linspace(0.0, 1.0, 21)


def test_alpha_reference_values():
    s = AlphaSchedule("discrete", 0.1, 100)
    assert alpha(s, 1) == pytest.approx(2 * math.log(200 * math.pi**2 / 0.6))
    assert alpha(s, 1) == pytest.approx(16.20, abs=5e-3)
    assert alpha(s, 10) == pytest.approx(25.41, abs=5e-3)
    vals = [alpha(s, t) for t in range(1, 1001)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert check_alpha_values().passed


def test_alpha_continuous_and_errors():
    s = AlphaSchedule("continuous", 0.2, eta=2.0, zeta=3.0)
    t = 4
    ref = 2 * math.log(4 * math.pi**2 * t * t / 0.6) + 2 * math.log(t * t * 3.0 * math.sqrt(math.log(20.0)))
    assert alpha(s, t) == pytest.approx(ref)
    with pytest.raises(ValueError):
        alpha(AlphaSchedule(delta=1.0), 1)
    with pytest.raises(ValueError):
        alpha(AlphaSchedule(), 0)
    assert alpha(AlphaSchedule(override=0.0), 7) == 0.0


def test_argmax_ties_and_shift_invariance():
    assert select_argmax([1.0, 3.0, 3.0, 2.0]) == 1
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.standard_normal(10)
        assert select_argmax(s + rng.normal() * 100) == select_argmax(s)


def test_three_action_hand_instance():
    # actions pick one coefficient each: scores 1 + 2(.1), .5 + 2(1), .2 + 2(.5)
    post = CoefficientPosterior(np.array([1.0, 0.5, 0.2]), np.diag([0.01, 1.0, 0.25]), np.full(3, np.inf), 3)
    idx, diag = ucb_from_posterior(post, np.eye(3), 4.0, truncate=False)
    assert idx == 1
    assert np.allclose(diag["score"], [1.2, 2.5, 1.2])


def test_empty_history_tie_breaks_to_first():
    h = BanditHistory(0.1, 2)
    x = np.array([0.2, 0.7])
    a, diag = gp_ucb_select(BaseKernelSpec(), h, x, GRID, 1, AlphaSchedule())
    assert a == 0.0 and np.ptp(diag["score"]) == 0.0
    # spline priors are not flat in a, so use a grid of repeated actions instead
    kern = make_csgp_kernel(build_basis(5, 2))
    dup = np.full(4, 0.3)
    a, diag = csgp_ucb_select(kern, h, x, dup, 1, AlphaSchedule(), SamplerConfig(n=200, burn_in=20), rng=0)
    assert diag["index"] == 0


def test_greedy_limit_is_argmax_of_truncated_mean():
    rng = np.random.default_rng(1)
    kern = make_csgp_kernel(build_basis(5, 2), lengthscale=0.5)
    h = _random_history(rng, 20, 2, 0.1)
    x = rng.uniform(size=2)
    greedy = AlphaSchedule(override=0.0)
    a, diag = csgp_ucb_select(kern, h, x, GRID, 3, greedy, SamplerConfig(n=500, burn_in=50), rng=2)
    assert diag["index"] == int(np.argmax(diag["mu"]))
    post = beta_posterior(kern, h, x[None])
    a, diag = sgp_ucb_select(kern, h, x, GRID, 3, greedy)
    assert np.allclose(diag["mu"], phi_matrix(kern.basis, GRID) @ post.mean)
    assert a == GRID[np.argmax(diag["mu"])]


def test_all_infinite_truncation_matches_unconstrained():
    rng = np.random.default_rng(3)
    kern = make_csgp_kernel(build_basis(5, 2), lengthscale=0.6)
    h = _random_history(rng, 25, 2, 0.1)
    x = rng.uniform(size=2)
    sched = AlphaSchedule()
    a_s, d_s = sgp_ucb_select(kern, h, x, GRID, 5, sched)
    a_c, d_c = csgp_ucb_select(kern, h, x, GRID, 5, sched, SamplerConfig(n=4000, burn_in=100), rng=4,
                               trunc=np.full(kern.J, np.inf))
    assert a_c == a_s
    assert np.all(np.abs(d_c["mu"] - d_s["mu"]) <= 4 * d_c["se"] + 1e-9)
    assert np.allclose(d_c["sigma"], d_s["sigma"])


def test_ucb_bonus_uses_untruncated_sigma():
    rng = np.random.default_rng(5)
    kern = make_csgp_kernel(build_basis(5, 2))
    h = _random_history(rng, 10, 2, 0.1)
    x = rng.uniform(size=2)
    _, d_c = csgp_ucb_select(kern, h, x, GRID, 2, AlphaSchedule(), SamplerConfig(n=300, burn_in=30), rng=0)
    _, d_s = sgp_ucb_select(kern, h, x, GRID, 2, AlphaSchedule())
    assert np.allclose(d_c["sigma"], d_s["sigma"])
    assert np.allclose(d_c["score"], d_c["mu"] + math.sqrt(d_c["alpha"]) * d_c["sigma"])


def test_gp_ucb_hand_instance():
    spec = BaseKernelSpec("gaussian", 0.7, 1.5)
    h = BanditHistory(0.2, 1)
    for x, a, y in [(0.1, 0.2, 1.0), (0.5, 0.9, -0.5), (0.8, 0.4, 0.3)]:
        h.append([x], a, y)
    x_t = np.array([0.4])
    grid = np.array([0.0, 0.5, 1.0])
    _, diag = gp_ucb_select(spec, h, x_t, grid, 4, AlphaSchedule(action_count=3))
    P = h.points
    Q = np.column_stack([grid, np.full(3, 0.4)])
    k = lambda A, B: 1.5 * np.exp(-0.5 * ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1) / 0.49)  # noqa: E731
    Kinv = np.linalg.inv(k(P, P) + 0.2 * np.eye(3))
    mu = k(Q, P) @ Kinv @ h.rewards
    var = 1.5 - np.einsum("ij,jk,ik->i", k(Q, P), Kinv, k(Q, P))
    a4 = 2 * math.log(2 * 3 * 16 * math.pi**2 / 0.6)
    assert np.allclose(diag["score"], mu + math.sqrt(a4) * np.sqrt(var), atol=1e-8)


def test_gp_constant_mean_shifts_scores():
    h = BanditHistory(0.1, 1)
    h.append([0.2], 0.5, 1.0)
    base = BaseKernelSpec("gaussian", 0.5, 1.0)
    _, d0 = gp_ucb_select(base, h, [0.3], GRID, 1, AlphaSchedule(override=0.0))
    _, d1 = gp_ucb_select(BaseKernelSpec("gaussian", 0.5, 1.0, mean=2.0), h, [0.3], GRID, 1,
                          AlphaSchedule(override=0.0))
    # mean m: m + k K^-1 (y - m), so the shift is m (1 - k K^-1 1)
    K = base_gram(base, h.points)[0, 0] + 0.1
    k = base_gram(base, np.column_stack([GRID, np.full(GRID.size, 0.3)]), h.points)[:, 0]
    assert np.allclose(d1["mu"] - d0["mu"], 2.0 * (1 - k / K))


@pytest.mark.parametrize("fn", ["csgp", "sgp", "gp"])
def test_thompson_determinism(fn):
    rng = np.random.default_rng(6)
    h = _random_history(rng, 15, 2, 0.1)
    x = rng.uniform(size=2)
    kern = make_csgp_kernel(build_basis(5, 2), lengthscale=0.5)
    run = {
        "csgp": lambda s: csgp_thompson_select(kern, h, x, GRID, SamplerConfig(burn_in=50), rng=s),
        "sgp": lambda s: sgp_ts_select(kern, h, x, GRID, rng=s),
        "gp": lambda s: gp_ts_select(BaseKernelSpec(lengthscale=0.5), h, x, GRID, rng=s),
    }[fn]
    assert [run(s)[0] for s in range(5)] == [run(s)[0] for s in range(5)]


def test_thompson_degenerate_posterior_is_greedy():
    Phi = np.array([[0.0, 0.0, 1.0], [0.1, 0.5, 1.0], [0.4, 1.0, 1.0]])
    mean = np.array([-0.5, 0.3, 0.1])
    post = CoefficientPosterior(mean, 1e-14 * np.eye(3), np.array([0.0, np.inf, np.inf]), 3)
    for trunc in (True, False):
        idx, _ = thompson_from_posterior(post, Phi, SamplerConfig(burn_in=10), rng=0, truncate=trunc)
        assert idx == int(np.argmax(Phi @ mean))


def test_thompson_samples_are_concave():
    assert check_thompson_concavity(n_curves=100).passed


def test_thompson_frequency_matches_rejection_oracle():
    mean = np.array([-0.2, 0.1, 0.0])
    cov = np.array([[1.0, 0.3, 0.0], [0.3, 0.5, 0.1], [0.0, 0.1, 0.2]])
    post = CoefficientPosterior(mean, cov, np.array([0.0, np.inf, np.inf]), 3)
    Phi = np.array([[0.0, 0.2, 1.0], [0.3, 0.6, 1.0]])
    n = 1000
    hits = sum(thompson_from_posterior(post, Phi, SamplerConfig(burn_in=100), rng=s)[0] == 1 for s in range(n))
    rng = np.random.default_rng(99)
    z = rng.multivariate_normal(mean, cov, 400_000)
    z = z[z[:, 0] <= 0.0]
    p = float(np.mean(np.argmax(z @ Phi.T, axis=1) == 1))
    assert abs(hits / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_unconstrained_policies_never_touch_sampler(monkeypatch):
    calls = []
    real = pol.ess_sample

    def spy(*a, **k):
        calls.append(1)
        return real(*a, **k)

    monkeypatch.setattr(pol, "ess_sample", spy)
    rng = np.random.default_rng(7)
    h = _random_history(rng, 10, 2, 0.1)
    x = rng.uniform(size=2)
    kern = make_csgp_kernel(build_basis(5, 2))
    sgp_ucb_select(kern, h, x, GRID, 1, AlphaSchedule())
    sgp_ts_select(kern, h, x, GRID, rng=0)
    gp_ucb_select(BaseKernelSpec(), h, x, GRID, 1, AlphaSchedule())
    gp_ts_select(BaseKernelSpec(), h, x, GRID, rng=0)
    assert not calls
    csgp_thompson_select(kern, h, x, GRID, SamplerConfig(burn_in=10), rng=0)
    assert calls


def test_policy_config_flags_and_validation():
    assert PolicyConfig("csgp_ucb").constrained and PolicyConfig("sgp_ts").spline_model
    assert not PolicyConfig("gp_ts").spline_model and not PolicyConfig("gp_ts").is_ucb
    with pytest.raises(ValueError):
        PolicyConfig("nn_ucb")
    with pytest.raises(ValueError):
        pol.Policy(PolicyConfig("csgp_ucb"), BaseKernelSpec(), 0.1, GRID)


@pytest.mark.parametrize("name", ["csgp_ucb", "gp_ucb"])
def test_policy_refit_learns_gls_mean(name):
    cfg = parse_config({"kernel": {"prior_mean": "constant"}, "gp_kernel": {"prior_mean": "constant"},
                        "env": {"type": "synthetic", "d": 2}})
    p = make_policy(cfg, PolicyConfig(name), GRID)
    rng = np.random.default_rng(8)
    h = BanditHistory(0.1, 2)
    for _ in range(30):
        a = float(rng.uniform())
        h.append(rng.uniform(size=2), a, 5.0 - 3.0 * (a - 0.4) ** 2 + 0.3 * rng.standard_normal())
    k = p.refit(h, seed=0)
    P, y = h.points, h.rewards
    if name == "gp_ucb":
        H, w = np.ones((30, 1)), np.array([k.mean])
        K = base_gram(k, P)
    else:
        H, w = phi_matrix(k.basis, P[:, 0]), np.array(k.mean_fns)
        K = csgp_cross(k, P)
    Ki = np.linalg.inv(K + 0.1 * np.eye(30))
    ref = np.linalg.solve(H.T @ Ki @ H, H.T @ Ki @ y)
    assert np.allclose(H @ w, H @ ref, atol=1e-5)
    assert log_marginal_likelihood(k, 0.1, h) >= log_marginal_likelihood(p.initial_kernel, 0.1, h)
