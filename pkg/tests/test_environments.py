import math

import numpy as np
import pytest

from csgp.environments import (
    Environment,
    SyntheticSpec,
    observe,
    regret,
    synthetic_generate,
    warfarin_environment,
    warfarin_eval,
    warfarin_optimal_action,
)
from csgp.errors import DomainError

ZERO7 = np.zeros(7)


def test_warfarin_reference_values():
    assert warfarin_eval(0.0, ZERO7) == pytest.approx(12.0)
    assert warfarin_eval(0.5, ZERO7) == pytest.approx(-3.0)
    assert warfarin_optimal_action(ZERO7) == 0.0


def test_warfarin_is_quadratic_in_action():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-1, 1, 7)
        a = np.array([0.1, 0.4, 0.7])
        f = warfarin_eval(a, x)
        # leading coefficient -60, so the second difference is -120 h^2 with h = 0.3
        assert f[0] - 2 * f[1] + f[2] == pytest.approx(-120 * 0.09, abs=1e-9)


def test_warfarin_domain_errors():
    with pytest.raises(DomainError):
        warfarin_eval(0.5, np.zeros(6))
    with pytest.raises(DomainError):
        warfarin_eval(0.5, np.full(7, 1.5))
    with pytest.raises(DomainError):
        warfarin_eval(1.2, ZERO7)


def test_warfarin_regret():
    env = warfarin_environment()
    assert regret(env, 0.5, ZERO7) == pytest.approx(15.0)
    assert regret(env, 0.0, ZERO7) == 0.0
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.uniform(-1, 1, 7)
        assert regret(env, float(rng.uniform()), x) >= 0.0
        a_star = env.optimum_grid[np.argmax(env.mean_reward(env.optimum_grid, x))]
        assert regret(env, a_star, x) == 0.0


def test_regret_shift_invariance():
    shifted = Environment(7, lambda a, x: warfarin_eval(a, x) + 123.0, 0.1, None)
    plain = warfarin_environment()
    x = np.linspace(-0.9, 0.9, 7)
    for a in (0.0, 0.37, 1.0):
        assert regret(shifted, a, x) == pytest.approx(regret(plain, a, x), abs=1e-9)


def test_observation_noise_statistics():
    env = warfarin_environment(noise_var=0.1)
    rng = np.random.default_rng(2)
    x = np.full(7, 0.2)
    obs = np.array([observe(env, 0.3, x, rng) for _ in range(10_000)])
    f = warfarin_eval(0.3, x)
    assert abs(obs.mean() - f) <= 3 * math.sqrt(0.1 / 10_000)
    assert obs.var(ddof=1) == pytest.approx(0.1, rel=0.1)
    quiet = Environment(7, warfarin_eval, 0.0, None)
    assert observe(quiet, 0.3, x, rng) == f


@pytest.fixture(scope="module")
def synth():
    return synthetic_generate(SyntheticSpec(d=3, theta=0.6, S=4, seed=5, h_burn_in=200))


def test_synthetic_concavity_audit(synth):
    rng = np.random.default_rng(3)
    grid = synth.optimum_grid
    for _ in range(50):
        x = rng.uniform(0, 1, 3)
        f = synth.mean_reward(grid, x)
        assert np.max(np.diff(f, 2)) <= 1e-6


def test_synthetic_curves_are_concave(synth):
    for h in synth.curves:
        assert np.all(h.second_derivative_grid <= 0.0)


def test_synthetic_reproducible():
    spec = SyntheticSpec(d=2, S=3, seed=11, h_burn_in=100)
    xs = np.random.default_rng(4).uniform(0, 1, (10, 2))
    e1, e2 = synthetic_generate(spec), synthetic_generate(spec)
    v1 = [e1.mean_reward(np.linspace(0, 1, 7), x) for x in xs]
    v2 = [e2.mean_reward(np.linspace(0, 1, 7), x) for x in xs]
    assert all(np.array_equal(a, b) for a, b in zip(v1, v2))


def test_synthetic_field_is_order_independent_after_prepare():
    # prepared contexts fix the field values regardless of later query order
    spec = SyntheticSpec(d=2, S=2, seed=12, h_burn_in=100)
    xs = np.random.default_rng(5).uniform(0, 1, (6, 2))
    e1, e2 = synthetic_generate(spec), synthetic_generate(spec)
    e1.prepare(xs)
    e2.prepare(xs)
    fwd = [e1.mean_reward(0.4, x) for x in xs]
    rev = [e2.mean_reward(0.4, x) for x in xs[::-1]][::-1]
    assert fwd == rev


def test_gamma_only_environment_has_zero_regret():
    env = synthetic_generate(SyntheticSpec(d=2, S=0, seed=1))
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = rng.uniform(0, 1, 2)
        assert regret(env, float(rng.uniform()), x) == 0.0


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        synthetic_generate(SyntheticSpec(d=0))
    with pytest.raises(ValueError):
        synthetic_generate(SyntheticSpec(theta=0.0))
    with pytest.raises(DomainError):
        synthetic_generate(SyntheticSpec(d=2, S=1, seed=0, h_burn_in=50)).mean_reward(0.5, np.zeros(3))
