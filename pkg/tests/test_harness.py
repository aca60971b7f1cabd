import math
import random

import numpy as np
import pytest

from csgp.config import parse_config
from csgp.environments import Environment, warfarin_eval
from csgp.harness import (
    EpisodeResult,
    TRACE_HEADER,
    curves_from_trace,
    info_gain,
    read_trace,
    regret_bound,
    run_episode,
    run_experiment,
    summarize,
    write_trace,
)
from csgp.kernels import BaseKernelSpec, make_csgp_kernel
from csgp.policies import PolicyConfig
from csgp.splines import build_basis


def _cfg(**sections):
    base = {"experiment": {"T": 6, "n_init": 3, "grid_size": 11, "replications": 2, "refit_cadence": 3,
                           "fit_budget": 10},
            "policies": ["sgp_ucb", "gp_ucb"]}
    for k, v in sections.items():
        base.setdefault(k, {})
        if isinstance(v, dict):
            base[k].update(v)
        else:
            base[k] = v
    return parse_config(base)


def test_info_gain_scalar_and_limits():
    k = BaseKernelSpec("gaussian", 1.0, 1.0)
    assert info_gain(k, [[0.3, 0.1]], 1.0) == pytest.approx(0.5 * math.log(2), abs=1e-12)
    assert info_gain(k, [[0.3, 0.1]], 1e12) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        info_gain(k, np.zeros((0, 2)), 1.0)


def test_info_gain_monotone():
    rng = np.random.default_rng(0)
    kern = make_csgp_kernel(build_basis(5, 2), lengthscale=0.5)
    P = np.column_stack([rng.uniform(size=15), rng.uniform(size=(15, 2))])
    vals = [info_gain(kern, P[:n], 0.1) for n in range(1, 16)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_regret_bound_values():
    c1 = 8.0 / math.log(11.0)
    assert c1 == pytest.approx(3.3362, abs=1e-4)
    assert regret_bound(0, 10.0, 5.0, 0.1) == 2.0
    assert regret_bound(50, 10.0, 5.0, 0.1) == pytest.approx(math.sqrt(c1 * 50 * 10 * 5) + 2)
    ts = regret_bound(50, 10.0, 5.0, 0.1, c_sigma=3.0, kind="ts")
    assert ts == pytest.approx(3.0 + 2 * math.sqrt(50 * 5 * math.log(11) * 10))
    base = regret_bound(10, 5.0, 2.0, 0.1)
    assert regret_bound(11, 5.0, 2.0, 0.1) > base
    assert regret_bound(10, 6.0, 2.0, 0.1) > base
    assert regret_bound(10, 5.0, 3.0, 0.1) > base
    with pytest.raises(ValueError):
        regret_bound(10, 5.0, 2.0, 0.1, kind="ts")


def _fixed_context_env():
    return Environment(7, warfarin_eval, math.sqrt(0.1), lambda rng, n: np.zeros((n, 7)), name="fixed")


def test_oracle_policy_has_no_regret():
    cfg = _cfg(experiment={"T": 5, "n_init": 0, "grid_size": 100, "replications": 1, "fit_budget": 0},
               policies=["gp_ucb"])
    res = run_episode(cfg, PolicyConfig("gp_ucb"), env=_fixed_context_env(),
                      selector=lambda h, x, t, rng: 0.0)
    assert res.ok and len(res.rows) == 5
    assert all(row[6] == 0.0 for row in res.rows)


def test_random_policy_matches_grid_average():
    T = 2000
    cfg = _cfg(experiment={"T": T, "n_init": 0, "grid_size": 100, "replications": 1, "fit_budget": 0,
                           "refit_cadence": 10**6}, policies=["gp_ucb"])
    grid = np.linspace(0, 1, 100)
    res = run_episode(cfg, PolicyConfig("gp_ucb"), env=_fixed_context_env(),
                      selector=lambda h, x, t, rng: rng.choice(grid))
    inst = np.array([row[6] for row in res.rows])
    per_action = 15.0 * (2 * grid) ** 2
    expected, sd = per_action.mean(), per_action.std()
    assert abs(inst.mean() - expected) <= 3 * sd / math.sqrt(T)


def test_trace_schema_and_determinism(tmp_path):
    cfg = _cfg()
    rows1, s1 = run_experiment(cfg)
    rows2, s2 = run_experiment(cfg)
    write_trace(tmp_path / "a.csv", rows1)
    write_trace(tmp_path / "b.csv", rows2)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = read_trace(tmp_path / "a.csv")
    assert len(back) == 2 * 2 * 6 and back == [tuple(r) for r in rows1]
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == TRACE_HEADER
    # every wall_ms is zero unless explicitly requested
    assert all(r[8] == 0.0 for r in back)
    # cumulative regret is the running sum of instantaneous regret
    for pol in ("sgp_ucb", "gp_ucb"):
        ep = [r for r in back if r[0] == 0 and r[1] == pol]
        assert np.allclose(np.cumsum([r[6] for r in ep]), [r[7] for r in ep])
        assert [r[3] for r in ep] == list(range(3, 9))


def test_parallel_run_matches_serial():
    cfg = _cfg()
    assert run_experiment(cfg, jobs=2)[0] == run_experiment(cfg)[0]


def test_policies_share_contexts():
    rows, _ = run_experiment(_cfg())
    a = [r[3] for r in rows if r[1] == "sgp_ucb"]
    b = [r[3] for r in rows if r[1] == "gp_ucb"]
    assert a == b


def _fake(rep, pol, curve):
    rows = [(rep, pol, t + 1, t, 0.5, 0.0, 0.0, c, 0.0) for t, c in enumerate(curve)]
    return EpisodeResult(rep, pol, rows, 1.0, 10.0, 20.0, {})


def test_summary_reduction():
    cfg = _cfg(experiment={"T": 3}, policies=["gp_ucb"])
    curves = [[1.0, 2.0, 4.0], [0.0, 1.0, 1.5], [2.0, 2.5, 3.0]]
    results = [_fake(r, "gp_ucb", c) for r, c in enumerate(curves)]
    s = summarize(cfg, results)["policies"]["gp_ucb"]
    assert np.allclose(s["mean_cum_regret"], np.mean(curves, axis=0), atol=1e-12, rtol=0)
    assert np.allclose(s["se_cum_regret"], np.std(curves, axis=0, ddof=1) / math.sqrt(3), atol=1e-12)
    shuffled = results[:]
    random.Random(0).shuffle(shuffled)
    assert summarize(cfg, shuffled) == summarize(cfg, results)
    one = summarize(cfg, results[:1])["policies"]["gp_ucb"]
    assert one["se_cum_regret"] == [0.0, 0.0, 0.0]


def test_failed_episode_is_reported():
    cfg = _cfg(experiment={"T": 3}, policies=["gp_ucb"])
    bad = EpisodeResult(1, "gp_ucb", [], error="SamplerError: boom")
    s = summarize(cfg, [_fake(0, "gp_ucb", [1.0, 2.0, 3.0]), bad])
    assert s["policies"]["gp_ucb"]["replications"] == 1
    assert s["failures"] == [{"replication": 1, "policy": "gp_ucb", "error": "SamplerError: boom"}]


def test_curves_from_trace_match_summary():
    cfg = _cfg()
    rows, s = run_experiment(cfg)
    curves = curves_from_trace(rows)
    for pol, (t, mean, se) in curves.items():
        assert list(t) == list(range(1, 7))
        assert np.allclose(mean, s["policies"][pol]["mean_cum_regret"], atol=1e-12, rtol=0)
        assert np.allclose(se, s["policies"][pol]["se_cum_regret"], atol=1e-12, rtol=0)


def test_read_trace_rejects_bad_schema(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("replication,policy,t\n0,gp_ucb,1\n")
    with pytest.raises(ValueError):
        read_trace(p)
    p.write_text(",".join(TRACE_HEADER) + "\n0,gp_ucb,1\n")
    with pytest.raises(ValueError):
        read_trace(p)
