"""Bandit episodes, replicated experiments, regret aggregation and bound diagnostics.

Within a replication every policy sees the same context stream and the same
initial actions (paired comparison); observation noise and sampler
randomness come from per-policy streams. All randomness derives from
``experiment.base_seed`` through :class:`numpy.random.SeedSequence`, so an
experiment is a pure function of its configuration.
"""

import csv
import io
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from csgp._linalg import chol_logdet, jitter_cholesky
from csgp.config import ExperimentConfig
from csgp.environments import SyntheticSpec, observe, regret, synthetic_generate, warfarin_environment
from csgp.errors import CSGPError
from csgp.kernels import BaseKernelSpec, base_gram, csgp_cross, make_csgp_kernel
from csgp.policies import POLICY_NAMES, Policy, alpha
from csgp.posterior import BanditHistory
from csgp.splines import build_basis

__all__ = [
    "TRACE_HEADER",
    "EpisodeResult",
    "ExperimentConfig",
    "make_environment",
    "make_policy",
    "run_episode",
    "run_replication",
    "run_experiment",
    "summarize",
    "info_gain",
    "regret_bound",
    "atomic_write",
    "write_trace",
    "read_trace",
    "write_json",
    "curves_from_trace",
]

log = logging.getLogger(__name__)

TRACE_HEADER = ("replication", "policy", "t", "context_id", "action", "reward",
                "inst_regret", "cum_regret", "wall_ms")


@dataclass
class EpisodeResult:
    replication: int
    policy: str
    rows: list = field(default_factory=list)
    gamma_hat: float = float("nan")
    ucb_bound: float = float("nan")
    ts_bound: float = float("nan")
    kernel: dict = field(default_factory=dict)
    error: str = None

    @property
    def cum_regret(self):
        return np.array([r[7] for r in self.rows])

    @property
    def ok(self):
        return self.error is None


# ---------------------------------------------------------------------------
# diagnostics


def info_gain(kernel, points, noise_var):
    """``0.5 log det(I + K / noise_var)`` over the given ``(n, 1 + d)`` points."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("info_gain needs at least one point")
    K = base_gram(kernel, P) if isinstance(kernel, BaseKernelSpec) else csgp_cross(kernel, P)
    A = np.eye(P.shape[0]) + K / noise_var
    L, _ = jitter_cholesky(0.5 * (A + A.T))
    return 0.5 * chol_logdet(L)


def regret_bound(T, alpha_T, gamma_hat, noise_var, c_sigma=None, kind="ucb"):
    """High-probability UCB ceiling or Bayes-regret TS ceiling.

    ``ucb``: ``sqrt(C1 T alpha_T gamma) + 2`` with ``C1 = 8 / log(1 + 1/noise_var)``.
    ``ts``: ``C_sigma + 2 sqrt(T gamma log(1 + 1/noise_var) alpha_T)``.
    """
    log_term = math.log1p(1.0 / noise_var)
    if kind == "ucb":
        c1 = 8.0 / log_term
        return math.sqrt(max(c1 * T * alpha_T * gamma_hat, 0.0)) + 2.0
    if kind == "ts":
        if c_sigma is None:
            raise ValueError("the Thompson bound needs c_sigma")
        return c_sigma + 2.0 * math.sqrt(max(T * gamma_hat * log_term * alpha_T, 0.0))
    raise ValueError(f"unknown bound kind {kind!r}")


def ts_alpha(T, action_count):
    return 2.0 * math.log((T * T + 1.0) * action_count)


# ---------------------------------------------------------------------------
# construction helpers


def _seed(base_seed, *key):
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in key))


def make_environment(config, replication=0):
    e = config.env
    if e.type == "warfarin":
        return warfarin_environment(e.noise_var, e.optimum_grid_size)
    env_seed = int(_seed(e.seed, replication).generate_state(1)[0])
    spec = SyntheticSpec(d=e.d, theta=e.theta, S=e.S, fine_grid=e.fine_grid_size, seed=env_seed,
                         h_lengthscale=e.h_lengthscale, noise_var=e.noise_var,
                         optimum_grid_size=e.optimum_grid_size)
    return synthetic_generate(spec)


def make_policy(config, policy_cfg, grid):
    if policy_cfg.spline_model:
        k = config.kernel
        basis = build_basis(config.spline.num_interior_knots, config.spline.order_k)
        kernel = make_csgp_kernel(basis, k.family, k.lengthscale, k.variance, k.matern_nu, k.tied)
    else:
        k = config.gp_kernel
        kernel = BaseKernelSpec(k.family, k.lengthscale, k.variance, k.matern_nu)
    return Policy(policy_cfg, kernel, config.env.noise_var, grid, config.experiment.window,
                  config.experiment.fit_budget, k.fit_bounds(), learn_mean=k.prior_mean == "constant")


def action_grid(config):
    return np.linspace(0.0, 1.0, config.experiment.grid_size)


def _stream(config, replication, env):
    """Contexts (init + rounds) and initial grid indices shared by all policies."""
    ex = config.experiment
    rng = np.random.default_rng(_seed(ex.base_seed, replication, 0))
    contexts = env.sample_contexts(rng, ex.n_init + ex.T)
    init_idx = rng.integers(0, ex.grid_size, size=ex.n_init)
    return contexts, init_idx


# ---------------------------------------------------------------------------
# episodes


def run_episode(config, policy_cfg, replication=0, env=None, stream=None, selector=None):
    """Run one policy for one replication and return an :class:`EpisodeResult`.

    ``selector`` optionally replaces the policy's action rule with a callable
    ``(history, x, t, rng) -> action`` (used for oracle and random baselines).
    """
    ex = config.experiment
    env = make_environment(config, replication) if env is None else env
    contexts, init_idx = _stream(config, replication, env) if stream is None else stream
    env.prepare(contexts)
    grid = action_grid(config)
    p_index = POLICY_NAMES.index(policy_cfg.policy) if policy_cfg.policy in POLICY_NAMES else 99
    rng = np.random.default_rng(_seed(ex.base_seed, replication, 1, p_index))
    fit_seed = int(_seed(ex.base_seed, replication, 2, p_index).generate_state(1)[0])
    policy = make_policy(config, policy_cfg, grid)
    result = EpisodeResult(replication, policy_cfg.policy)

    history = BanditHistory(config.env.noise_var, env.dim)
    for i in range(ex.n_init):
        a = float(grid[init_idx[i]])
        history.append(contexts[i], a, observe(env, a, contexts[i], rng))

    cum = 0.0
    visited = []
    try:
        for t in range(1, ex.T + 1):
            start = time.perf_counter()
            if (t - 1) % ex.refit_cadence == 0 and len(history) >= 2:
                policy.refit(history, seed=fit_seed + t)
            cid = ex.n_init + t - 1
            x = contexts[cid]
            if selector is None:
                a, _ = policy.select(history, x, t, rng)
            else:
                a = float(selector(history, x, t, rng))
            y = observe(env, a, x, rng)
            r = regret(env, a, x)
            history.append(x, a, y)
            visited.append(history.points[-1])
            cum += r
            wall = (time.perf_counter() - start) * 1e3 if ex.record_wall_time else 0.0
            result.rows.append((replication, policy_cfg.policy, t, cid, a, y, r, cum, wall))
    except (CSGPError, np.linalg.LinAlgError, FloatingPointError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        log.warning("episode failed (replication %d, %s): %s", replication, policy_cfg.policy, exc)

    kernel = policy.kernel
    result.kernel = kernel.to_dict()
    if visited:
        T_done = len(visited)
        try:
            result.gamma_hat = info_gain(kernel, np.array(visited), config.env.noise_var)
        except CSGPError:
            result.gamma_hat = float("nan")
        sched = policy_cfg.schedule
        result.ucb_bound = regret_bound(T_done, alpha(sched, T_done), result.gamma_hat, config.env.noise_var)
        c_sigma = kernel.variance if isinstance(kernel, BaseKernelSpec) else kernel.prior_variance_sum()
        result.ts_bound = regret_bound(T_done, ts_alpha(T_done, ex.grid_size), result.gamma_hat,
                                       config.env.noise_var, c_sigma=c_sigma, kind="ts")
    return result


def run_replication(config, replication):
    """All configured policies on one replication, sharing environment and contexts."""
    env = make_environment(config, replication)
    stream = _stream(config, replication, env)
    return [run_episode(config, pc, replication, env, stream) for pc in config.policy_configs()]


def _replication_task(args):
    cfg_dict, r = args
    from csgp.config import parse_config

    return run_replication(parse_config(cfg_dict), r)


def run_experiment(config, jobs=1, progress=None):
    """Execute every (policy, replication) episode; returns ``(rows, summary)``."""
    reps = range(config.experiment.replications)
    results = []
    if jobs > 1 and config.experiment.replications > 1:
        cfg_dict = config.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_replication_task, [(cfg_dict, r) for r in reps]):
                results.extend(res)
                if progress:
                    progress(res)
    else:
        for r in reps:
            res = run_replication(config, r)
            results.extend(res)
            if progress:
                progress(res)
    results.sort(key=lambda e: (e.replication, config.policies.index(e.policy)))
    rows = [row for e in results for row in e.rows]
    return rows, summarize(config, results)


def _mean_se(curves):
    arr = np.asarray(curves, dtype=float)
    mean = arr.mean(axis=0)
    if arr.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, arr.std(axis=0, ddof=1) / math.sqrt(arr.shape[0])


def summarize(config, results):
    T = config.experiment.T
    per_policy = {}
    failures = []
    for name in config.policies:
        eps = sorted((e for e in results if e.policy == name), key=lambda e: e.replication)
        done = [e for e in eps if e.ok and len(e.rows) == T]
        failures.extend({"replication": e.replication, "policy": name, "error": e.error}
                        for e in eps if not e.ok)
        entry = {"replications": len(done)}
        if done:
            mean, se = _mean_se([e.cum_regret for e in done])
            final = [float(e.cum_regret[-1]) for e in done]
            entry.update({
                "mean_cum_regret": mean.tolist(),
                "se_cum_regret": se.tolist(),
                "final_cum_regret": final,
                "gamma_hat": float(np.mean([e.gamma_hat for e in done])),
                "ucb_bound": float(np.mean([e.ucb_bound for e in done])),
                "ts_bound": float(np.mean([e.ts_bound for e in done])),
                "per_replication": [
                    {"replication": e.replication, "final_cum_regret": float(e.cum_regret[-1]),
                     "gamma_hat": e.gamma_hat, "ucb_bound": e.ucb_bound, "ts_bound": e.ts_bound,
                     "within_ucb_bound": bool(e.cum_regret[-1] <= e.ucb_bound), "kernel": e.kernel}
                    for e in done
                ],
            })
        per_policy[name] = entry
    return {"policies": per_policy, "failures": failures, "config": config.to_dict()}


# ---------------------------------------------------------------------------
# file formats


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_trace(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write(path, buf.getvalue())


def read_trace(path):
    """Parse a trace CSV into a list of row tuples; raises ``ValueError`` on schema mismatch."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header: {header}")
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != len(TRACE_HEADER):
                raise ValueError(f"line {line_no}: expected {len(TRACE_HEADER)} fields, got {len(rec)}")
            rows.append((int(rec[0]), rec[1], int(rec[2]), int(rec[3]), float(rec[4]), float(rec[5]),
                         float(rec[6]), float(rec[7]), float(rec[8])))
    return rows


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, allow_nan=True) + "\n")


def curves_from_trace(rows):
    """Per-policy ``(t, mean, se)`` arrays from trace rows (full-length episodes only)."""
    by = {}
    for rep, pol, t, _, _, _, _, cum, _ in rows:
        by.setdefault(pol, {}).setdefault(rep, []).append((t, cum))
    out = {}
    for pol, reps in by.items():
        T = max(len(v) for v in reps.values())
        full = [[c for _, c in sorted(v)] for v in reps.values() if len(v) == T]
        mean, se = _mean_se(full)
        out[pol] = (np.arange(1, T + 1), mean, se)
    return out
