"""Experiment configuration: YAML schema, strict parsing and dotted overrides.

Unknown keys are errors and carry the offending line number. The resolved
configuration round-trips through :meth:`ExperimentConfig.to_dict`, which
is echoed into every summary file.
"""

import copy
from dataclasses import asdict, dataclass, field, fields

import yaml

from csgp.errors import ConfigError
from csgp.kernels import FitBounds
from csgp.policies import POLICY_NAMES, AlphaSchedule, PolicyConfig, SamplerConfig

__all__ = ["ExperimentConfig", "load_config", "parse_config", "apply_overrides"]


@dataclass
class ExperimentSection:
    T: int = 300
    n_init: int = 25
    grid_size: int = 100
    replications: int = 10
    base_seed: int = 0
    delta: float = 0.1
    refit_cadence: int = 25
    fit_budget: int = 60
    window: int = 1
    record_wall_time: bool = False


@dataclass
class EnvSection:
    type: str = "warfarin"
    d: int = 7
    theta: float = 1.0
    S: int = 10
    noise_var: float = 0.1
    seed: int = 0
    fine_grid_size: int = 200
    optimum_grid_size: int = 1000
    h_lengthscale: float = 0.2


@dataclass
class KernelSection:
    family: str = "gaussian"
    lengthscale: float = 1.0
    variance: float = 1.0
    matern_nu: float = 2.5
    tied: bool = True
    lengthscale_min: float = 1e-2
    lengthscale_max: float = 1e2
    variance_min: float = 1e-4
    variance_max: float = 1e5
    # "zero", or "constant": per-coefficient constants fitted with the hyperparameters
    prior_mean: str = "zero"

    def fit_bounds(self):
        return FitBounds((self.lengthscale_min, self.lengthscale_max), (self.variance_min, self.variance_max))


@dataclass
class SplineSection:
    num_interior_knots: int = 5
    order_k: int = 2


@dataclass
class SamplerSection:
    n: int = 2000
    burn_in: int = 200
    method: str = "analytic"
    max_shrink: int = 64
    rao_blackwell: bool = True


@dataclass
class AlphaSection:
    variant: str = "discrete"
    eta: float = 1.0
    zeta: float = 1.0


@dataclass
class OutputSection:
    trace: str = "trace.csv"
    summary: str = "summary.json"


_SECTIONS = {
    "experiment": ExperimentSection,
    "env": EnvSection,
    "kernel": KernelSection,
    "gp_kernel": KernelSection,
    "spline": SplineSection,
    "sampler": SamplerSection,
    "alpha": AlphaSection,
    "output": OutputSection,
}


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    env: EnvSection = field(default_factory=EnvSection)
    policies: list = field(default_factory=lambda: ["csgp_ucb", "sgp_ucb", "gp_ucb"])
    kernel: KernelSection = field(default_factory=KernelSection)
    gp_kernel: KernelSection = field(default_factory=KernelSection)
    spline: SplineSection = field(default_factory=SplineSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    alpha: AlphaSection = field(default_factory=AlphaSection)
    output: OutputSection = field(default_factory=OutputSection)

    # flat accessors
    @property
    def T(self):
        return self.experiment.T

    @property
    def replications(self):
        return self.experiment.replications

    @property
    def base_seed(self):
        return self.experiment.base_seed

    def policy_configs(self):
        sched = AlphaSchedule(self.alpha.variant, self.experiment.delta, self.experiment.grid_size,
                              self.alpha.eta, self.alpha.zeta)
        samp = SamplerConfig(**asdict(self.sampler))
        return [PolicyConfig(p, sched, samp) for p in self.policies]

    def to_dict(self):
        return copy.deepcopy(asdict(self))

    def validate(self, lines=None):
        lines = lines or {}

        def fail(msg, key):
            raise ConfigError(msg, key, lines.get(key))

        e = self.experiment
        if e.T < 1:
            fail("T must be >= 1", "experiment.T")
        if e.replications < 1:
            fail("replications must be >= 1", "experiment.replications")
        if e.grid_size < 2:
            fail("grid_size must be >= 2", "experiment.grid_size")
        if e.n_init < 0:
            fail("n_init must be >= 0", "experiment.n_init")
        if not 0.0 < e.delta < 1.0:
            fail("delta must lie in (0, 1)", "experiment.delta")
        if e.refit_cadence < 1:
            fail("refit_cadence must be >= 1", "experiment.refit_cadence")
        if e.window < 1:
            fail("window must be >= 1", "experiment.window")
        if self.env.type not in ("warfarin", "synthetic"):
            fail(f"unknown env type {self.env.type!r}", "env.type")
        if not self.env.noise_var > 0:
            fail("noise_var must be positive", "env.noise_var")
        if self.env.type == "warfarin" and self.env.d != 7:
            fail("the Warfarin environment has d = 7", "env.d")
        if not self.policies:
            fail("at least one policy is required", "policies")
        for p in self.policies:
            if p not in POLICY_NAMES:
                fail(f"unknown policy {p!r}; expected one of {', '.join(POLICY_NAMES)}", "policies")
        if len(set(self.policies)) != len(self.policies):
            fail("duplicate policy names", "policies")
        for sec in ("kernel", "gp_kernel"):
            k = getattr(self, sec)
            if k.family not in ("gaussian", "matern"):
                fail(f"unknown kernel family {k.family!r}", f"{sec}.family")
            if not (k.lengthscale > 0 and k.variance > 0):
                fail("lengthscale and variance must be positive", f"{sec}.lengthscale")
            if not 0 < k.lengthscale_min <= k.lengthscale_max:
                fail("need 0 < lengthscale_min <= lengthscale_max", f"{sec}.lengthscale_min")
            if not 0 < k.variance_min <= k.variance_max:
                fail("need 0 < variance_min <= variance_max", f"{sec}.variance_min")
            if k.prior_mean not in ("zero", "constant"):
                fail("prior_mean must be 'zero' or 'constant'", f"{sec}.prior_mean")
        if self.spline.order_k not in (1, 2):
            fail("order_k must be 1 or 2", "spline.order_k")
        if self.spline.num_interior_knots < 1:
            fail("num_interior_knots must be >= 1", "spline.num_interior_knots")
        if self.sampler.method not in ("analytic", "shrink"):
            fail("sampler.method must be 'analytic' or 'shrink'", "sampler.method")
        if self.alpha.variant not in ("discrete", "continuous"):
            fail("alpha.variant must be 'discrete' or 'continuous'", "alpha.variant")
        return self


def _coerce(value, default, key, lines):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    raise ConfigError(f"expected {type(default).__name__}, got {value!r}", key, lines.get(key))


def parse_config(data, lines=None):
    """Build a validated :class:`ExperimentConfig` from a nested mapping."""
    lines = lines or {}
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping")
    cfg = ExperimentConfig()
    for key, value in data.items():
        if key == "policies":
            if isinstance(value, str):
                value = [value]
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError("policies must be a list of names", "policies", lines.get("policies"))
            cfg.policies = list(value)
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}", key, lines.get(key))
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping", key, lines.get(key))
        section = getattr(cfg, key)
        names = {f.name for f in fields(section)}
        for sub, v in value.items():
            dotted = f"{key}.{sub}"
            if sub not in names:
                raise ConfigError(f"unknown config key {dotted!r}", dotted, lines.get(dotted))
            setattr(section, sub, _coerce(v, getattr(section, sub), dotted, lines))
    return cfg.validate(lines)


def _key_lines(node, prefix="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            name = f"{prefix}{k.value}"
            out[name] = k.start_mark.line + 1
            _key_lines(v, name + ".", out)
    return out


def load_config(path, overrides=()):
    """Read a YAML config file, apply ``key=value`` overrides and validate."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", line=mark.line + 1 if mark else None) from exc
    lines = _key_lines(node) if node is not None else {}
    data = apply_overrides(data or {}, overrides)
    return parse_config(data, lines)


def apply_overrides(data, overrides):
    """Set dotted keys (``experiment.T=5``); values are parsed as YAML scalars."""
    data = copy.deepcopy(data) if data else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", item)
        key, raw = item.split("=", 1)
        key = key.strip()
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}", key) from exc
        parts = key.split(".")
        cur = data
        for p in parts[:-1]:
            if not isinstance(cur.get(p, {}), dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping", key)
            cur = cur.setdefault(p, {})
        cur[parts[-1]] = value
    return data
