import csv
import json

import numpy as np
import pytest

from csgp.cli import main
from csgp.config import apply_overrides, load_config, parse_config
from csgp.errors import ConfigError

MINIMAL = """\
experiment:
  T: 10
  n_init: 3
  grid_size: 11
  replications: 1
  fit_budget: 10
policies: [gp_ucb]
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(MINIMAL)
    return p


def test_defaults_and_overrides():
    cfg = parse_config({})
    assert cfg.experiment.T == 300 and cfg.env.type == "warfarin" and cfg.kernel.prior_mean == "zero"
    cfg = parse_config(apply_overrides({}, ["experiment.T=5", "kernel.tied=false", "policies=[gp_ts]"]))
    assert cfg.experiment.T == 5 and cfg.kernel.tied is False and cfg.policies == ["gp_ts"]


@pytest.mark.parametrize("data,key", [
    ({"experiment": {"T": 0}}, "experiment.T"),
    ({"experiment": {"delta": 1.5}}, "experiment.delta"),
    ({"policies": ["nn_ucb"]}, "policies"),
    ({"kernel": {"prior_mean": "linear"}}, "kernel.prior_mean"),
    ({"kernel": {"lengthscale_min": 2.0, "lengthscale_max": 1.0}}, "kernel.lengthscale_min"),
    ({"env": {"type": "warfarin", "d": 5}}, "env.d"),
    ({"bogus": {}}, "bogus"),
    ({"experiment": {"T": "many"}}, "experiment.T"),
])
def test_validation_names_the_key(data, key):
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert info.value.key == key


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("experiment:\n  T: 5\n  bogus: 1\n")
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert info.value.key == "experiment.bogus" and info.value.line == 3


def test_run_smoke_and_override(cfg_file, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--quiet", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert (out / "trace.csv").exists() and (out / "summary.json").exists()
    assert main(["run", "--quiet", "--config", str(cfg_file), "--set", "experiment.T=5", "--out", str(out)]) == 0
    with open(out / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 and {r["policy"] for r in rows} == {"gp_ucb"}


def test_malformed_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("experiment:\n  T: 5\n  bogus: 1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "experiment.bogus" in err and "line 3" in err


def test_plot_data_round_trip(cfg_file, tmp_path):
    out = tmp_path / "out"
    args = ["run", "--quiet", "--config", str(cfg_file), "--out", str(out),
            "--set", "experiment.replications=3", "--set", "policies=[gp_ucb, gp_ts]"]
    assert main(args) == 0
    assert main(["plot-data", "--quiet", str(out / "trace.csv"), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    for pol in ("gp_ucb", "gp_ts"):
        data = np.loadtxt(out / f"curve_{pol}.csv", delimiter=",", skiprows=1)
        assert np.allclose(data[:, 1], summary["policies"][pol]["mean_cum_regret"], atol=1e-12, rtol=0)
        assert np.allclose(data[:, 2], summary["policies"][pol]["se_cum_regret"], atol=1e-12, rtol=0)


def test_plot_data_single_replication_and_filter(cfg_file, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--quiet", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert main(["plot-data", "--quiet", str(out / "trace.csv"), "--out", str(out), "--policy", "gp_ucb"]) == 0
    data = np.loadtxt(out / "curve_gp_ucb.csv", delimiter=",", skiprows=1)
    assert np.all(data[:, 2] == 0.0)
    assert main(["plot-data", "--quiet", str(out / "trace.csv"), "--policy", "csgp_ucb"]) == 1


def test_plot_data_schema_mismatch(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n")
    assert main(["plot-data", "--quiet", str(p)]) == 1


def test_validate_and_describe(capsys):
    assert main(["validate", "splines"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out
    assert main(["describe", "--set", "experiment.T=7"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["resolved_config"]["experiment"]["T"] == 7
