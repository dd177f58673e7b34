import csv
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from mimpc.cli import TIMING_COLUMNS, main
from mimpc.config import ExperimentConfig, build_problem, from_dict, load_config
from mimpc.errors import ConfigError


def strip_timing(path):
    rows = list(csv.reader(open(path)))
    keep = [i for i, name in enumerate(rows[0]) if name not in TIMING_COLUMNS]
    return [[r[i] for i in keep] for r in rows]


def test_defaults_are_the_benchmark():
    cfg = ExperimentConfig()
    assert cfg.controls.values == [[-1.0], [1.0]] and cfg.controls.weight == [[1.0]]
    assert cfg.cost.variant == "quadratic" and cfg.cost.Q == [[1.0, 0.0], [0.0, 1.0]]
    assert (cfg.grid.coarse_step, cfg.grid.horizon, cfg.grid.integration_step) == (0.15, 20, 0.005)
    assert (cfg.terminal.pi, cfg.terminal.rho) == (0.3, 1.001)
    e = cfg.experiment
    assert e.x0 == [0.5, 0.0] and e.steps == 120 and e.divisors == [1, 2, 5, 10, 30] and e.repeats == 5
    p = build_problem(cfg)
    np.testing.assert_array_equal(p.ctrl.cost_row, [1.0, 1.0])
    np.testing.assert_array_equal(p.variant.u_ref, [0.5, 0.5])


def test_yaml_roundtrip(tmp_path):
    cfg = load_config(None, ["grid.horizon=12", "experiment.divisors=[1, 3]", "terminal.pi=1e-1"])
    assert cfg.grid.horizon == 12 and cfg.experiment.divisors == [1, 3] and cfg.terminal.pi == 0.1
    again = load_config(cfg.dump(tmp_path / "c.yaml"))
    assert again == cfg


@pytest.mark.parametrize(
    "data, field",
    [
        ({"grid": {"horizn": 3}}, "grid.horizn"),
        ({"grid": {"horizon": "ten"}}, "grid.horizon"),
        ({"terminal": {"pi": -1.0}}, "terminal.pi"),
        ({"cost": {"variant": "cubic"}}, "cost.variant"),
        ({"cost": {"Q": [[1.0]]}}, "cost.Q"),
        ({"experiment": {"divisors": [1, 7]}}, "experiment.divisors"),
        ({"experiment": {"x0": [1.0]}}, "experiment.x0"),
        ({"experiment": {"mode": "hybrid"}}, "experiment.mode"),
        ({"model": {"name": "lorenz"}}, "model.name"),
        ({"model": {"params": {"nu": 1}}}, "model.params"),
        ({"controls": {"values": [[1.0]]}}, "controls"),
        ({"solver": {"armijo_shrink": 2.0}}, "solver"),
        ({"experiment": {"repeats": True}}, "experiment.repeats"),
    ],
)
def test_validation_names_the_field(data, field):
    with pytest.raises(ConfigError) as info:
        from_dict(data)
    assert info.value.field == field


def test_bad_yaml_file(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)
    assert main(["solve-ocp", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_solve_ocp_at_origin(tmp_path, capsys):
    assert main(["solve-ocp", "--x0", "0", "0", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "J_N = 0.0" in out


def test_closed_loop_relaxed_converges(tmp_path, capsys):
    assert main(["closed-loop", "--mode", "relaxed", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "relaxed.csv")))
    assert len(rows) == 121
    assert math.hypot(float(rows[-1]["x1"]), float(rows[-1]["x2"])) <= 1e-2
    assert yaml.safe_load((tmp_path / "config.yaml").read_text())["experiment"]["mode"] == "relaxed"


def test_exit_codes_and_partial_output(tmp_path):
    code = main(["closed-loop", "--x0", "2", "2", "--steps", "2", "--set", "terminal.pi=1e-12",
                 "--set", "grid.horizon=2", "--set", "solver.max_outer=3", "--out", str(tmp_path / "inf")])
    assert code == 3
    assert (tmp_path / "inf" / "relaxed.csv").exists()
    code = main(["closed-loop", "--x0", "30", "30", "--steps", "2", "--out", str(tmp_path / "ovf")])
    assert code == 4
    assert (tmp_path / "ovf" / "relaxed.csv").exists()
    assert main(["closed-loop", "--set", "grid.horizon=-1", "--out", str(tmp_path / "cfg")]) == 2


def test_config_roundtrip_reproduces_outputs(tmp_path):
    args = ["closed-loop", "--mode", "rounded", "--dt-divisor", "5", "--steps", "4", "--repeats", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    effective = tmp_path / "a" / "config.yaml"
    assert main(["closed-loop", "--config", str(effective), "--out", str(tmp_path / "b")]) == 0
    for name in ("rounded_sur_d5.csv", "rounded_sur_d5_fine.csv"):
        assert strip_timing(tmp_path / "a" / name) == strip_timing(tmp_path / "b" / name)


def test_report_emits_a_valid_script(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 0
    script = tmp_path / "plot_runs.py"
    compile(script.read_text(), str(script), "exec")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mimpc", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep" in res.stdout
