import csv
import subprocess
import sys
from pathlib import Path

import pytest

from dpgibo.cli import main
from dpgibo.harness import ConfigError, dim_scaling_study, dump_config, parse_config, preset, run_experiment

TINY = """
[experiment]
name = tiny
seeds = 3
output = {out}

[problem]
kind = normal_location
n = 10
d = 2

[method:dpgibo]
algorithm = dpgibo
T = 1
eta = 0.1
mu = 1.0
kernel = poly2
b_max = 3
epsilon = 1e-8
sigma = 0
"""


def _csv_files(root: Path) -> list[Path]:
    return sorted(root.rglob("*.csv"))


def test_one_method_one_seed_one_iteration_writes_two_csvs(tmp_path):
    cfg = parse_config(TINY.format(out=tmp_path))
    results, out = run_experiment(cfg)
    assert [r.status for r in results] == ["ok"]
    files = _csv_files(out)
    assert [f.name for f in files] == ["seed_3.csv", "summary.csv"]
    # minimal independent parse of the run trace
    with open(out / "dpgibo" / "seed_3.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["t", "theta_0", "theta_1"]
    assert [r[0] for r in rows[1:]] == ["0", "1"]


def test_rerun_is_byte_identical(tmp_path):
    a = run_experiment(parse_config(TINY.format(out=tmp_path / "a")))[1]
    b = run_experiment(parse_config(TINY.format(out=tmp_path / "b")))[1]
    fa, fb = _csv_files(a), _csv_files(b)
    assert [f.relative_to(a) for f in fa] == [f.relative_to(b) for f in fb]
    for x, y in zip(fa, fb):
        assert x.read_bytes() == y.read_bytes()


def test_config_round_trip():
    for name in ("normal_location", "huber_vs_dpgd", "noisy_sigma_misspec", "dim_scaling"):
        cfg = preset(name)
        assert parse_config(dump_config(cfg)) == cfg


def test_preset_contents():
    nl = preset("normal_location")
    assert nl.problem["n"] == "50"
    for m in ("mu2", "mu0.5"):
        o = nl.methods[m]
        assert (o["clip_B"], o["b_max"], o["T"], o["kernel"]) == ("1.0", "3", "150", "poly2")
    assert {nl.methods[m]["mu"] for m in nl.methods} == {"0.0", "2.0", "0.5"}
    hub = preset("huber_vs_dpgd")
    assert hub.problem["n"] == "100"
    g = hub.methods["dpgibo"]
    assert (g["clip_B"], g["T"], g["mu"], g["kernel"], g["b_max"]) == ("1.0", "100", "1.0", "rbf", "2")


def test_unknown_preset_lists_valid_names():
    with pytest.raises(KeyError, match="normal_location"):
        preset("nope")


@pytest.mark.parametrize("text", [
    "[experiment]\nname=x\n",
    TINY.replace("kind = normal_location", "kind = mystery"),
    TINY.replace("algorithm = dpgibo", "algorithm = sgd"),
    TINY.replace("seeds = 3", "seeds = a"),
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text.format(out="x") if "{out}" in text else text)


def test_single_dimension_study(tmp_path):
    text = TINY.format(out=tmp_path) + "\n[method:rs]\nalgorithm = random_search\nbudget_evals = match:dpgibo\n"
    cfg = parse_config(text)
    results, out = dim_scaling_study(cfg, dims=[2])
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    gaps = [r for r in rows if r["seed"] == "gap"]
    assert len(gaps) == 1 and gaps[0]["dim"] == "2"


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.ini"
    good.write_text(TINY.format(out=tmp_path / "out"))
    assert main(["run", str(good)]) == 0
    assert main(["preset", "does_not_exist"]) == 2
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    broken = tmp_path / "broken.ini"
    broken.write_text(TINY.format(out=tmp_path / "out2").replace("kind = normal_location", "kind = gp_tuning\nn_total = 2"))
    assert main(["run", str(broken)]) == 1
    assert main(["--seed", "5", "run", str(good), "--out", str(tmp_path / "o3")]) == 0
    assert (tmp_path / "o3" / "tiny" / "dpgibo" / "seed_5.csv").exists()


def test_module_entry_point(tmp_path):
    good = tmp_path / "good.ini"
    good.write_text(TINY.format(out=tmp_path / "out"))
    proc = subprocess.run([sys.executable, "-m", "dpgibo", "run", str(good)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "summary.csv" in proc.stdout
