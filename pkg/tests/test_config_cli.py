import csv
import math
import subprocess
import sys
from pathlib import Path

import pytest

from fbm_stm.cli import main
from fbm_stm.config import RunConfig
from fbm_stm.errors import ConfigError

FIGURES = Path(__file__).resolve().parents[1] / "figures"

BASE = """\
[model]
kind = linear
lambda = 9
mu = 2
kappa = 2H
x0 = 3

[scheme]
theta = 0.8
dt = 0.5
n_steps = 64

[fbm]
hurst = 0.7

[ensemble]
n_paths = 300
master_seed = 5
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def parse_record(line):
    return dict(item.split("=", 1) for item in line.split() if "=" in item)


@pytest.fixture
def base_cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(BASE)
    return path


class TestConfig:
    def test_typed_values(self):
        cfg = RunConfig.parse_string(BASE)
        assert cfg.get("model", "kappa") == "2H"
        assert cfg.get("scheme", "n_steps") == 64
        assert cfg.get("fbm", "method") == "circulant"
        assert cfg.get("verdict", "drop_margin") == 2.0

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="model.colour"):
            RunConfig.parse_string(BASE.replace("x0 = 3", "x0 = 3\ncolour = red"))

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            RunConfig.parse_string(BASE + "\n[extra]\na = 1\n")

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="scheme.dt"):
            RunConfig.parse_string(BASE.replace("dt = 0.5", "dt = half"))

    def test_missing_required(self):
        cfg = RunConfig.parse_string(BASE.replace("hurst = 0.7", ""))
        with pytest.raises(ConfigError, match="fbm.hurst"):
            cfg.get("fbm", "hurst")

    def test_override(self):
        cfg = RunConfig.parse_string(BASE, ["scheme.theta=0.4", "fbm.method=cholesky"])
        assert cfg.get("scheme", "theta") == 0.4
        assert cfg.get("fbm", "method") == "cholesky"
        with pytest.raises(ConfigError):
            RunConfig.parse_string(BASE, ["theta=0.4"])

    @pytest.mark.parametrize("name", [f"fig{i}.cfg" for i in range(1, 7)])
    def test_round_trip(self, name):
        cfg = RunConfig.from_file(FIGURES / name)
        assert RunConfig.parse_string(cfg.dumps()) == cfg

    def test_round_trip_awkward_floats(self):
        cfg = RunConfig.parse_string(BASE, ["scheme.dt=0.1", "model.mu=0.30000000000000004"])
        again = RunConfig.parse_string(cfg.dumps())
        assert again == cfg
        assert again.get("model", "mu") == 0.30000000000000004

    def test_scan_cells_limit(self):
        cfg = RunConfig.parse_string(BASE + "\n[scan]\ntheta = " + ", ".join(["0.6"] * 40)
                                     + "\nhurst = " + ", ".join(["0.7"] * 30) + "\n")
        with pytest.raises(ConfigError, match="1024"):
            cfg.scan_cells()


class TestRunCommands:
    def test_dump_config_round_trip(self, capsys, base_cfg, tmp_path):
        code, out, _ = run(capsys, "simulate", base_cfg, "--dump-config", "--set", "scheme.theta=0.6")
        assert code == 0
        dumped = tmp_path / "dumped.cfg"
        dumped.write_text(out)
        assert RunConfig.from_file(dumped) == RunConfig.from_file(base_cfg, ["scheme.theta=0.6"])

    def test_missing_hurst_exit_2(self, capsys, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(BASE.replace("hurst = 0.7", ""))
        code, _, err = run(capsys, "sample-fbm", path, "--out", tmp_path)
        assert code == 2
        assert "fbm.hurst" in err

    def test_invalid_value_exit_2(self, capsys, base_cfg, tmp_path):
        code, _, err = run(capsys, "simulate", base_cfg, "--set", "scheme.theta=1.5", "--out", tmp_path)
        assert code == 2
        assert "scheme.theta" in err

    def test_missing_file_exit_2(self, capsys, tmp_path):
        code, _, _ = run(capsys, "simulate", tmp_path / "nope.cfg")
        assert code == 2

    def test_sample_fbm_brownian_lag(self, capsys, base_cfg, tmp_path):
        code, out, _ = run(capsys, "sample-fbm", base_cfg, "--set", "fbm.hurst=0.5",
                           "--set", "ensemble.n_paths=2000", "--out", tmp_path)
        assert code == 0
        rec = parse_record(out.strip())
        assert float(rec["reference_lag1_correlation"]) == 0.0
        assert abs(float(rec["lag1_correlation"])) < 4 * float(rec["lag1_se"])
        rows = list(csv.reader((tmp_path / "fbm_path.csv").open()))
        assert rows[0] == ["step", "t", "value"]
        assert len(rows) == 66

    def test_sample_fbm_deterministic(self, capsys, base_cfg, tmp_path):
        run(capsys, "sample-fbm", base_cfg, "--out", tmp_path / "a")
        run(capsys, "sample-fbm", base_cfg, "--out", tmp_path / "b", "--threads", "3")
        for name in ("fbm_increments.csv", "fbm_path.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_simulate_outputs(self, capsys, base_cfg, tmp_path):
        code, out, _ = run(capsys, "simulate", base_cfg, "--out", tmp_path)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("label=")
        assert parse_record(lines[1])["source"] == "Theorem1_i"
        for name in ("mean_square.csv", "exact_mean_square.csv", "plot.gp", "verdict.txt"):
            assert (tmp_path / name).exists()
        raw = (tmp_path / "mean_square.csv").read_bytes()
        assert b"\r" not in raw
        header = raw.decode().splitlines()[0]
        assert header == "step,t,log_mean_square,log_std_error,diverged_fraction"

    def test_scan_rows(self, capsys, base_cfg, tmp_path):
        extra = "\n[scan]\ntheta = 0.55, 0.6, 0.8\nkappa = 1.4, 2\n"
        path = tmp_path / "scan.cfg"
        path.write_text(BASE + extra)
        code, _, _ = run(capsys, "scan", path, "--out", tmp_path / "a")
        assert code == 0
        rows = list(csv.DictReader((tmp_path / "a" / "scan.csv").open()))
        assert len(rows) == 6
        by_cell = {(float(r["theta"]), float(r["kappa"])): r for r in rows}
        assert by_cell[(0.55, 1.4)]["theorem_source"] == "OpenRegion"
        assert by_cell[(0.55, 1.4)]["guaranteed"] == "NoGuarantee"
        for theta in (0.6, 0.8):
            assert by_cell[(theta, 2.0)]["guaranteed"] == "StableGuaranteed"
        assert by_cell[(0.6, 2.0)]["theorem_source"] == "Theorem1_ii"
        run(capsys, "scan", path, "--out", tmp_path / "b", "--threads", "2")
        assert (tmp_path / "a" / "scan.csv").read_bytes() == (tmp_path / "b" / "scan.csv").read_bytes()

    def test_nonlinear_simulate(self, capsys, tmp_path):
        code, out, _ = run(capsys, "simulate", FIGURES / "fig5.cfg", "--set", "ensemble.n_paths=50",
                           "--set", "scheme.n_steps=64", "--out", tmp_path)
        assert code == 0
        assert parse_record(out.splitlines()[1])["source"] == "Theorem2_i"
        assert not (tmp_path / "exact_mean_square.csv").exists()


class TestTheorySpecial:
    def test_remark_p(self, capsys):
        code, out, _ = run(capsys, "theory", "remark-p", "2")
        rec = parse_record(out)
        assert code == 0
        assert float(rec["m_p"]) == pytest.approx(1 / (3 * math.e), rel=1e-15)

    def test_remark_p_odd(self, capsys):
        code, _, _ = run(capsys, "theory", "remark-p", "3")
        assert code == 2

    def test_brownian(self, capsys):
        code, out, _ = run(capsys, "theory", "brownian", "--lambda", "3", "--mu2", "2", "--theta", "0")
        assert code == 0
        assert float(parse_record(out)["dt_star"]) == pytest.approx(4 / 9, abs=1e-12)

    def test_classify(self, capsys):
        code, out, _ = run(capsys, "theory", "classify", "--kappa", "2H", "--hurst", "0.7",
                           "--theta", "0.8", "--lambda", "9", "--mu", "2")
        assert code == 0
        lines = out.splitlines()
        assert parse_record(lines[0])["source"] == "Theorem1_i"
        assert lines[1] == "continuous_stable=true"

    def test_phi(self, capsys):
        code, out, _ = run(capsys, "special", "phi", "1", "1", "1")
        assert code == 0
        assert float(parse_record(out)["value"]) == pytest.approx(math.e, rel=1e-15)

    def test_phi_pole(self, capsys):
        code, _, _ = run(capsys, "special", "phi", "1", "-2", "1")
        assert code == 2

    def test_selftest(self, capsys):
        code, out, _ = run(capsys, "selftest")
        assert code == 0
        assert "FAIL" not in out

    def test_console_script_module(self):
        proc = subprocess.run([sys.executable, "-m", "fbm_stm", "special", "lgamma", "0.5"],
                              capture_output=True, text=True, check=True)
        assert float(proc.stdout.split("=")[1]) == pytest.approx(0.5 * math.log(math.pi), rel=1e-15)
