import json
import subprocess
import sys

import numpy as np
import pytest

from helpers import fig1
from riccati_liquidation import cli


def write_cfg(path, model, experiment=None):
    cfg = {"model": model}
    if experiment is not None:
        cfg["experiment"] = experiment
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture
def fig1_cfg(tmp_path):
    return write_cfg(tmp_path / "fig1.json", fig1().to_config())


def fig1_sweep(tmp_path, values, **extra):
    exp = {"name": "corr", "sweep": {"variable": "k", "values": values}, "x0": [1.0, 1.0], "y0": [0.0, 0.0]}
    exp.update(extra)
    return write_cfg(tmp_path / "sweep.json", fig1().to_config(), exp)


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])


class TestSolve:
    def test_writes_solution_and_summary(self, fig1_cfg, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["solve", "--config", fig1_cfg, "--n", "64", "--out", str(out)]) == 0
        meta = json.loads((out / "solution_n64.json").read_text())
        assert meta["n0"] == 7.0
        assert meta["T0"] == pytest.approx(1.0 - 1.0 / (5.5 * 6.5))
        header, rows = read_csv(out / "solution_n64.csv")
        assert header[0] == "t" and rows[-1, 0] == 1.0
        assert len(meta["sha256"]) == 64

    def test_twelve_significant_digits(self, fig1_cfg, tmp_path):
        cli.main(["solve", "--config", fig1_cfg, "--n", "64", "--out", str(tmp_path)])
        cell = (tmp_path / "solution_n64.csv").read_text().splitlines()[5].split(",")[1]
        mantissa = cell.lower().split("e")[0].replace("-", "").replace(".", "").lstrip("0")
        assert len(mantissa) <= 12

    def test_invalid_config_exit_2(self, tmp_path, capsys):
        model = fig1().to_config()
        model["gamma"] = [1.0, -1.0]
        cfg = write_cfg(tmp_path / "bad.json", model)
        assert cli.main(["solve", "--config", cfg, "--n", "64", "--out", str(tmp_path)]) == 2
        assert "gamma" in capsys.readouterr().err

    def test_unreadable_config_exit_2(self, tmp_path):
        (tmp_path / "x.json").write_text("{not json")
        assert cli.main(["solve", "--config", str(tmp_path / "x.json"), "--n", "64"]) == 2

    def test_n_below_n0_exit_2(self, fig1_cfg, tmp_path, capsys):
        assert cli.main(["solve", "--config", fig1_cfg, "--n", "7", "--out", str(tmp_path)]) == 2
        assert "n0" in capsys.readouterr().err

    def test_missing_n_exit_2(self, fig1_cfg):
        assert cli.main(["solve", "--config", fig1_cfg]) == 2


class TestSimulate:
    def test_penalized(self, fig1_cfg, tmp_path):
        assert cli.main(["simulate", "--config", fig1_cfg, "--n", "256", "--out", str(tmp_path)]) == 0
        meta = json.loads((tmp_path / "trajectory_n256.json").read_text())
        assert meta["cost"] == pytest.approx(meta["value"], rel=2e-3)
        header, _ = read_csv(tmp_path / "trajectory_n256.csv")
        assert header[-1] == "running_cost"

    def test_limit_is_tail_estimated(self, fig1_cfg, tmp_path):
        args = ["simulate", "--config", fig1_cfg, "--ladder", "64,128,256,512", "--delta", "0.1",
                "--out", str(tmp_path)]
        assert cli.main(args) == 0
        meta = json.loads((tmp_path / "trajectory_limit_delta0p1.json").read_text())
        assert meta["constrained_cost"]["label"] == "tail-estimated"
        assert meta["limit"] and meta["n_used"] <= 512
        _, rows = read_csv(tmp_path / "trajectory_limit_delta0p1.csv")
        assert rows[-1, 0] == pytest.approx(0.9)

    def test_bad_delta_exit_2(self, fig1_cfg, tmp_path):
        assert cli.main(["simulate", "--config", fig1_cfg, "--delta", "2", "--out", str(tmp_path)]) == 2


class TestSweep:
    def test_value_increases_with_correlation(self, tmp_path):
        cfg = fig1_sweep(tmp_path, [0.5, -0.5, 0.0], ladder=[64, 1024])
        assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
        header, rows = read_csv(tmp_path / "o" / "corr_summary.csv")
        assert header[:3] == ["k", "n", "V"]
        assert list(rows[:, 0]) == [-0.5, 0.0, 0.5]
        assert np.all(np.diff(rows[:, 2]) > 0)

    def test_single_value(self, tmp_path):
        cfg = fig1_sweep(tmp_path, [0.0], ladder=[64])
        assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        _, rows = read_csv(tmp_path / "o" / "corr_summary.csv")
        assert rows.shape[0] == 1

    def test_byte_identical_repeat(self, tmp_path):
        cfg = fig1_sweep(tmp_path, [-0.5, 0.5], ladder=[64])
        cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "a"), "--workers", "1"])
        cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "b"), "--workers", "2"])
        for name in ("corr_summary.csv", "corr_summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unknown_variable_exit_2(self, tmp_path):
        cfg = write_cfg(tmp_path / "s.json", fig1().to_config(), {"sweep": {"variable": "mu", "values": [1]}})
        assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_missing_experiment_exit_2(self, fig1_cfg, tmp_path):
        assert cli.main(["sweep", "--config", fig1_cfg, "--out", str(tmp_path)]) == 2

    def test_failing_value_reported(self, tmp_path):
        # k = 2 makes Sigma indefinite: that row fails, the others still run
        cfg = fig1_sweep(tmp_path, [0.0, 2.0], ladder=[64])
        assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "o"), "--workers", "1"]) == 1
        meta = json.loads((tmp_path / "o" / "corr_summary.json").read_text())
        assert [r["status"] == "ok" for r in meta["rows"]] == [True, False]


class TestFigures:
    def test_fig3_rate_increases_with_impact(self, tmp_path):
        assert cli.main(["figures", "--only", "fig3", "--out", str(tmp_path), "--workers", "1"]) == 0
        header, rows = read_csv(tmp_path / "fig3" / "fig3_summary.csv")
        assert header[3] == "xi0_1"
        assert np.all(np.diff(rows[:, 3]) > 0)

    def test_unknown_figure_exit_2(self, tmp_path):
        assert cli.main(["figures", "--only", "fig9", "--out", str(tmp_path)]) == 2


class TestVerify:
    def test_fig1_all_families_pass(self, fig1_cfg, tmp_path, capsys):
        assert cli.main(["verify", "--config", fig1_cfg, "--n", "64", "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "verify.json").read_text())
        names = {f["family"] for f in report["families"]}
        assert {"envelope", "weighted_F", "comparison", "liquidation", "boundedness"} <= names
        assert all(f["verdict"] == "pass" for f in report["families"])
        assert "envelope" in capsys.readouterr().out

    @pytest.mark.slow
    def test_strong_resilience(self, tmp_path):
        model = fig1().replace(rho=fig1().rho.map(lambda r: 10.0 * r)).to_config()
        cfg = write_cfg(tmp_path / "rho10.json", model)
        assert cli.main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0

    def test_corrupted_solution_exit_2(self, fig1_cfg, tmp_path):
        cli.main(["solve", "--config", fig1_cfg, "--n", "64", "--out", str(tmp_path)])
        path = tmp_path / "solution_n64.csv"
        lines = path.read_text().splitlines()
        lines[3] = lines[3].replace("1", "2", 1)
        path.write_text("\n".join(lines) + "\n")
        args = ["verify", "--config", fig1_cfg, "--n", "64", "--solution", str(path), "--out", str(tmp_path)]
        assert cli.main(args) == 2


def test_module_entry_point(tmp_path, fig1_cfg):
    proc = subprocess.run([sys.executable, "-m", "riccati_liquidation", "solve", "--config", fig1_cfg,
                           "--n", "32", "--steps", "200", "--out", str(tmp_path)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "solution_n32.csv").exists()


def test_help_lists_subcommands():
    proc = subprocess.run([sys.executable, "-m", "riccati_liquidation", "--help"], capture_output=True, text=True)
    for name in ("solve", "simulate", "sweep", "verify", "figures"):
        assert name in proc.stdout
