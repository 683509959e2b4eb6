"""End-to-end command-line tests: exit codes, output files, determinism.

Most cases drive ``main()`` in-process for speed; two subprocess cases
confirm the installed entry points.  Exit code contract: 0 success,
1 configuration/usage error, 2 numerical failure.
"""
import csv
import subprocess
import sys

import numpy as np
import pytest
import yaml

from koopmanhj.cli import main


def dump_cfg(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return str(path)


def example1_cfg(out, **overrides):
    cfg = {
        "schema_version": 1,
        "system": {"kind": "example1"},
        "box": [[-1.0, 1.0], [-1.0, 1.0]],
        "basis": {"deg_min": 2, "deg_max": 3},
        "samples": {"L": 500, "seed": 0},
        "out": str(out),
    }
    cfg.update(overrides)
    return cfg


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestEigfun:
    def test_outputs_and_determinism(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cfg1 = dump_cfg(tmp_path, example1_cfg(out1), "c1.yaml")
        cfg2 = dump_cfg(tmp_path, example1_cfg(out2), "c2.yaml")
        assert main(["eigfun", "--config", cfg1]) == 0
        assert main(["eigfun", "--config", cfg2]) == 0
        for name in ("eigenfunctions.csv", "report.txt", "resolved_config.yaml"):
            assert (out1 / name).is_file()
        assert (out1 / "eigenfunctions.csv").read_bytes() == (
            out2 / "eigenfunctions.csv"
        ).read_bytes()
        assert (out1 / "report.txt").read_bytes() == (out2 / "report.txt").read_bytes()
        rows = read_csv(out1 / "eigenfunctions.csv")
        assert len(rows) == 2
        assert list(rows[0])[:4] == [
            "func_index", "block_index", "lambda_real", "lambda_imag",
        ]
        assert [float(r["lambda_real"]) for r in rows] == [-1.0, 2.0]
        # first eigenfunction of this system is exactly linear
        assert all(abs(float(rows[0][f"theta_{j}"])) < 1e-10 for j in range(1, 8))
        assert float(rows[0]["w_1"]) == pytest.approx(1.0)
        assert float(rows[0]["w_2"]) == pytest.approx(-2.0)

    def test_linear_polynomial_system_has_no_nonlinear_coefficients(self, tmp_path):
        out = tmp_path / "lin"
        cfg = dump_cfg(tmp_path, {
            "schema_version": 1,
            "system": {
                "kind": "polynomial",
                "f_terms": [[[-1.0, [1, 0]]], [[-2.5, [0, 1]]]],
                "g_matrix": [[1.0], [0.0]],
                "D": [[1.0]],
                "Q0": [[1.0, 0.0], [0.0, 1.0]],
            },
            "box": [[-1.0, 1.0], [-1.0, 1.0]],
            "basis": {"deg_min": 2, "deg_max": 3},
            "samples": {"L": 400, "seed": 1},
            "out": str(out),
        })
        assert main(["eigfun", "--config", cfg]) == 0
        rows = read_csv(out / "eigenfunctions.csv")
        assert [float(r["lambda_real"]) for r in rows] == [-2.5, -1.0]
        for r in rows:
            assert all(abs(float(r[f"theta_{j}"])) < 1e-9 for j in range(1, 8))

    def test_seed_override_lands_in_echo(self, tmp_path):
        out = tmp_path / "seeded"
        cfg = dump_cfg(tmp_path, example1_cfg(out))
        assert main(["eigfun", "--config", cfg, "--seed", "7"]) == 0
        resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
        assert resolved["samples"]["seed"] == 7

    def test_out_override(self, tmp_path):
        cfg = dump_cfg(tmp_path, example1_cfg(tmp_path / "orig"))
        target = tmp_path / "moved"
        assert main(["eigfun", "--config", cfg, "--out", str(target)]) == 0
        assert (target / "eigenfunctions.csv").is_file()
        assert not (tmp_path / "orig").exists()


class TestSolve:
    def test_procedure1_grid_outputs(self, tmp_path):
        out = tmp_path / "p1"
        cfg = dump_cfg(tmp_path, example1_cfg(
            out, samples={"L": 1000, "seed": 0}, grid_points_per_dim=5,
        ))
        assert main(["solve", "--config", cfg]) == 0
        grid = read_csv(out / "value_grid.csv")
        res = read_csv(out / "hj_residual.csv")
        assert len(grid) == 25 and len(res) == 25
        assert list(grid[0]) == ["x1", "x2", "value", "u1"]
        assert list(res[0]) == ["x1", "x2", "residual"]
        report = (out / "report.txt").read_text()
        assert "max |stationary residual|" in report
        # value is nonnegative on the grid, zero only near the origin
        vals = np.array([float(r["value"]) for r in grid])
        assert np.all(vals >= -1e-12)

    def test_procedure2_without_value_basis(self, tmp_path):
        out = tmp_path / "p2"
        cfg = dump_cfg(tmp_path, example1_cfg(
            out,
            procedure=2,
            basis={"d1": 4, "d2": 3},
            samples={"L": 1500, "seed": 0},
            box=[[-0.4, 0.4], [-0.4, 0.4]],
            momentum_margin=1.0,
            grid_points_per_dim=5,
        ))
        assert main(["solve", "--config", cfg]) == 0
        report = (out / "report.txt").read_text()
        assert "no value basis configured" in report
        grid = read_csv(out / "value_grid.csv")
        # surrogate value is the quadratic form of the linear coefficient
        resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
        assert resolved["procedure"] == 2
        assert len(grid) == 25

    def test_grid_size_guard(self, tmp_path, capsys):
        out = tmp_path / "big"
        cfg = dump_cfg(tmp_path, example1_cfg(
            out, samples={"L": 300, "seed": 0}, grid_points_per_dim=1200,
        ))
        code = main(["solve", "--config", cfg])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("configuration error:")
        assert "grid" in err


class TestSimulate:
    def test_rollout_outputs(self, tmp_path):
        out = tmp_path / "sim"
        cfg = dump_cfg(tmp_path, example1_cfg(
            out,
            samples={"L": 500, "seed": 0},
            integrator={"dt": 0.01, "T": 2.0},
            simulate={
                "controllers": [
                    "procedure1",
                    {"name": "static", "gain": [[1.0, 0.5]]},
                ],
                "ics": [[0.2, 0.1]],
            },
        ))
        assert main(["simulate", "--config", cfg]) == 0
        rows = read_csv(out / "comparison.csv")
        assert [(r["controller"], r["ic_index"]) for r in rows] == [
            ("procedure1", "0"), ("static", "0"),
        ]
        for name in ("traj_procedure1_ic0.csv", "traj_static_ic0.csv"):
            assert (out / name).is_file()
        traj = read_csv(out / "traj_procedure1_ic0.csv")
        assert list(traj[0]) == ["t", "x1", "x2", "u1", "cumulative_cost"]
        assert len(traj) == 201
        assert float(traj[0]["cumulative_cost"]) == 0.0

    def test_missing_initial_conditions(self, tmp_path, capsys):
        out = tmp_path / "noic"
        cfg = dump_cfg(tmp_path, example1_cfg(
            out, simulate={"controllers": ["lqr"]},
        ))
        assert main(["simulate", "--config", cfg]) == 1
        assert "initial conditions" in capsys.readouterr().err


class TestConverge:
    def test_study_outputs(self, tmp_path):
        out = tmp_path / "conv"
        cfg = dump_cfg(tmp_path, example1_cfg(
            out,
            basis={"deg_min": 2, "deg_max": 2},
            eig_block=1,
            converge={"L_list": [50, 100], "trials": 2},
        ))
        assert main(["converge", "--config", cfg]) == 0
        rows = read_csv(out / "convergence.csv")
        assert list(rows[0]) == ["L", "trial", "error"]
        assert len(rows) == 4
        assert [r["L"] for r in rows] == ["50", "50", "100", "100"]
        assert all(float(r["error"]) > 0 for r in rows)
        assert "log-log slope" in (out / "report.txt").read_text()


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["eigfun", "--config", str(tmp_path / "none.yaml")]) == 1
        assert capsys.readouterr().err.startswith("configuration error:")

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = dump_cfg(tmp_path, example1_cfg(tmp_path / "o", rocket=1))
        assert main(["eigfun", "--config", cfg]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_bad_subcommand(self, capsys):
        assert main(["transmogrify", "--config", "x.yaml"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_required_flag(self, capsys):
        assert main(["eigfun"]) == 1
        capsys.readouterr()

    def test_numerical_failure_is_exit_2(self, tmp_path, capsys):
        """A system with no control authority makes the momentum block of
        the unstable eigenfunctions singular; that is a numerical failure,
        not a configuration error."""
        out = tmp_path / "fail"
        cfg = dump_cfg(tmp_path, {
            "schema_version": 1,
            "system": {
                "kind": "polynomial",
                "f_terms": [[[1.0, [1]]]],
                "g_matrix": [[0.0]],
                "D": [[1.0]],
                "Q0": [[1.0]],
            },
            "box": [[-1.0, 1.0]],
            "basis": {"d1": 2, "d2": 2},
            "samples": {"L": 300, "seed": 0},
            "procedure": 2,
            "out": str(out),
        })
        assert main(["solve", "--config", cfg]) == 2
        err = capsys.readouterr().err
        assert err.startswith("numerical failure:")
        assert "complementarity" in err


class TestEntryPoints:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "koopmanhj", "eigfun",
             "--config", str(tmp_path / "missing.yaml")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1
        assert "configuration error" in proc.stderr

    def test_console_script(self):
        proc = subprocess.run(
            ["koopman-hj", "transmogrify"], capture_output=True, text=True,
        )
        assert proc.returncode == 1
        assert "usage" in proc.stderr.lower()
