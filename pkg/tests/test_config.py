"""Configuration parsing, validation, defaults, and the resolved echo."""
import numpy as np
import pytest
import yaml

from koopmanhj.config import (
    ConfigError,
    build_system,
    load_config,
    write_resolved,
)


def dump_cfg(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return path


def minimal(**overrides):
    cfg = {
        "schema_version": 1,
        "system": {"kind": "example1"},
        "box": [[-1.0, 1.0], [-1.0, 1.0]],
    }
    cfg.update(overrides)
    return cfg


class TestDefaults:
    def test_minimal_config_fills_defaults(self, tmp_path):
        cfg = load_config(dump_cfg(tmp_path, minimal()))
        assert cfg.system_kind == "example1"
        assert cfg.system_params == {"control_weight": 1.0}
        np.testing.assert_array_equal(cfg.box, [[-1, 1], [-1, 1]])
        assert cfg.basis == {"deg_min": 2, "deg_max": 5, "d1": 5, "d2": 3, "d3": 0}
        assert (cfg.L, cfg.seed) == (10000, 0)
        assert (cfg.dt, cfg.T) == (1e-3, 20.0)
        assert cfg.procedure == 1
        assert cfg.eig_block == 0
        assert cfg.momentum_margin == 2.0
        assert cfg.points_per_dim == 50
        assert cfg.converge_L == [100, 1000, 10000]
        assert cfg.converge_trials == 20
        assert cfg.controllers == ["procedure1", "lqr"]
        assert cfg.ics is None and cfg.cloud is None
        assert cfg.out == "out"

    def test_pendulum_defaults(self, tmp_path):
        cfg = load_config(
            dump_cfg(tmp_path, minimal(
                system={"kind": "pendulum"},
                box=[[-3, 3], [-5, 5], [-5, 5]],
            ))
        )
        assert cfg.system_params == {"g_gravity": 9.81}
        assert cfg.points_per_dim == 5  # three-dimensional grid default
        assert build_system(cfg).n == 3

    def test_cloud_defaults_are_plain_floats(self, tmp_path):
        cfg = load_config(
            dump_cfg(tmp_path, minimal(
                system={"kind": "pendulum"},
                box=[[-3, 3], [-5, 5], [-5, 5]],
                simulate={"pendulum_cloud": {}},
            ))
        )
        assert cfg.cloud == {
            "center": [0.7, -4.2, 6.2], "count": 10, "seed": 2024, "rel_width": 0.1,
        }
        assert all(type(v) is float for v in cfg.cloud["center"])
        # the echo must serialize with the safe dumper
        write_resolved(cfg, tmp_path / "echo")

    def test_overrides(self, tmp_path):
        path = dump_cfg(tmp_path, minimal(samples={"L": 50, "seed": 3}, out="abc"))
        cfg = load_config(path, seed_override=11, out_override="xyz")
        assert cfg.L == 50
        assert cfg.seed == 11
        assert cfg.out == "xyz"


class TestPolynomialSystems:
    def test_cubic_parses_and_builds(self, tmp_path):
        cfg = load_config(dump_cfg(tmp_path, minimal(
            system={
                "kind": "polynomial",
                "f_terms": [[[-1.0, [1]], [1.0, [3]]]],
                "g_matrix": [[1.0]],
                "D": [[1.0]],
                "Q0": [[1.0]],
            },
            box=[[-0.5, 0.5]],
        )))
        sys_ = build_system(cfg)
        assert sys_.n == 1 and sys_.p == 1
        assert sys_.f(np.array([0.5]))[0] == pytest.approx(-0.5 + 0.125)

    @pytest.mark.parametrize("mutate, msg", [
        (lambda s: s.pop("f_terms"), "f_terms"),
        (lambda s: s.update(f_terms=[[[1.0, [1, 0]]]]), "f_terms"),
        (lambda s: s.update(g_matrix=[[1.0], [2.0]]), "g_matrix"),
        (lambda s: s.update(Q0=[[1.0, 0.0]]), "Q0"),
    ])
    def test_polynomial_validation(self, tmp_path, mutate, msg):
        system = {
            "kind": "polynomial",
            "f_terms": [[[-1.0, [1]]]],
            "g_matrix": [[1.0]],
            "D": [[1.0]],
            "Q0": [[1.0]],
        }
        mutate(system)
        with pytest.raises(ConfigError, match=msg):
            load_config(dump_cfg(tmp_path, minimal(system=system, box=[[-1, 1]])))


class TestValidation:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("system: [unclosed\n")
        with pytest.raises(ConfigError, match="not valid YAML"):
            load_config(path)

    @pytest.mark.parametrize("mutate, msg", [
        (lambda c: c.update(schema_version=2), "schema_version"),
        (lambda c: c.pop("schema_version"), "schema_version"),
        (lambda c: c.update(system={"kind": "rocket"}), "system.kind"),
        (lambda c: c.update(system={"kind": "example1", "mass": 1}), "unknown key"),
        (lambda c: c.update(system={"kind": "example1", "control_weight": -1.0}),
         "control_weight"),
        (lambda c: c.update(typo=1), "unknown key"),
        (lambda c: c.update(box=[[-1, 1]]), "box"),
        (lambda c: c.update(box=[[1, -1], [-1, 1]]), "lo < hi"),
        (lambda c: c.update(basis={"deg_min": 1}), "deg_min"),
        (lambda c: c.update(basis={"deg_min": 4, "deg_max": 3}), "deg_min"),
        (lambda c: c.update(basis={"d1": 1}), "d1"),
        (lambda c: c.update(basis={"d2": 0}), "d2"),
        (lambda c: c.update(basis={"d3": 1}), "d3"),
        (lambda c: c.update(basis={"span": 3}), "unknown key"),
        (lambda c: c.update(samples={"L": 0}), "L"),
        (lambda c: c.update(samples={"L": True}), "must be int"),
        (lambda c: c.update(integrator={"dt": 0.0}), "dt"),
        (lambda c: c.update(integrator={"dt": 0.5, "T": 0.1}), "T"),
        (lambda c: c.update(procedure=3), "procedure"),
        (lambda c: c.update(eig_block=-1), "eig_block"),
        (lambda c: c.update(momentum_margin=0), "momentum_margin"),
        (lambda c: c.update(grid_points_per_dim=1), "grid_points_per_dim"),
        (lambda c: c.update(converge={"L_list": [100]}), "L_list"),
        (lambda c: c.update(converge={"L_list": [100, 0]}), "L_list"),
        (lambda c: c.update(converge={"trials": 0}), "trials"),
        (lambda c: c.update(simulate={"controllers": []}), "controllers"),
        (lambda c: c.update(simulate={"controllers": ["pid"]}), "unknown controller"),
        (lambda c: c.update(simulate={"controllers": [{"name": "k"}]}), "gain"),
        (lambda c: c.update(simulate={"controllers": [{"name": "k", "gain": [[1.0]]}]}),
         "columns"),
        (lambda c: c.update(simulate={"ics": [[0.1]]}), "ics"),
        (lambda c: c.update(simulate={"pendulum_cloud": {"center": [1.0]}}), "center"),
        (lambda c: c.update(simulate={"pendulum_cloud": {
            "center": [0.5, 0.5], "count": 0}}), "count"),
        (lambda c: c.update(out=""), "out"),
    ])
    def test_rejections(self, tmp_path, mutate, msg):
        cfg = minimal()
        mutate(cfg)
        with pytest.raises(ConfigError, match=msg):
            load_config(dump_cfg(tmp_path, cfg))


class TestResolvedEcho:
    def test_echo_reloads_to_the_same_configuration(self, tmp_path):
        original = minimal(
            basis={"deg_min": 2, "deg_max": 4},
            samples={"L": 123, "seed": 9},
            simulate={
                "controllers": ["lqr", {"name": "static", "gain": [[0.5, 0.25]]}],
                "ics": [[0.1, 0.2], [0.3, -0.4]],
            },
            out=str(tmp_path / "run1"),
        )
        cfg = load_config(dump_cfg(tmp_path, original))
        echo_path = write_resolved(cfg, cfg.out)
        assert echo_path.name == "resolved_config.yaml"
        cfg2 = load_config(echo_path)
        echo2 = write_resolved(cfg2, tmp_path / "run2")
        assert echo_path.read_text() != ""
        a = yaml.safe_load(echo_path.read_text())
        b = yaml.safe_load(echo2.read_text())
        assert a == b
        np.testing.assert_array_equal(cfg.ics, cfg2.ics)
        assert cfg.controllers == cfg2.controllers
        assert cfg.basis == cfg2.basis

    def test_polynomial_echo_round_trip(self, tmp_path):
        original = minimal(
            system={
                "kind": "polynomial",
                "f_terms": [[[-1.0, [1]], [1.0, [3]]]],
                "g_matrix": [[1.0]],
                "D": [[1.0]],
                "Q0": [[1.0]],
            },
            box=[[-0.5, 0.5]],
        )
        cfg = load_config(dump_cfg(tmp_path, original))
        echo = write_resolved(cfg, tmp_path / "echo")
        cfg2 = load_config(echo)
        assert cfg2.system_params["f_terms"] == cfg.system_params["f_terms"]
        np.testing.assert_array_equal(
            cfg2.system_params["g_matrix"], cfg.system_params["g_matrix"]
        )
