"""Run configuration: one versioned YAML file determines an entire run.

The schema is strict — unknown keys and malformed values are rejected
before any computation — and every omitted field is materialized with its
default so the output directory's ``resolved_config.yaml`` is a complete,
re-runnable record of the experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml

from .systems import (
    ControlAffineSystem,
    builtin_example1,
    builtin_pendulum,
    polynomial_system,
)

__all__ = ["ConfigError", "RunConfig", "load_config", "build_system", "write_resolved"]

SCHEMA_VERSION = 1

_DEFAULT_CONVERGE_L = [100, 1000, 10000]


class ConfigError(Exception):
    """Invalid or inconsistent run configuration (exit code 1)."""


@dataclass
class RunConfig:
    """Fully materialized run configuration (all defaults filled in)."""

    schema_version: int
    system_kind: str
    system_params: Dict[str, Any]
    box: np.ndarray  # (n, 2)
    basis: Dict[str, int]  # deg_min, deg_max, d1, d2, d3
    L: int
    seed: int
    dt: float
    T: float
    procedure: int
    eig_block: int
    momentum_margin: float
    points_per_dim: int
    converge_L: List[int]
    converge_trials: int
    controllers: List[Union[str, Dict[str, Any]]]
    ics: Optional[np.ndarray]
    cloud: Optional[Dict[str, Any]]
    out: str


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _as_mapping(obj: Any, name: str) -> Dict[str, Any]:
    _require(isinstance(obj, dict), f"'{name}' must be a mapping")
    return obj


def _take(section: Dict[str, Any], name: str, key: str, default: Any,
          kind: type, allow_none: bool = False) -> Any:
    val = section.pop(key, default)
    if val is None and allow_none:
        return None
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    _require(
        isinstance(val, kind) and not isinstance(val, bool) or kind is bool,
        f"'{name}.{key}' must be {kind.__name__}, got {type(val).__name__}",
    )
    return val


def _no_extras(section: Dict[str, Any], name: str) -> None:
    _require(not section, f"unknown key(s) in '{name}': {sorted(section)}")


def _parse_matrix(obj: Any, name: str) -> np.ndarray:
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{name}' is not a numeric array: {exc}") from None
    _require(arr.ndim == 2, f"'{name}' must be a matrix (list of rows)")
    return arr


_SYSTEM_KINDS = ("example1", "pendulum", "polynomial")
_CONTROLLER_NAMES = ("procedure1", "procedure2", "lqr")


def load_config(
    path: Union[str, Path],
    seed_override: Optional[int] = None,
    out_override: Optional[str] = None,
) -> RunConfig:
    """Parse and validate a YAML run configuration.

    ``seed_override``/``out_override`` implement the corresponding
    command-line flags.  All validation happens here; commands may assume
    a well-formed configuration afterwards.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    raw = _as_mapping(raw, "config")

    version = raw.pop("schema_version", None)
    _require(version == SCHEMA_VERSION,
             f"'schema_version' must be {SCHEMA_VERSION}, got {version!r}")

    # --- system ---
    sys_sec = _as_mapping(raw.pop("system", None), "system")
    kind = sys_sec.pop("kind", None)
    _require(kind in _SYSTEM_KINDS,
             f"'system.kind' must be one of {_SYSTEM_KINDS}, got {kind!r}")
    params: Dict[str, Any] = {}
    if kind == "example1":
        params["control_weight"] = _take(sys_sec, "system", "control_weight", 1.0, float)
        _require(params["control_weight"] > 0, "'system.control_weight' must be positive")
        n = 2
    elif kind == "pendulum":
        params["g_gravity"] = _take(sys_sec, "system", "g_gravity", 9.81, float)
        n = 3
    else:  # polynomial
        f_terms = sys_sec.pop("f_terms", None)
        _require(isinstance(f_terms, list) and f_terms,
                 "'system.f_terms' must be a non-empty list (one list per coordinate)")
        n = len(f_terms)
        terms: List[List[Any]] = []
        for i, row in enumerate(f_terms):
            _require(isinstance(row, list),
                     f"'system.f_terms[{i}]' must be a list of [coeff, exponents] pairs")
            coord = []
            for t in row:
                _require(
                    isinstance(t, list) and len(t) == 2 and isinstance(t[1], list)
                    and len(t[1]) == n,
                    f"'system.f_terms[{i}]' entries must be [coeff, [e1..e{n}]]",
                )
                coord.append((float(t[0]), tuple(int(e) for e in t[1])))
            terms.append(coord)
        g_matrix = _parse_matrix(sys_sec.pop("g_matrix", None), "system.g_matrix")
        _require(g_matrix.shape[0] == n,
                 f"'system.g_matrix' must have {n} rows, got {g_matrix.shape[0]}")
        D = _parse_matrix(sys_sec.pop("D", None), "system.D")
        Q0 = _parse_matrix(sys_sec.pop("Q0", None), "system.Q0")
        _require(Q0.shape == (n, n), f"'system.Q0' must be {n}x{n}")
        params.update(f_terms=terms, g_matrix=g_matrix, D=D, Q0=Q0)
    _no_extras(sys_sec, "system")

    # --- box ---
    box = _parse_matrix(raw.pop("box", None), "box")
    _require(box.shape == (n, 2), f"'box' must be {n} rows of [lo, hi]")
    _require(bool(np.all(box[:, 0] < box[:, 1])), "'box' rows must satisfy lo < hi")

    # --- basis ---
    basis_sec = _as_mapping(raw.pop("basis", {}) or {}, "basis")
    basis = {
        "deg_min": _take(basis_sec, "basis", "deg_min", 2, int),
        "deg_max": _take(basis_sec, "basis", "deg_max", 5, int),
        "d1": _take(basis_sec, "basis", "d1", 5, int),
        "d2": _take(basis_sec, "basis", "d2", 3, int),
        "d3": _take(basis_sec, "basis", "d3", 0, int),
    }
    _no_extras(basis_sec, "basis")
    _require(2 <= basis["deg_min"] <= basis["deg_max"],
             "'basis' degrees must satisfy 2 <= deg_min <= deg_max")
    _require(basis["d1"] >= 2, "'basis.d1' must be at least 2")
    _require(basis["d2"] >= 1, "'basis.d2' must be at least 1")
    _require(basis["d3"] == 0 or basis["d3"] >= 2,
             "'basis.d3' must be 0 (no value fit) or at least 2")

    # --- samples ---
    samp_sec = _as_mapping(raw.pop("samples", {}) or {}, "samples")
    L = _take(samp_sec, "samples", "L", 10000, int)
    seed = _take(samp_sec, "samples", "seed", 0, int)
    _no_extras(samp_sec, "samples")
    _require(L >= 1, "'samples.L' must be positive")
    if seed_override is not None:
        seed = int(seed_override)

    # --- integrator ---
    integ_sec = _as_mapping(raw.pop("integrator", {}) or {}, "integrator")
    dt = _take(integ_sec, "integrator", "dt", 1e-3, float)
    T = _take(integ_sec, "integrator", "T", 20.0, float)
    _no_extras(integ_sec, "integrator")
    _require(dt > 0, "'integrator.dt' must be positive")
    _require(T >= dt, "'integrator.T' must be at least dt")

    # --- scalars ---
    procedure = raw.pop("procedure", 1)
    _require(procedure in (1, 2), f"'procedure' must be 1 or 2, got {procedure!r}")
    eig_block = raw.pop("eig_block", 0)
    _require(isinstance(eig_block, int) and eig_block >= 0,
             "'eig_block' must be a non-negative integer")
    momentum_margin = raw.pop("momentum_margin", 2.0)
    _require(isinstance(momentum_margin, (int, float)) and momentum_margin > 0,
             "'momentum_margin' must be positive")
    points_per_dim = raw.pop("grid_points_per_dim", 50 if n <= 2 else 5)
    _require(isinstance(points_per_dim, int) and points_per_dim >= 2,
             "'grid_points_per_dim' must be an integer >= 2")

    # --- converge ---
    conv_sec = _as_mapping(raw.pop("converge", {}) or {}, "converge")
    L_list = conv_sec.pop("L_list", list(_DEFAULT_CONVERGE_L))
    _require(
        isinstance(L_list, list) and len(L_list) >= 2
        and all(isinstance(v, int) and v >= 1 for v in L_list),
        "'converge.L_list' must be a list of at least two positive integers",
    )
    trials = _take(conv_sec, "converge", "trials", 20, int)
    _no_extras(conv_sec, "converge")
    _require(trials >= 1, "'converge.trials' must be positive")

    # --- simulate ---
    sim_sec = _as_mapping(raw.pop("simulate", {}) or {}, "simulate")
    controllers = sim_sec.pop("controllers", ["procedure1", "lqr"])
    _require(isinstance(controllers, list) and controllers,
             "'simulate.controllers' must be a non-empty list")
    for c in controllers:
        if isinstance(c, str):
            _require(c in _CONTROLLER_NAMES,
                     f"unknown controller {c!r}; use one of {_CONTROLLER_NAMES} "
                     f"or a {{name, gain}} mapping")
        else:
            c = _as_mapping(c, "simulate.controllers[]")
            _require("name" in c and "gain" in c,
                     "custom controller needs 'name' and 'gain' (p x n matrix)")
            gain = _parse_matrix(c["gain"], "simulate.controllers[].gain")
            _require(gain.shape[1] == n,
                     f"controller gain must have {n} columns")
    ics_raw = sim_sec.pop("ics", None)
    ics: Optional[np.ndarray] = None
    if ics_raw is not None:
        ics = _parse_matrix(ics_raw, "simulate.ics")
        _require(ics.shape[1] == n, f"'simulate.ics' rows must have {n} entries")
    cloud_raw = sim_sec.pop("pendulum_cloud", None)
    cloud: Optional[Dict[str, Any]] = None
    if cloud_raw is not None:
        cloud_sec = _as_mapping(cloud_raw, "simulate.pendulum_cloud")
        cloud = {
            "center": [
                float(v)
                for v in np.asarray(
                    cloud_sec.pop("center", [0.7, -4.2, 6.2]), dtype=float
                ).ravel()
            ],
            "count": _take(cloud_sec, "simulate.pendulum_cloud", "count", 10, int),
            "seed": _take(cloud_sec, "simulate.pendulum_cloud", "seed", 2024, int),
            "rel_width": _take(
                cloud_sec, "simulate.pendulum_cloud", "rel_width", 0.1, float
            ),
        }
        _no_extras(cloud_sec, "simulate.pendulum_cloud")
        _require(len(cloud["center"]) == n,
                 f"'simulate.pendulum_cloud.center' must have {n} entries")
        _require(cloud["count"] >= 1, "'simulate.pendulum_cloud.count' must be positive")
    _no_extras(sim_sec, "simulate")

    out = raw.pop("out", "out")
    _require(isinstance(out, str) and out, "'out' must be a non-empty path string")
    if out_override is not None:
        out = out_override
    _no_extras(raw, "config")

    return RunConfig(
        schema_version=SCHEMA_VERSION,
        system_kind=kind,
        system_params=params,
        box=box,
        basis=basis,
        L=L,
        seed=seed,
        dt=dt,
        T=T,
        procedure=procedure,
        eig_block=eig_block,
        momentum_margin=float(momentum_margin),
        points_per_dim=points_per_dim,
        converge_L=list(L_list),
        converge_trials=trials,
        controllers=controllers,
        ics=ics,
        cloud=cloud,
        out=out,
    )


def build_system(cfg: RunConfig) -> ControlAffineSystem:
    """Instantiate the configured system."""
    if cfg.system_kind == "example1":
        return builtin_example1(control_weight=cfg.system_params["control_weight"])
    if cfg.system_kind == "pendulum":
        return builtin_pendulum(g_gravity=cfg.system_params["g_gravity"])
    p = cfg.system_params
    return polynomial_system(p["f_terms"], p["g_matrix"], p["D"], p["Q0"])


def _resolved_dict(cfg: RunConfig) -> Dict[str, Any]:
    system: Dict[str, Any] = {"kind": cfg.system_kind}
    for k, v in cfg.system_params.items():
        if isinstance(v, np.ndarray):
            system[k] = v.tolist()
        elif k == "f_terms":
            system[k] = [[[c, list(e)] for c, e in row] for row in v]
        else:
            system[k] = v
    simulate: Dict[str, Any] = {"controllers": cfg.controllers}
    if cfg.ics is not None:
        simulate["ics"] = cfg.ics.tolist()
    if cfg.cloud is not None:
        simulate["pendulum_cloud"] = cfg.cloud
    return {
        "schema_version": cfg.schema_version,
        "system": system,
        "box": cfg.box.tolist(),
        "basis": dict(cfg.basis),
        "samples": {"L": cfg.L, "seed": cfg.seed},
        "integrator": {"dt": cfg.dt, "T": cfg.T},
        "procedure": cfg.procedure,
        "eig_block": cfg.eig_block,
        "momentum_margin": cfg.momentum_margin,
        "grid_points_per_dim": cfg.points_per_dim,
        "converge": {"L_list": cfg.converge_L, "trials": cfg.converge_trials},
        "simulate": simulate,
        "out": cfg.out,
    }


def write_resolved(cfg: RunConfig, out_dir: Union[str, Path]) -> Path:
    """Echo the fully materialized configuration into the output directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.yaml"
    path.write_text(
        yaml.safe_dump(_resolved_dict(cfg), sort_keys=False, default_flow_style=None)
    )
    return path
