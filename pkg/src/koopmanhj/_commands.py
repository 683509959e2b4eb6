"""Implementations of the CLI subcommands.

Each ``cmd_*`` function takes a fully resolved :class:`~koopmanhj.config.RunConfig`,
runs the corresponding pipeline, and writes its outputs (CSV tables plus a
human-readable ``report.txt`` and the echoed ``resolved_config.yaml``) into
the configured output directory.  All outputs are deterministic functions of
the resolved configuration, so reruns produce byte-identical files.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .basis import monomial_basis, procedure2_basis, value_basis_xi3
from .config import ConfigError, RunConfig, build_system, write_resolved
from .galerkin import (
    approximate_eigenfunction_set,
    convergence_study,
    sample_domain,
)
from .procedure1 import procedure1_solve
from .procedure2 import default_phase_box, procedure2_solve
from .simulate import (
    compare_controllers,
    linear_controller,
    lqr_controller,
    pendulum_ic_cloud,
    write_comparison_csv,
    write_trajectory_csv,
)
from .systems import hj_residual, linearize

_MAX_GRID_POINTS = 1_000_000


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _ensure_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    return out


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def _grid_points(box: np.ndarray, points_per_dim: int) -> np.ndarray:
    n = box.shape[0]
    total = points_per_dim**n
    if total > _MAX_GRID_POINTS:
        raise ConfigError(
            f"evaluation grid has {total} points "
            f"({points_per_dim} per dimension in {n} dimensions); "
            f"limit is {_MAX_GRID_POINTS} — reduce grid.points_per_dim"
        )
    axes = [np.linspace(box[i, 0], box[i, 1], points_per_dim) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _matrix_lines(name: str, M: np.ndarray) -> List[str]:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [f"{name}:"]
    for row in M:
        lines.append("  [" + ", ".join(f"{v: .9g}" for v in row) + "]")
    return lines


def _block_eigenvalues(Lambda: np.ndarray, blocks) -> List[Tuple[float, float]]:
    """(real, imag) per eigenfunction row, ordered as the rows are stored."""
    pairs: List[Tuple[float, float]] = []
    for off, size in blocks:
        if size == 1:
            pairs.append((float(Lambda[off, off]), 0.0))
        else:
            a = float(Lambda[off, off])
            b = float(Lambda[off + 1, off])
            pairs.append((a, b))
            pairs.append((a, -b))
    return pairs


def _write_report(out: Path, lines: Sequence[str]) -> None:
    with open(out / "report.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# eigfun
# ----------------------------------------------------------------------

def cmd_eigfun(cfg: RunConfig) -> None:
    out = _ensure_out(cfg)
    sys_ = build_system(cfg)
    lin = linearize(sys_)
    basis = monomial_basis(sys_.n, cfg.basis["deg_min"], cfg.basis["deg_max"])
    samples = sample_domain(cfg.box, cfg.L, cfg.seed)
    eig = approximate_eigenfunction_set(sys_.f, lin.A, basis, samples)

    n, M = sys_.n, basis.M
    header = (
        ["func_index", "block_index", "lambda_real", "lambda_imag"]
        + [f"w_{j + 1}" for j in range(n)]
        + [f"theta_{j + 1}" for j in range(M)]
        + ["train_rms", "heldout_rms", "cond_J"]
    )
    eigvals = _block_eigenvalues(eig.Lambda, eig.blocks)
    rows = []
    idx = 0
    for bi, (off, size) in enumerate(eig.blocks):
        for k in range(size):
            i = off + k
            rows.append(
                [idx, bi, eigvals[idx][0], eigvals[idx][1]]
                + list(eig.Vt[i])
                + list(eig.Theta[i])
                + [
                    float(eig.block_residuals[bi]),
                    float(eig.heldout_residuals[bi]),
                    float(eig.cond_J[bi]),
                ]
            )
            idx += 1
    _write_csv(out / "eigenfunctions.csv", header, rows)

    lines = [
        "eigenfunction approximation report",
        "==================================",
        f"system: {cfg.system_kind} (state dimension {n})",
        f"basis: monomial degrees {cfg.basis['deg_min']}..{cfg.basis['deg_max']}"
        f" ({M} functions)",
        f"samples: L={cfg.L}, seed={cfg.seed}",
        "",
        "eigenvalues (real, imag):",
    ]
    lines += [f"  psi_{i + 1}: ({re:.9g}, {im:.9g})" for i, (re, im) in enumerate(eigvals)]
    lines += ["", "per-block PDE residuals (RMS):"]
    for bi in range(len(eig.blocks)):
        lines.append(
            f"  block {bi}: train={eig.block_residuals[bi]:.6g} "
            f"heldout={eig.heldout_residuals[bi]:.6g} "
            f"cond(J)={eig.cond_J[bi]:.6g}"
        )
    lines += [""]
    lines += _matrix_lines("linear parts (rows of Vt)", eig.Vt)
    lines += ["", "files: eigenfunctions.csv, resolved_config.yaml"]
    _write_report(out, lines)


# ----------------------------------------------------------------------
# solve
# ----------------------------------------------------------------------

def _solve_procedure1(cfg: RunConfig, sys_, lin):
    basis = monomial_basis(sys_.n, cfg.basis["deg_min"], cfg.basis["deg_max"])
    samples = sample_domain(cfg.box, cfg.L, cfg.seed)
    eig = approximate_eigenfunction_set(sys_.f, lin.A, basis, samples)
    return procedure1_solve(sys_, eig), eig


def _build_p2(cfg: RunConfig, sys_):
    basis2 = procedure2_basis(sys_.n, cfg.basis["d1"], cfg.basis["d2"])
    phase_box = default_phase_box(sys_, cfg.box, margin=cfg.momentum_margin)
    samples = sample_domain(phase_box, cfg.L, cfg.seed)
    d3 = cfg.basis["d3"]
    xi3 = value_basis_xi3(sys_.n, d3) if d3 >= 2 else None
    return procedure2_solve(sys_, basis2, samples, xi3=xi3)


def cmd_solve(cfg: RunConfig) -> None:
    out = _ensure_out(cfg)
    sys_ = build_system(cfg)
    lin = linearize(sys_)
    n, p = sys_.n, sys_.p
    grid = _grid_points(cfg.box, cfg.points_per_dim)

    if cfg.procedure == 1:
        sol, eig = _solve_procedure1(cfg, sys_, lin)
        values = sol.value(grid)
        controls = np.atleast_2d(sol.control(grid)).reshape(len(grid), p)
        residuals = np.array([hj_residual(sys_, sol.grad_value, x) for x in grid])

        P_emb = sol.riccati_embedding
        ric_res = (
            sol.eig.Lambda.T @ sol.L
            + sol.L @ sol.eig.Lambda
            - sol.L @ sol.R1 @ sol.L
            + sol.Q1
        )
        K_lin = np.linalg.solve(lin.D, lin.B.T @ P_emb)
        eigvals = _block_eigenvalues(eig.Lambda, eig.blocks)
        lines = [
            "stationary solution report (eigenfunction-coordinate quadratic form)",
            "=====================================================================",
            f"system: {cfg.system_kind} (state dimension {n})",
            f"basis: monomial degrees {cfg.basis['deg_min']}..{cfg.basis['deg_max']}",
            f"samples: L={cfg.L}, seed={cfg.seed}",
            "",
            "eigenvalues (real, imag):",
        ]
        lines += [
            f"  psi_{i + 1}: ({re:.9g}, {im:.9g})" for i, (re, im) in enumerate(eigvals)
        ]
        lines += [""]
        lines += _matrix_lines("cost matrix L (eigenfunction coordinates)", sol.L)
        lines += _matrix_lines("quadratic-order value matrix P_r = Vt^T L Vt", P_emb)
        lines += _matrix_lines("linear feedback gain K = D^-1 B^T P_r", K_lin)
        lines += [
            "",
            f"Riccati residual |Lam^T L + L Lam - L R1 L + Q1|_F = "
            f"{np.linalg.norm(ric_res):.6g}",
            "per-block PDE residuals (RMS):",
        ]
        for bi in range(len(eig.blocks)):
            lines.append(
                f"  block {bi}: train={eig.block_residuals[bi]:.6g} "
                f"heldout={eig.heldout_residuals[bi]:.6g}"
            )
        lines += [
            "",
            f"evaluation grid: {cfg.points_per_dim} points per dimension "
            f"({len(grid)} total)",
            f"max |stationary residual| on grid: {np.max(np.abs(residuals)):.6g}",
            "",
            "files: value_grid.csv, hj_residual.csv, resolved_config.yaml",
        ]
    else:
        sol = _build_p2(cfg, sys_)
        values = np.empty(len(grid))
        controls = np.empty((len(grid), p))
        residuals = np.empty(len(grid))
        has_fit = sol.value_fit is not None
        for i, x in enumerate(grid):
            values[i] = (
                sol.value(x) if has_fit else 0.5 * float(x @ sol.Jl @ x)
            )
            controls[i] = np.asarray(sol.control(x), dtype=float).ravel()
            residuals[i] = hj_residual(sys_, lambda xx: sol.p_star(xx), x)

        eigs = sol.eigs
        eigvals = _block_eigenvalues(eigs.Lambda_u, eigs.blocks)
        lines = [
            "stationary solution report (zero-level set of unstable eigenfunctions)",
            "=======================================================================",
            f"system: {cfg.system_kind} (state dimension {n})",
            f"basis: state degree {cfg.basis['d1']}, "
            f"momentum-linear degree {cfg.basis['d2']}",
            f"samples: L={cfg.L}, seed={cfg.seed}, "
            f"momentum margin={cfg.momentum_margin:g}",
            "",
            "unstable eigenvalues (real, imag):",
        ]
        lines += [
            f"  Psi_{i + 1}: ({re:.9g}, {im:.9g})" for i, (re, im) in enumerate(eigvals)
        ]
        lines += [""]
        lines += _matrix_lines("linear manifold coefficient Jl (symmetrized)", sol.Jl)
        lines += [
            f"Jl asymmetry |Jl_raw - Jl_raw^T|_F / max(1, |Jl_raw|_F): "
            f"{sol.jl_asymmetry:.6g}",
            "",
            "per-block PDE residuals (RMS):",
        ]
        for bi in range(len(eigs.blocks)):
            lines.append(
                f"  block {bi}: train={eigs.residual_rms[bi]:.6g} "
                f"heldout={eigs.heldout_rms[bi]:.6g} "
                f"cond(J)={eigs.cond_J[bi]:.6g}"
            )
        if has_fit:
            vf = sol.value_fit
            lines += [""]
            lines += _matrix_lines("value coefficient matrix Jn", vf.Jn)
            lines += [
                f"value fit: rank={vf.rank}, gradient residual RMS="
                f"{vf.fit_residual:.6g}, PSD-projected residual RMS="
                f"{vf.fit_residual_psd:.6g}",
            ]
        else:
            lines += [
                "",
                "no value basis configured (basis.d3=0): value column is the "
                "quadratic part x^T Jl x / 2 only",
            ]
        lines += [
            "",
            f"evaluation grid: {cfg.points_per_dim} points per dimension "
            f"({len(grid)} total)",
            f"max |stationary residual| on grid: {np.max(np.abs(residuals)):.6g}",
            "",
            "files: value_grid.csv, hj_residual.csv, resolved_config.yaml",
        ]

    header_v = [f"x{j + 1}" for j in range(n)] + ["value"] + [
        f"u{j + 1}" for j in range(p)
    ]
    _write_csv(
        out / "value_grid.csv",
        header_v,
        (list(grid[i]) + [values[i]] + list(controls[i]) for i in range(len(grid))),
    )
    _write_csv(
        out / "hj_residual.csv",
        [f"x{j + 1}" for j in range(n)] + ["residual"],
        (list(grid[i]) + [residuals[i]] for i in range(len(grid))),
    )
    _write_report(out, lines)


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------

def _safe_name(name: str) -> str:
    return "".join(c if (c.isalnum() or c in "-_") else "_" for c in name)


def _build_controllers(
    cfg: RunConfig, sys_, lin
) -> List[Tuple[str, Callable[[np.ndarray], np.ndarray]]]:
    named: List[Tuple[str, Callable[[np.ndarray], np.ndarray]]] = []
    for spec in cfg.controllers:
        if isinstance(spec, str):
            if spec == "lqr":
                K, _ = lqr_controller(lin)
                named.append(("lqr", linear_controller(K)))
            elif spec == "procedure1":
                sol, _ = _solve_procedure1(cfg, sys_, lin)
                named.append(("procedure1", sol.control))
            elif spec == "procedure2":
                sol2 = _build_p2(cfg, sys_)
                named.append(("procedure2", sol2.control))
            else:  # pragma: no cover — config validation rejects other names
                raise ConfigError(f"unknown controller '{spec}'")
        else:
            gain = np.asarray(spec["gain"], dtype=float)
            named.append((str(spec["name"]), linear_controller(gain)))
    return named


def cmd_simulate(cfg: RunConfig) -> None:
    out = _ensure_out(cfg)
    sys_ = build_system(cfg)
    lin = linearize(sys_)
    named = _build_controllers(cfg, sys_, lin)

    if cfg.ics is not None:
        ics = np.asarray(cfg.ics, dtype=float)
    elif cfg.cloud is not None:
        ics = pendulum_ic_cloud(
            center=cfg.cloud["center"],
            count=cfg.cloud["count"],
            seed=cfg.cloud["seed"],
            rel_width=cfg.cloud["rel_width"],
        )
    else:
        raise ConfigError(
            "simulate requires initial conditions: set simulate.ics or "
            "simulate.pendulum_cloud"
        )

    traj_files: List[str] = []

    def _save(name: str, i: int, traj) -> None:
        fname = f"traj_{_safe_name(name)}_ic{i}.csv"
        write_trajectory_csv(traj, str(out / fname))
        traj_files.append(fname)

    rows = compare_controllers(
        sys_, named, list(ics), dt=cfg.dt, T=cfg.T, on_trajectory=_save
    )
    write_comparison_csv(rows, str(out / "comparison.csv"))

    lines = [
        "closed-loop comparison report",
        "=============================",
        f"system: {cfg.system_kind} (state dimension {sys_.n})",
        f"rollouts: dt={cfg.dt:g}, T={cfg.T:g}, {len(ics)} initial conditions",
        "",
    ]
    for name, _ in named:
        sub = [r for r in rows if r.controller == name]
        conv = [r for r in sub if r.converged]
        costs = [r.running_cost for r in conv]
        lines.append(
            f"controller '{name}': converged {len(conv)}/{len(sub)}"
            + (
                f", running cost over converged runs: "
                f"min={min(costs):.6g} median={float(np.median(costs)):.6g} "
                f"max={max(costs):.6g}"
                if costs
                else ""
            )
        )
        for r in sub:
            if r.diagnostic:
                lines.append(f"  ic {r.ic_index}: {r.diagnostic}")
    lines += [
        "",
        f"files: comparison.csv, {len(traj_files)} trajectory files "
        "(traj_<controller>_ic<k>.csv), resolved_config.yaml",
    ]
    _write_report(out, lines)


# ----------------------------------------------------------------------
# converge
# ----------------------------------------------------------------------

def cmd_converge(cfg: RunConfig) -> None:
    out = _ensure_out(cfg)
    sys_ = build_system(cfg)
    lin = linearize(sys_)
    basis = monomial_basis(sys_.n, cfg.basis["deg_min"], cfg.basis["deg_max"])
    study = convergence_study(
        sys_.f,
        lin.A,
        basis,
        cfg.box,
        cfg.converge_L,
        cfg.converge_trials,
        cfg.seed,
        block_index=cfg.eig_block,
    )
    _write_csv(out / "convergence.csv", ["L", "trial", "error"], study.rows())

    lines = [
        "sample-count convergence report",
        "===============================",
        f"system: {cfg.system_kind} (state dimension {sys_.n})",
        f"basis: monomial degrees {cfg.basis['deg_min']}..{cfg.basis['deg_max']}",
        f"eigenvalue block index: {cfg.eig_block}",
        f"trials per sample count: {study.trials}, seed={cfg.seed}",
        "",
        "normalized eigenfunction error vs sample count:",
    ]
    for i, L in enumerate(study.L_values):
        q25, q50, q75 = study.quartiles[i]
        lines.append(
            f"  L={L}: mean={study.means[i]:.6g} "
            f"q25={q25:.6g} median={q50:.6g} q75={q75:.6g}"
        )
    lines += [
        "",
        f"log-log slope of mean error vs L: {study.slope:.4f}"
        " (Monte-Carlo rate -1/2 corresponds to -0.5)",
        "",
        "files: convergence.csv, resolved_config.yaml",
    ]
    _write_report(out, lines)
