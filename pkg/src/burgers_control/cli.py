"""Command-line runner: simulate | hjb | verify | diagnose.

Every command reads a TOML config, writes a resolved-config snapshot and its
reports into a fresh timestamped subdirectory, and exits with 0 on success,
1 on a tolerance failure, 2 on a configuration error, 3 on divergence.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .control import (
    ControlSpec,
    dpp_check,
    grid_refinement_budget,
    optimality_comparison,
    verification_identity_check,
)
from .errors import ConfigError
from .hjb import FeedbackPolicy, fd_hjb_solve, mild_picard_solve
from .integrator import DivergenceError, energy_identity_report, moment_report, simulate_paths
from .noise import ito_isometry_check, verify_assumptions
from .reports import (
    RunManifest,
    make_report,
    write_json,
    write_jump_events_csv,
    write_trajectories_csv,
)
from .semigroup import bel_gradient, gradient_fd_oracle, smoothing_probe, sq_norm_observable
from .spectral import SpectralField, unit_mode

logger = logging.getLogger("burgers_control")

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3

OUTPUT_ROOT_ENV = "BURGERS_CONTROL_OUT"


def _run_dir(cfg: ExperimentConfig, command: str, out_override: str | None) -> Path:
    root = Path(out_override or os.environ.get(OUTPUT_ROOT_ENV) or cfg.output_dir)
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = root / f"{command}_{stamp}_{cfg.config_hash()[:8]}"
    path = base
    k = 1
    while path.exists():
        path = Path(f"{base}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _finalize(run_dir: Path, cfg: ExperimentConfig, manifest: RunManifest) -> int:
    write_json(run_dir / "resolved_config.json", cfg.resolved_dict())
    write_json(run_dir / "manifest.json", manifest.as_dict())
    write_json(run_dir / "reports.json", manifest.reports)
    failures = [r for r in manifest.reports if not r["passed"]]
    for r in manifest.reports:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"[{status}] {r['name']}: value={r['value']:.6g}", flush=True)
    print(f"outputs: {run_dir}")
    return EXIT_TOLERANCE if failures else EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, run_dir: Path, workers: int) -> int:
    icfg = cfg.integrator_config()
    noise = cfg.noise_model()
    x = cfg.x0_field()
    checkpoints = [icfg.T / 4, icfg.T / 2, icfg.T]
    summary, trajectories = simulate_paths(
        icfg,
        noise,
        x,
        n_paths=cfg.mc.n_paths,
        seed=cfg.seed,
        checkpoints=checkpoints,
        n_record=cfg.mc.n_record_paths,
        workers=workers,
    )
    energy = energy_identity_report(
        icfg, noise, x, n_paths=cfg.mc.n_paths, seed=cfg.seed, checkpoints=checkpoints, workers=workers
    )
    write_trajectories_csv(run_dir / "trajectories.csv", trajectories)
    write_jump_events_csv(run_dir / "jump_events.csv", trajectories)
    write_json(
        run_dir / "summary.json",
        {
            "ensemble": summary.as_dict(),
            "energy_identity": energy.as_dict(),
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "version": __version__,
        },
    )
    manifest = RunManifest("simulate", cfg.config_hash(), cfg.seed, __version__, workers)
    rel = float(np.max(energy.rel_error))
    tol = 0.02 + 3.0 * float(np.max(energy.rel_stderr))
    manifest.reports.append(
        make_report(
            "energy_identity_max_rel_error",
            rel,
            rel <= tol,
            cfg.config_hash(),
            cfg.seed,
            __version__,
            stderr=float(np.max(energy.stderr)),
            tolerance=tol,
            detail=energy.as_dict(),
        )
    )
    return _finalize(run_dir, cfg, manifest)


def cmd_hjb(cfg: ExperimentConfig, run_dir: Path, workers: int) -> int:
    icfg = cfg.integrator_config()
    noise = cfg.noise_model()
    rho = cfg.control.rho
    manifest = RunManifest("hjb", cfg.config_hash(), cfg.seed, __version__, workers)
    grids = {}
    if cfg.hjb.method in ("fd", "both"):
        grids["fd"] = fd_hjb_solve(
            icfg, noise, rho, cfg.hjb.R, cfg.hjb.n_pts, dt_pde=cfg.hjb.dt_pde, n_slices=cfg.hjb.slices
        )
        grids["fd"].save_csv(run_dir / "value_grid_fd.csv")
    if cfg.hjb.method in ("picard", "both"):
        pic, rep = mild_picard_solve(
            icfg,
            noise,
            rho,
            cfg.hjb.R,
            cfg.hjb.n_pts,
            n_paths=cfg.mc.n_paths_picard,
            seed=cfg.seed,
            n_slices=cfg.hjb.picard.slices,
            max_iter=cfg.hjb.picard.max_iter,
            tol=cfg.hjb.picard.tol,
            workers=workers,
        )
        grids["picard"] = pic
        pic.save_csv(run_dir / "value_grid_picard.csv")
        write_json(run_dir / "picard_report.json", rep.as_dict())
        manifest.reports.append(
            make_report(
                "picard_converged",
                float(rep.iterations),
                rep.converged,
                cfg.config_hash(),
                cfg.seed,
                __version__,
                detail=rep.as_dict(),
            )
        )
    if len(grids) == 2:
        fd, pic = grids["fd"], grids["picard"]
        axis = fd.axis
        core = axis[np.abs(axis) <= fd.R / 2 + 1e-12]
        pts = core[:, None] if fd.m == 1 else None
        if pts is None:
            a, b = np.meshgrid(core, core, indexing="ij")
            pts = np.stack([a.ravel(), b.ravel()], axis=1)
        vfd = fd.value_at(fd.T, pts)
        vpic = pic.value_at(pic.T, pts)
        sup = float(np.max(np.abs(vfd - vpic)))
        scale = float(np.max(np.abs(vfd)))
        tol = max(0.05 * scale, 3.0 * rep.max_node_stderr)
        manifest.reports.append(
            make_report(
                "hjb_cross_oracle_sup_diff",
                sup,
                sup <= tol,
                cfg.config_hash(),
                cfg.seed,
                __version__,
                tolerance=tol,
                detail={"scale": scale, "picard_stderr": rep.max_node_stderr},
            )
        )
    return _finalize(run_dir, cfg, manifest)


def cmd_verify(cfg: ExperimentConfig, run_dir: Path, workers: int) -> int:
    icfg = cfg.integrator_config()
    noise = cfg.noise_model()
    x = cfg.x0_field()
    rho = cfg.control.rho
    chash = cfg.config_hash()
    manifest = RunManifest("verify", chash, cfg.seed, __version__, workers)
    reports = manifest.reports

    # energy identity
    energy = energy_identity_report(
        icfg, noise, x, n_paths=cfg.mc.n_paths, seed=cfg.seed, checkpoints=[icfg.T], workers=workers
    )
    rel = float(np.max(energy.rel_error))
    tol = 0.02 + 3.0 * float(np.max(energy.rel_stderr))
    reports.append(
        make_report("energy_identity", rel, rel <= tol, chash, cfg.seed, __version__,
                    stderr=float(np.max(energy.stderr)), tolerance=tol, detail=energy.as_dict())
    )

    # jump isometry
    if noise.levy is not None:
        iso = ito_isometry_check(noise.levy, icfg.T, n_paths=cfg.mc.n_paths, seed=cfg.seed, m=icfg.m)
        reports.append(
            make_report("ito_isometry", iso.lhs, iso.passed(), chash, cfg.seed, __version__,
                        stderr=iso.stderr, tolerance=3.0 * iso.stderr,
                        detail={"rhs": iso.rhs, "z": iso.z_score})
        )
        assumptions = verify_assumptions(noise.covariance, noise.levy, kappa=0.75)
        reports.append(
            make_report("noise_assumptions", assumptions.a3_constant, assumptions.passed,
                        chash, cfg.seed, __version__, detail=assumptions.as_dict())
        )

    # gradient estimator versus its finite-difference oracle
    f = sq_norm_observable()
    t = icfg.T
    h = unit_mode(1, icfg.m)
    n_grad = max(2000, cfg.mc.n_paths_gradient // 10)
    bel = bel_gradient(f, t, x, h, icfg, noise, n_paths=n_grad, seed=cfg.seed, workers=workers)
    fd_est = gradient_fd_oracle(
        f, t, x, h, delta=1e-3, cfg=icfg, noise=noise, n_paths=n_grad, seed=cfg.seed, workers=workers
    )
    diff = abs(bel.value - fd_est.value)
    tol = max(3.0 * (bel.stderr**2 + fd_est.stderr**2) ** 0.5, 0.05 * abs(fd_est.value))
    reports.append(
        make_report("bel_vs_fd_gradient", diff, diff <= tol, chash, cfg.seed, __version__,
                    stderr=bel.stderr, tolerance=tol,
                    detail={"bel": bel.value, "fd": fd_est.value})
    )

    # value grid, verification identity, DPP, optimality (grid solvers need m <= 2)
    if icfg.m <= 2:
        grid = fd_hjb_solve(icfg, noise, rho, cfg.hjb.R, cfg.hjb.n_pts, n_slices=cfg.hjb.slices)
        budget = grid_refinement_budget(
            lambda n: fd_hjb_solve(icfg, noise, rho, cfg.hjb.R, n, n_slices=cfg.hjb.slices),
            coarse_pts=(cfg.hjb.n_pts + 1) // 2,
            fine_pts=cfg.hjb.n_pts,
        )
        u_const = ControlSpec.constant(SpectralField(0.5 * rho * np.eye(icfg.m)[0]), rho)
        ver = verification_identity_check(
            x, u_const, grid, icfg, noise, n_paths=cfg.mc.n_paths, seed=cfg.seed,
            grid_budget=budget, workers=workers,
        )
        reports.append(
            make_report("verification_identity_gap", ver.gap, ver.passed() and ver.reliable,
                        chash, cfg.seed, __version__, stderr=ver.stderr,
                        tolerance=ver.tolerance(), detail=ver.as_dict())
        )
        dpp = dpp_check(
            x, 0.0, icfg.T / 2, grid, icfg, noise, n_paths=cfg.mc.n_paths, seed=cfg.seed,
            grid_budget=budget,
        )
        reports.append(
            make_report("dpp_inequality", dpp.v_tx, dpp.inequality_ok and dpp.attainment_ok,
                        chash, cfg.seed, __version__, detail=dpp.as_dict())
        )
        candidates = {
            "zero": ControlSpec.zero(rho),
            "push_up": ControlSpec.constant(SpectralField(rho * np.eye(icfg.m)[0]), rho),
            "push_down": ControlSpec.constant(SpectralField(-rho * np.eye(icfg.m)[0]), rho),
        }
        tour = optimality_comparison(
            x, grid, candidates, icfg, noise, n_paths=cfg.mc.n_paths, seed=cfg.seed
        )
        reports.append(
            make_report("feedback_optimality", tour.rows[0][1], tour.feedback_optimal,
                        chash, cfg.seed, __version__, detail=tour.as_dict())
        )
    return _finalize(run_dir, cfg, manifest)


def cmd_diagnose(cfg: ExperimentConfig, run_dir: Path, workers: int) -> int:
    icfg = cfg.integrator_config()
    noise = cfg.noise_model()
    chash = cfg.config_hash()
    manifest = RunManifest("diagnose", chash, cfg.seed, __version__, workers)
    mom = moment_report(
        icfg,
        noise,
        x_norms=[0.0, 0.5, 1.0, 2.0],
        p_list=[2, 4],
        n_paths=cfg.mc.n_paths,
        seed=cfg.seed,
        workers=workers,
    )
    write_json(run_dir / "moment_report.json", mom.as_dict())
    bounded = not np.any(mom.exp_saturated) and all(
        np.max(r) <= 8.0 * max(np.min(r), 1e-12) + 8.0 * (1.0 + r[0]) for r in mom.ratios.values()
    )
    manifest.reports.append(
        make_report("moment_scaling_bounded", float(np.max(mom.exp_ratios)), bool(bounded),
                    chash, cfg.seed, __version__, detail=mom.as_dict())
    )
    probe = smoothing_probe(
        sq_norm_observable(),
        cfg.x0_field(),
        t_grid=np.geomspace(max(icfg.dt * 10, 0.01), max(icfg.dt * 100, 0.1), 5),
        cfg=icfg,
        noise=noise,
        kappa=cfg.noise.covariance.alpha if cfg.noise.covariance.kind == "a_power" else 0.75,
        n_paths=max(1000, cfg.mc.n_paths // 10),
        seed=cfg.seed,
        workers=workers,
    )
    write_json(run_dir / "smoothing_probe.json", probe)
    manifest.reports.append(
        make_report("smoothing_probe_rows", float(len(probe)), len(probe) > 0,
                    chash, cfg.seed, __version__)
    )
    return _finalize(run_dir, cfg, manifest)


COMMANDS = {
    "simulate": cmd_simulate,
    "hjb": cmd_hjb,
    "verify": cmd_verify,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burgers-control",
        description="Stochastic Burgers control laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--workers", type=int, default=1, help="worker pool size")
        p.add_argument("--out", default=None, help="output root directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            import dataclasses

            cfg = dataclasses.replace(cfg, seed=args.seed)
        run_dir = _run_dir(cfg, args.command, args.out)
        return COMMANDS[args.command](cfg, run_dir, max(1, args.workers))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
