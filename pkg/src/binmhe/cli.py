"""Command-line driver: mesh export, experiments, sweeps, self-validation.

Commands::

    binmhe mesh          write the truth and estimator meshes
    binmhe run           one Monte-Carlo experiment -> rmse_time.csv
    binmhe sweep-noise   noise-variance sweep -> sweep_noise.csv
    binmhe sweep-sensors sensor-count sweep -> sweep_sensors.csv
    binmhe validate      run the numerical property checks

Every command accepts ``--config PATH`` (key-value scenario file),
``--seed INT``, ``--out DIR``, ``--runs INT``, ``--quiet``; flags override
file values. Exit codes: 0 success, 1 validation failure, 2 bad
configuration or input, 3 convergence cap, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, gausstail as gt
from .config import ConfigError, ScenarioConfig, load_config
from .estimator import ConvergenceError
from .mesh import save_mesh
from .simlab import (build_scenario, run_experiment, sweep_noise,
                     sweep_sensors, write_manifest, write_rmse_csv,
                     write_sweep_csv)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="binmhe",
        description="Field estimation from binary threshold sensors.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "mesh": cmd_mesh,
        "run": cmd_run,
        "sweep-noise": cmd_sweep_noise,
        "sweep-sensors": cmd_sweep_sensors,
        "validate": cmd_validate,
    }
    for name, handler in handlers.items():
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, default=None,
                         help="scenario config file (key = value lines)")
        cmd.add_argument("--seed", type=int, default=None, help="override rng_seed")
        cmd.add_argument("--out", type=Path, default=None, help="override output dir")
        cmd.add_argument("--runs", type=int, default=None, help="override mc_runs")
        cmd.add_argument("--quiet", action="store_true")
        cmd.set_defaults(handler=handler)
    return parser


def _load_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.runs is not None:
        overrides["mc_runs"] = args.runs
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    return replace(cfg, **overrides) if overrides else cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(args, message):
    if not args.quiet:
        print(message)


def cmd_mesh(cfg, args):
    out = _out_dir(cfg)
    sc = build_scenario(cfg)
    truth_path, est_path = out / "truth.mesh", out / "estimator.mesh"
    save_mesh(truth_path, sc.truth_mesh)
    save_mesh(est_path, sc.est_mesh)
    _say(args, f"wrote {truth_path} ({sc.truth_mesh.n_vertices} vertices) and "
               f"{est_path} ({sc.est_mesh.n_vertices} vertices)")
    return 0


def cmd_run(cfg, args):
    out = _out_dir(cfg)
    sc = build_scenario(cfg)
    report = run_experiment(sc)
    csv_path = out / "rmse_time.csv"
    write_rmse_csv(csv_path, report)
    manifest = out / "run_manifest.json"
    write_manifest(manifest, cfg.as_mapping(), [report],
                   [csv_path.name, manifest.name])
    _say(args, f"{sc.mc_runs} runs x {sc.n_estimator_steps} steps; "
               f"final RMSE {report.rmse_series[-1]:.4g}; "
               f"{len(report.failed_runs)} flagged runs; wrote {csv_path}")
    return 0


def cmd_sweep_noise(cfg, args):
    out = _out_dir(cfg)
    sweep_cfg = replace(cfg, sensor_count=cfg.noise_sweep_sensors,
                        sensor_layout="fixed")
    sc = build_scenario(sweep_cfg)
    reports = sweep_noise(sc, cfg.noise_sweep_values)
    csv_path = out / "sweep_noise.csv"
    write_sweep_csv(csv_path, reports, "r")
    manifest = out / "run_manifest.json"
    write_manifest(manifest, cfg.as_mapping(), reports,
                   [csv_path.name, manifest.name])
    for rep in reports:
        _say(args, f"r={rep.sweep_value:g}: mean RMSE {rep.mean_rmse:.4g} "
                   f"+/- {rep.std_rmse:.2g}")
    _say(args, f"wrote {csv_path}")
    return 0


def cmd_sweep_sensors(cfg, args):
    out = _out_dir(cfg)
    sc = build_scenario(cfg)
    reports = sweep_sensors(sc, cfg.sensor_sweep_values)
    csv_path = out / "sweep_sensors.csv"
    write_sweep_csv(csv_path, reports, "l")
    manifest = out / "run_manifest.json"
    write_manifest(manifest, cfg.as_mapping(), reports,
                   [csv_path.name, manifest.name])
    for rep in reports:
        _say(args, f"l={int(rep.sweep_value)}: mean RMSE {rep.mean_rmse:.4g} "
                   f"+/- {rep.std_rmse:.2g}")
    _say(args, f"wrote {csv_path}")
    return 0


def _validation_checks(cfg):
    """Yield (name, passed, detail) for each numerical property check."""
    grid = np.linspace(-12.0, 12.0, 10_000)
    worst = max(float(np.max(gt.d2log_q_tail(grid, 1.0))),
                float(np.max(gt.d2log_cdf(grid, 1.0))))
    yield ("log-concavity", worst <= 1e-10, f"max curvature {worst:.3e}")

    h = 1e-6
    pts = np.linspace(-10.0, 10.0, 201)
    fd = (gt.log_q_tail(pts + h, 1.0) - gt.log_q_tail(pts - h, 1.0)) / (2 * h)
    rel = float(np.max(np.abs(fd - gt.dlog_q_tail(pts, 1.0))
                       / np.abs(fd)))
    yield ("tail-derivative", rel < 1e-6, f"max relative FD error {rel:.3e}")

    from types import SimpleNamespace

    from .estimator import (BinarySensor, EstimatorState, MeasurementWindow,
                            mh_cost, mh_cost_gradient)
    rng = np.random.default_rng(0)
    n, steps, l = 3, 3, 4
    a = rng.standard_normal((n, n))
    a *= 0.9 / max(1.0, np.max(np.abs(np.linalg.eigvals(a))))
    sys = SimpleNamespace(A=a, B=rng.standard_normal((n, 2)),
                          process_weight=np.eye(n) * 2.0)
    sensors = [BinarySensor(rng.standard_normal(n), 0.0,
                            float(rng.normal()), 0.8) for _ in range(l)]
    est = EstimatorState(rng.standard_normal(n), np.eye(n), np.zeros((steps, n)))
    win = MeasurementWindow(rng.integers(0, 2, (steps, l)).astype(float),
                            rng.standard_normal((steps - 1, 2)), t=steps - 1)
    x = rng.standard_normal(steps * n)
    grad = mh_cost_gradient(sys, sensors, est, win, x)
    fd_grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = 1e-6
        fd_grad[i] = (mh_cost(sys, sensors, est, win, x + e)
                      - mh_cost(sys, sensors, est, win, x - e)) / 2e-6
    rel = float(np.linalg.norm(grad - fd_grad) / np.linalg.norm(fd_grad))
    yield ("window-gradient", rel < 1e-5, f"relative FD error {rel:.3e}")

    from .fem import BoundarySpec, assemble
    from .mesh import INTERIOR, Mesh
    tri = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
               np.array([[0, 1, 2]]), np.full(3, INTERIOR))
    mref = assemble(tri, BoundarySpec(cfg.diffusivity, cfg.dirichlet_value,
                                      cfg.truth_dt)).mass.toarray()
    expected = (0.5 / 12.0) * np.array([[2.0, 1, 1], [1, 2, 1], [1, 1, 2]])
    err = float(np.max(np.abs(mref - expected)))
    yield ("element-mass", err <= 1e-14, f"max entry error {err:.3e}")

    from .mesh import generate_structured_mesh
    est_mesh = generate_structured_mesh(cfg.domain_width, cfg.domain_height,
                                        cfg.est_nx, cfg.est_ny, cfg.dirichlet_edge)
    mats = assemble(est_mesh, BoundarySpec(cfg.diffusivity, cfg.dirichlet_value,
                                           cfg.truth_dt * cfg.sample_ratio))
    row_sums = np.abs(np.asarray(mats.stiffness.sum(axis=1)).ravel()
                      + np.asarray(mats.dirichlet_coupling.sum(axis=1)).ravel())
    worst_sum = float(np.max(row_sums))
    yield ("stiffness-row-sums", worst_sum <= 1e-12,
           f"max |row sum| {worst_sum:.3e}")

    sc = build_scenario(replace(cfg, mc_runs=1))

    for label, system in (("estimator", sc.est_system), ("truth", sc.truth_system)):
        x_star = np.full(system.n, cfg.dirichlet_value)
        resid = float(np.max(np.abs(system.step(x_star) - x_star)))
        yield (f"steady-state-{label}", resid < 1e-9, f"residual {resid:.3e}")


def cmd_validate(cfg, args):
    failures = 0
    for name, ok, detail in _validation_checks(cfg):
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"validation failed: {failures} check(s)", file=sys.stderr)
        return 1
    _say(args, "all checks passed")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return args.handler(cfg, args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
