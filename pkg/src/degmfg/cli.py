"""Command-line entry point tying solvers, sweeps, MC validation, and the
verification suite into reproducible runs.

Subcommands: solve-hjb, solve-fpe, solve-mfg, sweep-eps, mc-validate, w1,
verify, run. Exit codes: 0 success, 1 property failure, 2 configuration
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import io as dio
from . import sde
from .config import RunConfig, load_config, serialize_config
from .errors import ConfigurationError, SolverError
from .fixed_point import eps_sweep, picard_solve
from .fpe import FpeReport, solve_fpe_forward
from .grid import DensityField, DensityPath, ValuePath
from .hjb import solve_hjb_backward
from .measures import wasserstein1_points, sinkhorn_points
from .verify import VerifyThresholds, ae_residual_report, lipschitz_estimate, \
    property_checks, report_to_dict

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _apply_threads(n):
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(n)


def _constant_path(m0: DensityField, dt: float, nt: int) -> DensityPath:
    return DensityPath(m0.grid, dt,
                       np.repeat(m0.values[None], nt, axis=0),
                       validate_slices=False)


def _load_m_path(args, cfg: RunConfig) -> DensityPath:
    """Density path for the HJB stage: a CSV slice held constant in time,
    or the config's initial density if no CSV is given."""
    hjb_cfg = cfg.make_hjb_config()
    if getattr(args, "m_path", None):
        grid, values = dio.read_field_csv(args.m_path)
        if grid != cfg.make_grid():
            raise ConfigurationError("--m-path grid does not match the config")
        m0 = DensityField(grid, values)
    else:
        m0 = cfg.make_initial_density()
    return _constant_path(m0, hjb_cfg.dt, hjb_cfg.nt)


def _cmd_solve_hjb(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    dyn = cfg.make_dynamics()
    coupling = cfg.make_coupling()
    hjb_cfg = cfg.make_hjb_config()
    m_path = _load_m_path(args, cfg)
    u = solve_hjb_backward(dyn, coupling, m_path, hjb_cfg)
    rep = ae_residual_report(u, dyn, coupling, m_path)
    summary = {
        "sup_norm": float(np.max(np.abs(u.values))),
        "lipschitz_estimate": lipschitz_estimate(u.slice(0)),
        "residual_median": rep.quantiles[0],
    }
    dio.save_run(out, cfg, u, m_path, summary)
    print(json.dumps(summary, sort_keys=True, default=dio._json_default))
    return EXIT_OK


def _cmd_solve_fpe(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    dyn = cfg.make_dynamics()
    coupling = cfg.make_coupling()
    hjb_cfg = cfg.make_hjb_config()
    m_path0 = _load_m_path(args, cfg)
    u = solve_hjb_backward(dyn, coupling, m_path0, hjb_cfg)
    report = FpeReport()
    m = solve_fpe_forward(m_path0.slice(0), u, dyn, hjb_cfg,
                          sabotage_upwind=args.sabotage_upwind, report=report)
    summary = {
        "mass_drift_max": report.mass_drift_max,
        "min_density": report.min_density,
        "second_moments": list(report.second_moments),
        "validate_density": not args.sabotage_upwind,
    }
    dio.save_run(out, cfg, u, m, summary)
    print(json.dumps(summary, sort_keys=True, default=dio._json_default))
    return EXIT_OK


def _solve_mfg(cfg: RunConfig, eps: float | None):
    dyn = cfg.make_dynamics()
    if eps is not None:
        dyn = dyn.with_epsilon(eps)
    coupling = cfg.make_coupling()
    sol = picard_solve(dyn, coupling, cfg.make_initial_density(),
                       cfg.make_hjb_config(), cfg.make_fixed_point())
    if not sol.converged:
        raise SolverError("Picard iteration did not converge within %d "
                          "iterations (last residual %g)"
                          % (sol.iterations, sol.residual_history[-1]))
    return sol


def _cmd_solve_mfg(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    sol = _solve_mfg(cfg, args.eps)
    summary = {
        "converged": sol.converged,
        "iters": sol.iterations,
        "residuals": [float(r) for r in sol.residual_history],
        "eps_deltas": [],
        "epsilon": sol.epsilon,
        "lp_residual": sol.lp_residual,
    }
    dio.save_run(out, cfg, sol.u, sol.m, summary)
    print(json.dumps(summary, sort_keys=True, default=dio._json_default))
    return EXIT_OK


def _cmd_sweep_eps(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    res = eps_sweep(cfg.make_dynamics(), cfg.make_coupling(),
                    cfg.make_initial_density(), cfg.make_hjb_config(),
                    cfg.make_fixed_point())
    summary = {
        "converged": not res.aborted,
        "iters": [lv.solution.iterations for lv in res.levels],
        "residuals": [[float(r) for r in lv.solution.residual_history]
                      for lv in res.levels],
        "eps_deltas": [float(d) for d in res.sup_norm_deltas],
        "d1_deltas": [float(d) for d in res.d1_deltas],
        "eps_levels": [lv.epsilon for lv in res.levels],
    }
    last = res.levels[-1].solution
    dio.save_run(out, cfg, last.u, last.m, summary)
    print(json.dumps(summary, sort_keys=True, default=dio._json_default))
    if res.aborted:
        raise SolverError("eps sweep aborted at eps=%g"
                          % res.levels[-1].epsilon)
    return EXIT_OK


def _cmd_mc_validate(args) -> int:
    cfg = load_config(args.config)
    sol = _solve_mfg(cfg, None)
    x0 = tuple(float(v) for v in args.x0.split(","))
    if len(x0) != 2:
        raise ConfigurationError("--x0 must be 'x1,x2'")
    ens_cfg = sde.EnsembleConfig(
        n_particles=args.n or cfg.mc.n_particles,
        seed=args.seed if args.seed is not None else cfg.mc.seed,
        dt_sde=cfg.mc.dt_sde)
    est = sde.mc_value(cfg.make_dynamics(), cfg.make_coupling(),
                       sol.m, sol.u, x0, args.t0, ens_cfg)
    grid = sol.u.grid
    i1 = int(round((x0[0] - grid.x1_min) / grid.dx1))
    i2 = int(round((x0[1] - grid.x2_min) / grid.dx2))
    k = int(round(args.t0 / sol.u.dt))
    pde_value = float(sol.u.values[k, i1, i2])
    abs_diff = abs(est.mean - pde_value)
    tol = 3 * est.std_error + 0.05
    summary = {
        "mc_mean": est.mean,
        "mc_stderr": est.std_error,
        "pde_value": pde_value,
        "abs_diff": abs_diff,
        "pass": bool(abs_diff <= tol),
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        dio.write_json(os.path.join(args.out, "mc_validate.json"), summary)
    print(json.dumps(summary, sort_keys=True, default=dio._json_default))
    return EXIT_OK if summary["pass"] else EXIT_PROPERTY


def _cmd_w1(args) -> int:
    ga, va = dio.read_field_csv(args.a)
    gb, vb = dio.read_field_csv(args.b)
    da, db = DensityField(ga, va), DensityField(gb, vb)
    from .measures import GridDistance
    if args.exact:
        gd = GridDistance(ga, max_points=args.max_points)
        xs, wa = gd.coarsen(da.values)
        ys, wb = gd.coarsen(db.values)
        value = wasserstein1_points(xs, wa, ys, wb)
    else:
        gd = GridDistance(ga, max_points=args.max_points)
        xs, wa = gd.coarsen(da.values)
        ys, wb = gd.coarsen(db.values)
        reg = args.reg or gd.reg
        value = sinkhorn_points(xs, wa, ys, wb, reg=reg).value
    print("%.12g" % value)
    return EXIT_OK


def _cmd_verify(args) -> int:
    thresholds = None
    if args.tol_file:
        raw = dio.read_json(args.tol_file)
        known = {f.name for f in dataclasses.fields(VerifyThresholds)}
        bad = sorted(set(raw) - known)
        if bad:
            raise ConfigurationError(["unknown threshold key %r" % k
                                      for k in bad])
        thresholds = VerifyThresholds(**raw)
    from .verify import run_property_suite
    report = run_property_suite(args.run, thresholds)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        dio.write_json(os.path.join(args.out, "verify.json"), report)
    else:
        dio.write_json(os.path.join(args.run, "verify.json"), report)
    print(json.dumps(report, sort_keys=True, default=dio._json_default))
    return EXIT_OK if report["passed"] else EXIT_PROPERTY


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    with open(args.config, "rb") as fh:
        cfg_hash = hashlib.sha256(fh.read()).hexdigest()
    timings = {}
    t0 = time.monotonic()
    sol = _solve_mfg(cfg, None)
    timings["solve_mfg"] = time.monotonic() - t0
    mfg_summary = {
        "converged": sol.converged,
        "iters": sol.iterations,
        "residuals": [float(r) for r in sol.residual_history],
        "eps_deltas": [],
    }
    dio.save_run(out, cfg, sol.u, sol.m, mfg_summary)

    t0 = time.monotonic()
    grid = sol.u.grid
    x0 = (grid.x1[grid.n1 // 2 + 2], grid.x2[grid.n2 // 2 - 2])
    ens_cfg = cfg.make_ensemble()
    est = sde.mc_value(cfg.make_dynamics(), cfg.make_coupling(), sol.m, sol.u,
                       x0, 0.0, ens_cfg)
    pde_value = float(sol.u.values[0, grid.n1 // 2 + 2, grid.n2 // 2 - 2])
    mc_summary = {
        "mc_mean": est.mean,
        "mc_stderr": est.std_error,
        "pde_value": pde_value,
        "abs_diff": abs(est.mean - pde_value),
        "pass": bool(abs(est.mean - pde_value) <= 3 * est.std_error + 0.05),
    }
    timings["mc_validate"] = time.monotonic() - t0

    t0 = time.monotonic()
    verify_report = report_to_dict(property_checks(
        sol.u, sol.m, cfg.make_dynamics(), cfg.make_coupling()))
    timings["verify"] = time.monotonic() - t0

    all_passed = bool(mc_summary["pass"] and verify_report["passed"])
    run_summary = {
        "config_hash": cfg_hash,
        "timings": timings,
        "solve_mfg": mfg_summary,
        "mc_validate": mc_summary,
        "verify": verify_report,
        "all_passed": all_passed,
    }
    dio.write_json(os.path.join(out, "run_summary.json"), run_summary)
    print(json.dumps({"all_passed": all_passed,
                      "config_hash": cfg_hash}, sort_keys=True, default=dio._json_default))
    return EXIT_OK if all_passed else EXIT_PROPERTY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="degmfg",
        description="Degenerate mean-field-game numerical laboratory")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP thread counts")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("solve-hjb", _cmd_solve_hjb,
             help="solve the backward value equation for a frozen density")
    sp.add_argument("--config", required=True)
    sp.add_argument("--m-path", default=None,
                    help="density CSV held constant in time")
    sp.add_argument("--out", default=None)

    sp = add("solve-fpe", _cmd_solve_fpe,
             help="solve the forward density equation under the feedback")
    sp.add_argument("--config", required=True)
    sp.add_argument("--m-path", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--sabotage-upwind", action="store_true",
                    help="negative control: replace the upwind flux with a "
                         "centered one and skip hard error checks")

    sp = add("solve-mfg", _cmd_solve_mfg, help="damped Picard fixed point")
    sp.add_argument("--config", required=True)
    sp.add_argument("--eps", type=float, default=None,
                    help="override the viscosity from the config")
    sp.add_argument("--out", default=None)

    sp = add("sweep-eps", _cmd_sweep_eps,
             help="vanishing-viscosity sweep along the config schedule")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default=None)

    sp = add("mc-validate", _cmd_mc_validate,
             help="Monte Carlo estimate of the value vs the PDE solution")
    sp.add_argument("--config", required=True)
    sp.add_argument("--x0", required=True, help="start point 'x1,x2'")
    sp.add_argument("--t0", type=float, default=0.0)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None)

    sp = add("w1", _cmd_w1, help="Wasserstein-1 distance between two fields")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--exact", action="store_true")
    sp.add_argument("--reg", type=float, default=None)
    sp.add_argument("--max-points", type=int, default=320)

    sp = add("verify", _cmd_verify,
             help="run the property suite on a finished run directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--tol-file", default=None)
    sp.add_argument("--out", default=None)

    sp = add("run", _cmd_run, help="full pipeline: solve, validate, verify")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
