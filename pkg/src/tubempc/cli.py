"""Command line entry point: ``tubempc run|verify|bench``.

Exit codes: 0 when every check passes, 2 when a constraint or metric check
fails, 1 on errors (bad config, infeasible round, diverged integration).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .config import ConfigError, load_config
from .coordinator import RoundInfeasible, check_feasible_configs
from .dynamics import IntegrationDiverged, verify_assumptions
from .ocp import SolverDiverged, check_terminal_conditions
from .sim import emit_csv, emit_metrics, run_checks, run_closed_loop
from .tube import validate_rci

log = logging.getLogger("tubempc")

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = _LEVELS.get(os.environ.get("TUBEMPC_LOG_LEVEL", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _overrides(args):
    return {"seed": args.seed, "horizon_T": args.horizon, "total_time": args.total_time,
            "integrator_substeps": args.substeps}


def _print_checks(checks):
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(checks.values()) else 2


def cmd_run(args) -> int:
    config = load_config(args.config, _overrides(args))
    feas = check_feasible_configs(config.agents, config.topology)
    print(f"config {config.name}: {len(config.agents)} agents, backend={kernels.BACKEND}")
    for a in config.agents:
        print(f"  agent {a.id}: k={a.tube.k_gain:g} z_tilde={a.tube.z_tilde:g} "
              f"E_bar={a.sets.error_tight} U_bar={a.sets.input_tight} eta={a.terminal.eta:g}")
    if not feas.feasible:
        print(f"desired configuration infeasible for pairs {feas.violations}")
        return 2
    if args.validate_only:
        return 0
    sim_log, report = run_closed_loop(config)
    out = Path(args.out)
    emit_csv(sim_log, out / "trajectory.csv")
    emit_metrics(report, out / "metrics")
    print(f"wrote {out / 'trajectory.csv'} and {out / 'metrics.txt'}")
    return _print_checks(run_checks(sim_log, report, config))


def cmd_verify(args) -> int:
    config = load_config(args.config)
    checks = {}
    for a in config.agents:
        rep = verify_assumptions(a.model, strict=False)
        for name, ok in rep.passed.items():
            checks[f"agent{a.id} {name}"] = ok
        print(f"agent {a.id}: min eig {rep.min_eig:.4g} (bound {a.model.jac_lower_bound}), "
              f"Lipschitz estimate {rep.lipschitz_estimate:.4g} (bound {a.model.lipschitz_L})")
        rci = validate_rci(a.model, a.tube, config.disturbance, seed=config.seed)
        checks[f"agent{a.id} rci"] = rci.passed
        print(f"agent {a.id}: RCI max |z| {rci.max_z_norm:.4g} vs z_tilde {rci.z_tilde:.4g}, "
              f"{rci.lyapunov_violations} Lyapunov violations")
        c1, c2, w1, w2 = check_terminal_conditions(a.model, a.x_des, a.terminal, a.weights.Q, a.weights.R,
                                                   a.sets.input_tight)
        checks[f"agent{a.id} terminal input condition"] = c1
        checks[f"agent{a.id} terminal decrease condition"] = c2
        print(f"agent {a.id}: terminal worst input excess {w1:.4g}, worst decrease {w2:.4g}")
    obs = config.disturbance.observed_max(np.arange(0.0, config.total_time, 1e-3))
    checks["disturbance bound"] = obs <= config.disturbance.bound + 1e-12
    print(f"disturbance: observed max {obs:.6g} vs bound {config.disturbance.bound:g}")
    return _print_checks(checks)


def cmd_bench(args) -> int:
    config = load_config("three_agent_benchmark")
    sim_log, report = run_closed_loop(config)
    for k, v in report.flat().items():
        print(f"{k}={v}")
    return _print_checks(run_checks(sim_log, report, config))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tubempc", description="Decentralized tube-based NMPC simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write CSV and metrics")
    r.add_argument("--config", required=True, help="YAML file or bundled scenario name")
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int)
    r.add_argument("--horizon", type=float)
    r.add_argument("--total-time", type=float)
    r.add_argument("--substeps", type=int)
    r.add_argument("--validate-only", action="store_true")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="offline checks without the closed loop")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_verify)
    b = sub.add_parser("bench", help="run the bundled benchmark and print its metrics")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, RoundInfeasible, IntegrationDiverged, SolverDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
