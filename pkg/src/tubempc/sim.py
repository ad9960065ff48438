"""Closed-loop sampled-data simulation, logging and metrics.

At each sampling instant every agent solves its nominal problem from the
propagated nominal error. Between samples the real system runs under
``u = u_bar - k (e - e_bar)`` with the disturbance, and the nominal system
under ``u_bar``; both are advanced together with RK4 on a fine grid.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import ScenarioConfig
from .coordinator import RoundInfeasible, TrajectoryMailbox, run_round
from .dynamics import IntegrationDiverged

log = logging.getLogger(__name__)


@dataclass
class RoundRecord:
    t: float
    agent: int
    status: str
    inner_iterations: int
    cold_iterations: Optional[int]
    candidate_ok: Optional[bool]
    kkt_residual: float
    cost: float
    wall_time: float


@dataclass
class SimulationLog:
    """Fine-grid trajectories for every agent plus per-round solver metadata.

    Arrays are keyed by agent id: ``x``, ``x_bar``, ``e``, ``e_bar`` are
    (rows, n); ``u``, ``u_bar`` are (rows, m) and hold the input applied from
    that instant on (the last row repeats the previous input); ``znorm`` and
    ``stage_cost`` are (rows,).
    """

    times: np.ndarray
    agent_ids: List[int]
    x: Dict[int, np.ndarray]
    x_bar: Dict[int, np.ndarray]
    e: Dict[int, np.ndarray]
    e_bar: Dict[int, np.ndarray]
    u: Dict[int, np.ndarray]
    u_bar: Dict[int, np.ndarray]
    znorm: Dict[int, np.ndarray]
    stage_cost: Dict[int, np.ndarray]
    pairs: List[tuple] = field(default_factory=list)
    rounds: List[RoundRecord] = field(default_factory=list)

    def distance(self, i: int, j: int) -> np.ndarray:
        return np.linalg.norm(self.x[i] - self.x[j], axis=1)

    @property
    def n_rows(self) -> int:
        return self.times.size


@dataclass
class MetricsReport:
    max_znorm: Dict[int, float]
    z_tilde: Dict[int, float]
    containment_margin: Dict[int, float]
    final_error: Dict[int, float]
    final_error_bound: Dict[int, float]
    min_distance_margin: Dict[str, float]
    max_abs_u: Dict[int, list]
    input_bound: Dict[int, list]
    workspace_ok: bool
    feasibility_streak: int
    n_rounds: int
    candidate_failures: int
    candidate_checks: int
    warm_faster_fraction: Optional[float]
    iss_pass: bool
    iss_tail_sup: Dict[int, float]

    def flat(self) -> dict:
        out = {}
        for key, val in asdict(self).items():
            if isinstance(val, dict):
                for k, v in val.items():
                    if isinstance(v, list):
                        for c, vc in enumerate(v):
                            out[f"{key}.{k}.{c}"] = vc
                    else:
                        out[f"{key}.{k}"] = v
            else:
                out[key] = val
        return out


def _field(model, disturbance, k_gain, n):
    """Joint right-hand side of the real and nominal error dynamics."""

    def f(t, s, u_bar, x_des):
        e, eb = s[:n], s[n:]
        u = u_bar - k_gain * (e - eb)
        return np.concatenate([model.eval(e + x_des, u) + disturbance(t), model.eval(eb + x_des, u_bar)])

    return f


def run_closed_loop(config: ScenarioConfig, compare_cold: bool = False):
    """Run the scenario and return ``(SimulationLog, MetricsReport)``."""
    specs = {a.id: a for a in config.agents}
    ids = sorted(specs)
    n = config.agents[0].x_init.size
    s = config.integrator_substeps
    h = config.delta / s
    K = config.n_rounds
    rows = K * s + 1
    times = np.arange(rows) * h

    e_hist = {i: np.empty((rows, n)) for i in ids}
    eb_hist = {i: np.empty((rows, n)) for i in ids}
    m = {i: specs[i].sets.input_set.dim for i in ids}
    u_hist = {i: np.empty((rows, m[i])) for i in ids}
    ub_hist = {i: np.empty((rows, m[i])) for i in ids}
    fields = {i: _field(specs[i].model, config.disturbance, specs[i].tube.k_gain, n) for i in ids}

    state = {i: np.concatenate([specs[i].x_init - specs[i].x_des] * 2) for i in ids}
    for i in ids:
        e_hist[i][0] = state[i][:n]
        eb_hist[i][0] = state[i][n:]

    mailbox = TrajectoryMailbox()
    previous = None
    records = []
    streak = 0
    for k in range(K):
        t_k = k * config.delta
        nominal = {i: state[i][n:].copy() for i in ids}
        try:
            res = run_round(t_k, k, nominal, specs, config.topology, mailbox, config.horizon_T,
                            config.n_intervals, s, previous, config.solver, compare_cold)
        except RoundInfeasible:
            log.error("round %d (t=%.2f) infeasible", k, t_k)
            raise
        streak += 1
        for i in ids:
            sol = res.solutions[i]
            records.append(RoundRecord(t_k, i, sol.status, sol.inner_iterations, res.cold_iterations[i],
                                       res.candidate_ok[i], sol.kkt_residual, sol.cost, res.wall_time[i]))
        previous = res.solutions
        for i in ids:
            sp = specs[i]
            u_bar = res.solutions[i].controls[0]
            f = fields[i]
            x = state[i]
            for j in range(s):
                row = k * s + j
                t = row * h
                u_hist[i][row] = u_bar - sp.tube.k_gain * (x[:n] - x[n:])
                ub_hist[i][row] = u_bar
                k1 = f(t, x, u_bar, sp.x_des)
                k2 = f(t + 0.5 * h, x + 0.5 * h * k1, u_bar, sp.x_des)
                k3 = f(t + 0.5 * h, x + 0.5 * h * k2, u_bar, sp.x_des)
                k4 = f(t + h, x + h * k3, u_bar, sp.x_des)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if not np.all(np.isfinite(x)):
                    raise IntegrationDiverged(t + h, f"agent {i}")
                e_hist[i][row + 1] = x[:n]
                eb_hist[i][row + 1] = x[n:]
            state[i] = x
        log.info("t=%.2f done: %s", t_k, ", ".join(f"{i}:{res.solutions[i].status}" for i in ids))

    for i in ids:
        if rows > 1:
            u_hist[i][-1] = u_hist[i][-2]
            ub_hist[i][-1] = ub_hist[i][-2]
        else:
            u_hist[i][-1] = 0.0
            ub_hist[i][-1] = 0.0

    x_hist = {i: e_hist[i] + specs[i].x_des for i in ids}
    xb_hist = {i: eb_hist[i] + specs[i].x_des for i in ids}
    znorm = {i: np.linalg.norm(e_hist[i] - eb_hist[i], axis=1) for i in ids}
    stage = {}
    for i in ids:
        sp = specs[i]
        du = ub_hist[i] - sp.terminal.u_eq
        stage[i] = (np.einsum("bi,ij,bj->b", eb_hist[i], sp.weights.Q, eb_hist[i])
                    + np.einsum("bi,ij,bj->b", du, sp.weights.R, du))
    sim_log = SimulationLog(times, ids, x_hist, xb_hist, e_hist, eb_hist, u_hist, ub_hist, znorm, stage,
                            pairs=config.topology.pairs(), rounds=records)
    return sim_log, compute_metrics(sim_log, config, streak)


def compute_metrics(sim_log: SimulationLog, config: ScenarioConfig, streak: Optional[int] = None) -> MetricsReport:
    specs = {a.id: a for a in config.agents}
    ids = sim_log.agent_ids
    iss_ok, iss_data = iss_envelope_check(sim_log, config)
    max_z = {i: float(sim_log.znorm[i].max()) for i in ids}
    ztil = {i: specs[i].tube.z_tilde for i in ids}
    final_err = {i: float(np.linalg.norm(sim_log.e[i][-1])) for i in ids}
    bound = {i: iss_data["tail_bound"][i] for i in ids}
    dist_margin = {}
    for i, j in sim_log.pairs:
        d = min(specs[i].sensing_range, specs[j].sensing_range)
        dist_margin[f"{i}_{j}"] = float(d - sim_log.distance(i, j).max())
    ws = config.workspace
    ws_ok = all(bool(np.all((sim_log.x[i] >= ws.lower) & (sim_log.x[i] <= ws.upper))) for i in ids)
    checks = [r.candidate_ok for r in sim_log.rounds if r.candidate_ok is not None]
    pairs = [(r.inner_iterations, r.cold_iterations) for r in sim_log.rounds if r.cold_iterations is not None]
    warm_frac = float(np.mean([w < c for w, c in pairs])) if pairs else None
    n_rounds = config.n_rounds
    return MetricsReport(
        max_znorm=max_z, z_tilde=ztil, containment_margin={i: ztil[i] - max_z[i] for i in ids},
        final_error=final_err, final_error_bound=bound, min_distance_margin=dist_margin,
        max_abs_u={i: np.abs(sim_log.u[i]).max(axis=0).tolist() for i in ids},
        input_bound={i: np.maximum(np.abs(specs[i].sets.input_set.lower),
                                   np.abs(specs[i].sets.input_set.upper)).tolist() for i in ids},
        workspace_ok=ws_ok, feasibility_streak=n_rounds if streak is None else streak, n_rounds=n_rounds,
        candidate_failures=int(sum(not c for c in checks)), candidate_checks=len(checks),
        warm_faster_fraction=warm_frac, iss_pass=iss_ok, iss_tail_sup=iss_data["tail_sup"])


def iss_envelope_check(sim_log: SimulationLog, config: ScenarioConfig, transient: Optional[float] = None,
                       slack: Optional[float] = None, tail_fraction: float = 0.2):
    """Checkable consequences of input-to-state stability.

    (a) after ``transient`` seconds, ``|e(t)| <= |e(0)| + z_tilde + slack``;
    (b) over the last ``tail_fraction`` of the run, ``sup |e(t)|`` stays below
    ``z_tilde + sqrt(eta / lambda_min(P)) + slack``.
    """
    transient = config.iss_transient if transient is None else transient
    slack = config.iss_slack if slack is None else slack
    specs = {a.id: a for a in config.agents}
    t = sim_log.times
    t_end = t[-1] if t.size else 0.0
    after = t >= transient - 1e-12
    tail = t >= (1.0 - tail_fraction) * t_end - 1e-12
    data = {"envelope_ok": {}, "tail_sup": {}, "tail_bound": {}}
    ok = True
    for i in sim_log.agent_ids:
        sp = specs[i]
        norms = np.linalg.norm(sim_log.e[i], axis=1)
        env = norms[0] + sp.tube.z_tilde + slack
        a_ok = bool(np.all(norms[after] <= env)) if after.any() else True
        lam = float(np.linalg.eigvalsh(sp.terminal.P)[0])
        cap = sp.tube.z_tilde + float(np.sqrt(sp.terminal.eta / lam)) + slack
        sup = float(norms[tail].max()) if tail.any() else 0.0
        data["envelope_ok"][i] = a_ok
        data["tail_sup"][i] = sup
        data["tail_bound"][i] = cap
        ok = ok and a_ok and sup <= cap
    return ok, data


def csv_header(sim_log: SimulationLog) -> list:
    cols = ["t"]
    for i in sim_log.agent_ids:
        n = sim_log.x[i].shape[1]
        m = sim_log.u[i].shape[1]
        cols += [f"x{i}_{c + 1}" for c in range(n)]
        cols += [f"xbar{i}_{c + 1}" for c in range(n)]
        cols += [f"u{i}_{c + 1}" for c in range(m)]
        cols += [f"ubar{i}_{c + 1}" for c in range(m)]
        cols += [f"znorm{i}", f"stagecost{i}"]
    cols += [f"dist_{i}_{j}" for i, j in sim_log.pairs]
    return cols


def log_matrix(sim_log: SimulationLog) -> np.ndarray:
    parts = [sim_log.times[:, None]]
    for i in sim_log.agent_ids:
        parts += [sim_log.x[i], sim_log.x_bar[i], sim_log.u[i], sim_log.u_bar[i],
                  sim_log.znorm[i][:, None], sim_log.stage_cost[i][:, None]]
    parts += [sim_log.distance(i, j)[:, None] for i, j in sim_log.pairs]
    return np.hstack(parts) if sim_log.n_rows else np.empty((0, len(csv_header(sim_log))))


def emit_csv(sim_log: SimulationLog, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = log_matrix(sim_log)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(sim_log))
        for row in data:
            w.writerow([f"{v:.17g}" for v in row])
    return path


def emit_metrics(report: MetricsReport, path) -> tuple:
    """Write ``<path>.txt`` (key=value) and ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flat = report.flat()
    txt = path.with_suffix(".txt")
    with open(txt, "w") as fh:
        for k, v in flat.items():
            fh.write(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n")
    js = path.with_suffix(".json")
    with open(js, "w") as fh:
        json.dump(asdict(report), fh, indent=2, sort_keys=True, default=str)
    return txt, js


def read_csv(path):
    """Parse an emitted CSV back into ``(header, float matrix)``."""
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]) if len(rows) > 1 else np.empty((0, len(header)))
    return header, data


def timed_run(config: ScenarioConfig, **kw):
    tic = time.perf_counter()
    out = run_closed_loop(config, **kw)
    return out, time.perf_counter() - tic


def run_checks(sim_log: SimulationLog, report: MetricsReport, config: ScenarioConfig,
               containment_slack: float = 0.02, input_tol: float = 1e-9) -> Dict[str, bool]:
    """Pass/fail of the closed-loop guarantees on a finished run."""
    specs = {a.id: a for a in config.agents}
    ids = sim_log.agent_ids
    inputs_ok = True
    for i in ids:
        box = specs[i].sets.input_set
        inputs_ok &= bool(np.all(sim_log.u[i] >= box.lower - input_tol) & np.all(sim_log.u[i] <= box.upper + input_tol))
    return {
        "tube_containment": all(report.max_znorm[i] <= (1 + containment_slack) * report.z_tilde[i] for i in ids),
        "connectivity": all(m > 0 for m in report.min_distance_margin.values()),
        "input_constraints": inputs_ok,
        "workspace": report.workspace_ok,
        "convergence": all(report.final_error[i] <= report.final_error_bound[i] for i in ids),
        "all_rounds_feasible": report.feasibility_streak == report.n_rounds,
        "iss_envelope": report.iss_pass,
    }
