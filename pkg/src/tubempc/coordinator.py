"""Fleet topology and the sequential trajectory-exchange round.

Agents solve in ascending label order once per sampling instant. After each
solve the agent posts its predicted nominal trajectory (absolute
coordinates) to the mailbox; later agents in the same round constrain
against it. Constraints against agents that have not solved yet use their
previous-round prediction shifted by one sampling period.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .dynamics import AgentModel, Trajectory
from .ocp import (CoupledConstraint, OcpProblem, OcpSolution, OcpWeights, SolverOptions, TerminalIngredients,
                  check_admissibility, shift_solution, solve_dfhocp)
from .sets import BoxSet
from .tube import TubeParams

log = logging.getLogger(__name__)


class IsolatedAgentError(ValueError):
    pass


class ProtocolOrderError(RuntimeError):
    pass


class RoundInfeasible(RuntimeError):
    def __init__(self, agent: int, t: float, solution: Optional[OcpSolution] = None):
        self.agent = agent
        self.t = t
        self.solution = solution
        viol = f", max violation {solution.max_violation:.3g}" if solution is not None else ""
        super().__init__(f"agent {agent} infeasible at t={t:.4f}{viol}")


@dataclass(frozen=True)
class AgentSets:
    input_set: BoxSet
    error_set: BoxSet
    error_tight: BoxSet
    input_tight: BoxSet


@dataclass
class AgentSpec:
    id: int
    radius: float
    sensing_range: float
    x_init: np.ndarray
    x_des: np.ndarray
    tube: TubeParams
    sets: AgentSets
    model: Optional[AgentModel] = None
    weights: Optional[OcpWeights] = None
    terminal: Optional[TerminalIngredients] = None

    def __post_init__(self):
        self.x_init = np.asarray(self.x_init, dtype=float)
        self.x_des = np.asarray(self.x_des, dtype=float)
        if self.id < 1:
            raise ValueError(f"agent labels must be positive, got {self.id}")
        if self.radius <= 0 or self.sensing_range <= 0:
            raise ValueError(f"agent {self.id}: radius and sensing range must be positive")


def validate_fleet(specs: List[AgentSpec]) -> None:
    """Check unique labels, common dimension and ``d_i > r_i + r_j`` for all pairs."""
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate agent labels in {ids}")
    dims = {s.x_init.size for s in specs} | {s.x_des.size for s in specs}
    if len(dims) > 1:
        raise ValueError("all agents must share one state dimension")
    for a, b in itertools.permutations(specs, 2):
        if not a.sensing_range > a.radius + b.radius:
            raise ValueError(f"agent {a.id}: sensing range {a.sensing_range} does not exceed "
                             f"r_{a.id} + r_{b.id} = {a.radius + b.radius}")


@dataclass
class FleetTopology:
    neighbor_sets: Dict[int, frozenset]
    epsilon: float = 0.01

    def neighbors(self, i: int) -> list:
        return sorted(self.neighbor_sets[i])

    def pairs(self) -> list:
        """Unordered neighbour pairs ``(i, j)`` with ``i < j``, sorted."""
        out = set()
        for i, nb in self.neighbor_sets.items():
            for j in nb:
                out.add((min(i, j), max(i, j)))
        return sorted(out)


def build_neighbor_sets(specs: List[AgentSpec], epsilon: float = 0.01) -> FleetTopology:
    """Neighbours from the strict distance test ``|x_i(0) - x_j(0)| < d_i`` at t = 0."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    dims = {s.x_init.size for s in specs}
    if len(dims) > 1:
        raise ValueError("all agents must share one state dimension")
    sets = {}
    for a in specs:
        nb = frozenset(b.id for b in specs
                       if b.id != a.id and np.linalg.norm(a.x_init - b.x_init) < a.sensing_range)
        if not nb and len(specs) > 1:
            raise IsolatedAgentError(f"agent {a.id} has no neighbour within {a.sensing_range}")
        sets[a.id] = nb
    return FleetTopology(sets, epsilon)


@dataclass
class FeasibilityReport:
    feasible: bool
    violations: list


def check_feasible_configs(specs: List[AgentSpec], topology: FleetTopology) -> FeasibilityReport:
    by_id = {s.id: s for s in specs}
    bad = []
    for i, nb in sorted(topology.neighbor_sets.items()):
        for j in sorted(nb):
            dist = float(np.linalg.norm(by_id[i].x_des - by_id[j].x_des))
            if not dist < by_id[i].sensing_range:
                bad.append((i, j, dist))
    return FeasibilityReport(not bad, bad)


@dataclass
class TrajectoryMailbox:
    """Latest predicted absolute nominal trajectory per agent, with an event log.

    Events are tuples ``("write", round, agent)`` and
    ``("read", round, reader, writer, stamp)``.
    """

    entries: Dict[int, tuple] = field(default_factory=dict)
    events: list = field(default_factory=list)

    def write(self, agent: int, round_k: int, trajectory: Trajectory) -> None:
        old = self.entries.get(agent)
        if old is not None and old[0] >= round_k:
            raise ProtocolOrderError(f"agent {agent} already posted in round {old[0]}")
        self.entries[agent] = (round_k, trajectory)
        self.events.append(("write", round_k, agent))

    def read(self, reader: int, writer: int, round_k: int):
        entry = self.entries.get(writer)
        if entry is not None:
            self.events.append(("read", round_k, reader, writer, entry[0]))
        return entry

    def write_order(self, round_k: int) -> list:
        return [e[2] for e in self.events if e[0] == "write" and e[1] == round_k]


def coupled_constraints_for(agent: int, mailbox: TrajectoryMailbox, topology: FleetTopology,
                            specs: Dict[int, AgentSpec], round_k: int, t_k: float, delta: float,
                            horizon_T: float, fallback: Optional[Dict[int, np.ndarray]] = None) -> list:
    """Distance constraints against every neighbour of ``agent``.

    ``fallback`` gives the positions to hold for lower-priority neighbours
    that have never posted (the first round).
    """
    me = specs[agent]
    out = []
    for j in topology.neighbors(agent):
        other = specs[j]
        clearance = me.sensing_range - topology.epsilon - me.tube.z_tilde - other.tube.z_tilde
        if clearance < 0:
            raise ValueError(f"tubes of agents {agent} and {j} leave no room for the distance constraint")
        entry = mailbox.read(agent, j, round_k)
        if j < agent:
            if entry is None or entry[0] != round_k:
                raise ProtocolOrderError(f"agent {agent} needs agent {j}'s round-{round_k} trajectory")
            traj = entry[1]
        elif entry is not None and entry[0] == round_k - 1:
            traj = entry[1].shifted(0.0, delta, t_k + horizon_T)
        else:
            pos = other.x_init if fallback is None else fallback[j]
            traj = Trajectory(np.array([t_k, t_k + horizon_T]), np.vstack([pos, pos]))
        out.append(CoupledConstraint(traj, clearance, neighbor=j))
    return out


@dataclass
class RoundResult:
    solutions: Dict[int, OcpSolution]
    candidate_ok: Dict[int, Optional[bool]]
    cold_iterations: Dict[int, Optional[int]]
    wall_time: Dict[int, float]


def run_round(t_k: float, round_k: int, nominal_errors: Dict[int, np.ndarray], specs: Dict[int, AgentSpec],
              topology: FleetTopology, mailbox: TrajectoryMailbox, horizon_T: float, n_intervals: int,
              substeps: int = 10, previous: Optional[Dict[int, OcpSolution]] = None,
              options: Optional[SolverOptions] = None, compare_cold: bool = False) -> RoundResult:
    """One priority-ordered pass: every agent solves exactly once.

    When a previous solution exists, the shifted candidate is checked for
    admissibility against the new problem (own constraints only) and used as
    warm start. With ``compare_cold`` a second solve from zeros is run to
    record its iteration count; its result is discarded.
    """
    delta = horizon_T / n_intervals
    previous = previous or {}
    fallback = {i: nominal_errors[i] + specs[i].x_des for i in specs}
    result = RoundResult({}, {}, {}, {})
    for i in sorted(specs):
        sp = specs[i]
        coupled = coupled_constraints_for(i, mailbox, topology, specs, round_k, t_k, delta, horizon_T, fallback)
        problem = OcpProblem(model=sp.model, x_des=sp.x_des, horizon_T=horizon_T, n_intervals=n_intervals,
                             weights=sp.weights, state_box=sp.sets.error_tight, input_box=sp.sets.input_tight,
                             terminal=sp.terminal, initial_error=nominal_errors[i], coupled_constraints=coupled,
                             t0=t_k, substeps=substeps)
        warm = None
        ok = None
        if i in previous and previous[i].feasible:
            warm = shift_solution(previous[i], sp.terminal, delta)
            own = OcpProblem(model=sp.model, x_des=sp.x_des, horizon_T=horizon_T, n_intervals=n_intervals,
                             weights=sp.weights, state_box=sp.sets.error_tight, input_box=sp.sets.input_tight,
                             terminal=sp.terminal, initial_error=nominal_errors[i], t0=t_k, substeps=substeps)
            rep = check_admissibility(own, warm)
            ok = rep.ok
            if not ok:
                log.info("t=%.2f agent %d: shifted candidate not admissible %s", t_k, i, rep.margins)
        tic = time.perf_counter()
        sol = solve_dfhocp(problem, warm_start=warm, options=options)
        result.wall_time[i] = time.perf_counter() - tic
        if sol.status == "infeasible":
            raise RoundInfeasible(i, t_k, sol)
        cold = None
        if compare_cold and warm is not None:
            cold = solve_dfhocp(problem, warm_start=None, options=options).inner_iterations
        absolute = Trajectory(sol.predicted.times, sol.predicted.states + sp.x_des)
        mailbox.write(i, round_k, absolute)
        result.solutions[i] = sol
        result.candidate_ok[i] = ok
        result.cold_iterations[i] = cold
        log.debug("t=%.2f agent %d: %s cost=%.6g iters=%d", t_k, i, sol.status, sol.cost, sol.inner_iterations)
    return result
