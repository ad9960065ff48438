"""Scenario configuration (YAML).

Schema
------
Top level keys::

    name: str
    seed: int                    # random disturbance seed (default 0)
    delta: float                 # sampling period
    horizon_T: float             # prediction horizon, a multiple of delta
    total_time: float            # run length, a multiple of delta
    integrator_substeps: int     # RK4 steps per sampling period (default 10)
    epsilon: float               # distance-constraint margin
    workspace: {lower: [...], upper: [...]}
    disturbance: {type: benchmark | zero | random, bound: float, hold: float}
    solver: {kkt_tol, max_inner, max_outer, fd_step, infeasible_tol, mu0, mu_growth}
    iss: {transient: float, slack: float}
    defaults: {...}              # agent keys shared by every agent
    agents: [{id: 1, ...}, ...]

Agent keys (each may come from ``defaults``)::

    dynamics: benchmark | integrator | linear   (linear takes ``a`` and ``b``)
    lipschitz_L, jac_lower_bound, w_tilde, rho, k_lower
    radius, sensing_range
    input_set: {lower, upper}
    error_set: {lower, upper}    # optional, default workspace shifted by -x_des
    Q, R: matrices
    P: matrix | "riccati"
    eta: float | "auto"
    riccati_margin: float        # only for P = riccati
    x_init, x_des: vectors
"""

from __future__ import annotations

import copy
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from .coordinator import AgentSets, AgentSpec, FleetTopology, build_neighbor_sets, validate_fleet
from .dynamics import (AgentModel, DisturbanceSignal, benchmark_disturbance, benchmark_model, integrator_model,
                       linear_model, random_disturbance, zero_disturbance)
from .ocp import OcpWeights, SolverOptions, synthesize_terminal
from .sets import BoxSet, EmptySet, pontryagin_diff_box_ball, tighten_input_box, translate_box
from .tube import synthesize_tube

log = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str
    agents: List[AgentSpec]
    workspace: BoxSet
    epsilon: float
    delta: float
    horizon_T: float
    total_time: float
    integrator_substeps: int
    solver: SolverOptions
    disturbance: DisturbanceSignal
    seed: int = 0
    iss_transient: float = 1.0
    iss_slack: float = 0.05
    topology: Optional[FleetTopology] = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_intervals(self) -> int:
        return int(round(self.horizon_T / self.delta))

    @property
    def n_rounds(self) -> int:
        return int(round(self.total_time / self.delta))

    def agent(self, i: int) -> AgentSpec:
        for a in self.agents:
            if a.id == i:
                return a
        raise KeyError(i)


def _box(d, where) -> BoxSet:
    try:
        return BoxSet(d["lower"], d["upper"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: invalid box ({exc})")


def _multiple(value, step, where):
    r = value / step
    if value <= 0 or abs(r - round(r)) > 1e-9:
        raise ConfigError(f"{where}={value} is not a positive multiple of delta={step}")


def _model(block, where) -> AgentModel:
    kind = block.get("dynamics", "benchmark")
    if kind == "benchmark":
        model = benchmark_model()
    elif kind == "integrator":
        model = integrator_model(len(block["x_init"]))
    elif kind == "linear":
        model = linear_model(float(block["a"]), float(block.get("b", 1.0)))
    else:
        raise ConfigError(f"{where}.dynamics: unknown model {kind!r}")
    changes = {}
    if "lipschitz_L" in block:
        changes["lipschitz_L"] = float(block["lipschitz_L"])
    if "jac_lower_bound" in block:
        changes["jac_lower_bound"] = float(block["jac_lower_bound"])
    if changes:
        model = dataclasses.replace(model, **changes)
    return model


def _disturbance(block, dim, seed) -> DisturbanceSignal:
    kind = block.get("type", "benchmark")
    if kind == "benchmark":
        return benchmark_disturbance()
    if kind == "zero":
        return zero_disturbance(dim)
    if kind == "random":
        return random_disturbance(float(block["bound"]), dim, seed, float(block.get("hold", 0.05)))
    raise ConfigError(f"disturbance.type: unknown signal {kind!r}")


def build_config(raw: dict, source: str = "<dict>") -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    try:
        delta = float(raw["delta"])
        horizon = float(raw.get("horizon_T", 0.5))
        total = float(raw["total_time"])
        workspace = _box(raw["workspace"], "workspace")
        agent_blocks = raw["agents"]
    except KeyError as exc:
        raise ConfigError(f"{source}: missing required key {exc}")
    _multiple(horizon, delta, "horizon_T")
    _multiple(total, delta, "total_time")
    substeps = int(raw.get("integrator_substeps", 10))
    if substeps < 1:
        raise ConfigError("integrator_substeps must be at least 1")
    epsilon = float(raw.get("epsilon", 0.01))
    seed = int(raw.get("seed", 0))
    solver = SolverOptions(**{k: (int(v) if k.startswith("max") else float(v))
                              for k, v in (raw.get("solver") or {}).items()})
    defaults = raw.get("defaults") or {}
    if not agent_blocks:
        raise ConfigError("agents: at least one agent is required")
    dim = len((agent_blocks[0].get("x_init") or defaults.get("x_init")))
    disturbance = _disturbance(raw.get("disturbance") or {}, dim, seed)

    specs = []
    for idx, block in enumerate(agent_blocks):
        b = {**defaults, **block}
        where = f"agents[{idx}]"
        try:
            aid = int(b["id"])
            x_init = np.asarray(b["x_init"], dtype=float)
            x_des = np.asarray(b["x_des"], dtype=float)
            input_set = _box(b["input_set"], f"{where}.input_set")
            w_tilde = float(b.get("w_tilde", disturbance.bound))
        except KeyError as exc:
            raise ConfigError(f"{where}: missing key {exc}")
        model = _model(b, where).with_sets(input_set=input_set, workspace=workspace)
        tube = synthesize_tube(model, w_tilde, float(b.get("rho", 1.0)), float(b.get("k_lower", 1.0)))
        error_set = (_box(b["error_set"], f"{where}.error_set") if "error_set" in b
                     else translate_box(workspace, -x_des))
        error_tight = pontryagin_diff_box_ball(error_set, tube.z_tilde)
        if isinstance(error_tight, EmptySet):
            raise ConfigError(f"{where}: tube too large for the error set")
        input_tight = tighten_input_box(input_set, tube.k_gain, tube.z_tilde)
        if isinstance(input_tight, EmptySet):
            raise ConfigError(f"{where}: tube too large for input set (k*z_tilde = "
                              f"{tube.k_gain * tube.z_tilde:.4g})")
        n = x_init.size
        Q = np.asarray(b.get("Q", np.eye(n)), dtype=float)
        R = np.asarray(b.get("R", np.eye(n)), dtype=float)
        P_raw = b.get("P", "riccati")
        eta_raw = b.get("eta", "auto")
        P = None if (isinstance(P_raw, str) and P_raw == "riccati") else np.asarray(P_raw, dtype=float)
        eta = None if (isinstance(eta_raw, str) and eta_raw == "auto") else float(eta_raw)
        terminal = synthesize_terminal(model, x_des, Q, R, input_tight, P=P, eta=eta,
                                       margin=float(b.get("riccati_margin", 0.1)))
        try:
            weights = OcpWeights(Q, R, terminal.P)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}")
        specs.append(AgentSpec(id=aid, radius=float(b.get("radius", 1.0)),
                               sensing_range=float(b.get("sensing_range", 5.0)), x_init=x_init, x_des=x_des,
                               tube=tube, sets=AgentSets(input_set, error_set, error_tight, input_tight),
                               model=model, weights=weights, terminal=terminal))
        log.info("agent %d: k=%.6g z_tilde=%.6g E_bar=%s U_bar=%s eta=%.6g", aid, tube.k_gain, tube.z_tilde,
                 error_tight, input_tight, terminal.eta)
    if len(specs) > 1:
        validate_fleet(specs)
    topology = build_neighbor_sets(specs, epsilon)
    iss = raw.get("iss") or {}
    return ScenarioConfig(name=str(raw.get("name", Path(source).stem)), agents=specs, workspace=workspace,
                          epsilon=epsilon, delta=delta, horizon_T=horizon, total_time=total,
                          integrator_substeps=substeps, solver=solver, disturbance=disturbance, seed=seed,
                          iss_transient=float(iss.get("transient", 1.0)), iss_slack=float(iss.get("slack", 0.05)),
                          topology=topology, raw=raw)


def load_raw(path) -> dict:
    path = resolve_config_path(path)
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: parse error: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def resolve_config_path(path) -> Path:
    """Accept a file path or the name of a bundled scenario."""
    p = Path(path)
    if p.exists():
        return p
    bundled = SCENARIO_DIR / f"{path}.yaml"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no config at {path}")


def load_config(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    raw = load_raw(path)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(raw, str(path))
