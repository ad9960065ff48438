"""Decentralized tube-based nonlinear MPC for disturbed multi-agent systems."""

from .config import ScenarioConfig, load_config
from .coordinator import build_neighbor_sets, check_feasible_configs, run_round
from .dynamics import AgentModel, Trajectory, benchmark_disturbance, benchmark_model, verify_assumptions
from .kernels import BACKEND
from .ocp import check_admissibility, evaluate_cost, shift_solution, solve_dfhocp, synthesize_terminal
from .sets import BallSet, BoxSet, EmptySet, pontryagin_diff_box_ball, tighten_input_box
from .sim import emit_csv, emit_metrics, iss_envelope_check, run_closed_loop
from .tube import TubeParams, compute_gain, compute_tube_radius, synthesize_tube, validate_rci

__version__ = "0.1.0"
