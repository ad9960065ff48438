"""Per-agent finite-horizon optimal control problem.

Direct single shooting with piecewise-constant controls. Input bounds are
handled by projection (L-BFGS-B bounds); state-box, terminal-level and
inter-agent distance constraints by an augmented-Lagrangian outer loop.
Gradients are central differences computed inside the shooting kernel.

Input costs are measured from the equilibrium input ``u_eq`` that holds the
nominal system at its target (``f(x_des, u_eq) = 0``); with ``u_eq = 0`` this
is the plain ``u' R u`` penalty.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

from . import kernels
from .dynamics import AgentModel, Trajectory, integrate_rk4
from .sets import BoxSet

log = logging.getLogger(__name__)


class StabilizabilityError(RuntimeError):
    pass


class TerminalSetDegenerate(RuntimeError):
    pass


class SolverDiverged(RuntimeError):
    pass


def _sym(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class OcpWeights:
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        Q, R, P = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (self.Q, self.R, self.P))
        for name, M, strict in (("Q", Q, False), ("R", R, True), ("P", P, True)):
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be square and symmetric")
            lam = np.linalg.eigvalsh(M)[0]
            if (strict and lam <= 0) or (not strict and lam < -1e-12):
                kind = "positive definite" if strict else "positive semi-definite"
                raise ValueError(f"{name} must be {kind} (min eigenvalue {lam:.3g})")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)


@dataclass(frozen=True)
class TerminalIngredients:
    """Terminal penalty ``e' P e``, level ``eta`` and local law ``u_eq + K_loc e``."""

    P: np.ndarray
    eta: float
    K_loc: np.ndarray
    u_eq: np.ndarray
    conditions_hold: bool = True

    def local_law(self, e_bar, input_box: Optional[BoxSet] = None) -> np.ndarray:
        u = self.u_eq + self.K_loc @ np.asarray(e_bar, dtype=float)
        return input_box.project(u) if input_box is not None else u

    def value(self, e_bar) -> float:
        e = np.asarray(e_bar, dtype=float)
        return float(e @ self.P @ e)


# --------------------------------------------------------------------------
# terminal ingredients

def equilibrium_input(model: AgentModel, x_des, u0=None, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
    """Solve ``f(x_des, u) = 0`` for ``u`` by Newton's method on the control Jacobian."""
    x = np.asarray(x_des, dtype=float)
    u = np.zeros(model.input_set.dim) if u0 is None else np.array(u0, dtype=float)
    for _ in range(max_iter):
        r = model.eval(x, u)
        if np.linalg.norm(r) < tol:
            break
        u = u - np.linalg.solve(model.control_jacobian(x, u), r)
    r = model.eval(x, u)
    if np.linalg.norm(r) > 1e-9:
        raise RuntimeError(f"no equilibrium input found at {x.tolist()} (residual {np.linalg.norm(r):.3g})")
    return u


def linearize(model: AgentModel, x, u, step: float = 1e-6):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = x.size, u.size
    A = np.empty((n, n))
    B = np.empty((n, m))
    for j in range(n):
        d = np.zeros(n)
        d[j] = step
        A[:, j] = (model.eval(x + d, u) - model.eval(x - d, u)) / (2 * step)
    for j in range(m):
        d = np.zeros(m)
        d[j] = step
        B[:, j] = (model.eval(x, u + d) - model.eval(x, u - d)) / (2 * step)
    return A, B


def _level_set_samples(P, eta, n_dirs, rng, shells=(1.0, 0.75, 0.5, 0.25)):
    n = P.shape[0]
    d = rng.standard_normal((n_dirs, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    if n == 1:
        d = np.array([[1.0], [-1.0]])
    # e = sqrt(eta) L^{-T} d gives e' P e = eta for P = L L'
    Lc = np.linalg.cholesky(P)
    base = np.sqrt(eta) * linalg.solve_triangular(Lc.T, d.T, lower=False).T
    return np.vstack([r * base for r in shells])


def check_terminal_conditions(model: AgentModel, x_des, term: TerminalIngredients, Q, R, input_box: BoxSet,
                              n_samples: int = 1000, seed: int = 0, eta: Optional[float] = None,
                              tol: float = 1e-8):
    """Sample the two local-controller conditions on the terminal level set.

    Returns ``(input_ok, decrease_ok, worst_input_excess, worst_decrease)``.
    """
    eta = term.eta if eta is None else eta
    rng = np.random.default_rng(seed)
    E = _level_set_samples(term.P, eta, n_samples, rng)
    U = term.u_eq[None, :] + E @ term.K_loc.T
    excess = np.maximum(input_box.lower - U, 0.0) + np.maximum(U - input_box.upper, 0.0)
    worst_in = float(excess.max())
    F = model.eval(E + np.asarray(x_des, dtype=float), U)
    dU = U - term.u_eq
    dec = (2.0 * np.einsum("bi,ij,bj->b", E, term.P, F) + np.einsum("bi,ij,bj->b", E, Q, E)
           + np.einsum("bi,ij,bj->b", dU, R, dU))
    worst_dec = float(dec.max())
    return worst_in <= tol, worst_dec <= tol, worst_in, worst_dec


def synthesize_terminal(model: AgentModel, x_des, Q, R, input_box: BoxSet, P=None, eta=None,
                        margin: float = 0.0, eta0: float = 1.0, n_bisect: int = 40, n_samples: int = 1000,
                        seed: int = 0) -> TerminalIngredients:
    """LQR-based terminal ingredients at the target ``x_des``.

    Linearises at ``(x_des, u_eq)``, solves the continuous-time Riccati
    equation for ``(A, B, Q + margin I, R)`` and takes ``K_loc = -R^{-1} B' P``.
    ``P`` and ``eta`` may be supplied instead of synthesised; a supplied pair
    that fails the sampled conditions is kept with a warning. Without ``eta``
    the largest level passing both conditions is found by bisection.
    """
    x_des = np.asarray(x_des, dtype=float)
    Q = _sym(Q)
    R = _sym(R)
    u_eq = equilibrium_input(model, x_des)
    A, B = linearize(model, x_des, u_eq)
    try:
        P_lqr = linalg.solve_continuous_are(A, B, Q + margin * np.eye(Q.shape[0]), R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise StabilizabilityError(f"Riccati equation has no stabilising solution at {x_des.tolist()}: {exc}")
    K = -np.linalg.solve(R, B.T @ P_lqr)
    if not np.all(np.isfinite(P_lqr)) or np.max(np.linalg.eigvals(A + B @ K).real) >= 0:
        raise StabilizabilityError(f"linearisation at {x_des.tolist()} is not stabilisable")
    P_use = P_lqr if P is None else _sym(P)

    def passes(level):
        t = TerminalIngredients(P_use, level, K, u_eq)
        c1, c2, _, _ = check_terminal_conditions(model, x_des, t, Q, R, input_box, n_samples, seed)
        return c1 and c2

    if eta is not None:
        ok = passes(float(eta))
        if not ok:
            log.warning("supplied terminal ingredients fail the sampled local-controller conditions "
                        "at x_des=%s (eta=%g)", x_des.tolist(), eta)
        return TerminalIngredients(P_use, float(eta), K, u_eq, conditions_hold=ok)

    lo, hi = 0.0, float(eta0)
    if passes(hi):
        lo = hi
        for _ in range(60):
            hi = 2.0 * lo
            if not passes(hi):
                break
            lo = hi
        else:
            return TerminalIngredients(P_use, lo, K, u_eq)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    if lo < 1e-8:
        raise TerminalSetDegenerate(f"terminal level collapsed below 1e-8 at x_des={x_des.tolist()}")
    return TerminalIngredients(P_use, lo, K, u_eq)


# --------------------------------------------------------------------------
# problem and solution

@dataclass
class CoupledConstraint:
    """Keep the own nominal position within ``clearance`` of a neighbour's
    predicted absolute trajectory."""

    trajectory: Trajectory
    clearance: float
    neighbor: int = -1


@dataclass
class OcpProblem:
    model: AgentModel
    x_des: np.ndarray
    horizon_T: float
    n_intervals: int
    weights: OcpWeights
    state_box: BoxSet
    input_box: BoxSet
    terminal: TerminalIngredients
    initial_error: np.ndarray
    coupled_constraints: list = field(default_factory=list)
    t0: float = 0.0
    substeps: int = 10

    def __post_init__(self):
        self.x_des = np.asarray(self.x_des, dtype=float)
        self.initial_error = np.asarray(self.initial_error, dtype=float)
        if not np.all(np.isfinite(self.initial_error)):
            raise ValueError("initial error must be finite")
        if self.n_intervals < 1 or self.horizon_T <= 0:
            raise ValueError("horizon and interval count must be positive")

    @property
    def delta(self) -> float:
        return self.horizon_T / self.n_intervals

    @property
    def h(self) -> float:
        return self.delta / self.substeps

    @property
    def n_controls(self) -> int:
        return self.input_box.dim

    @property
    def fine_times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_intervals * self.substeps + 1)

    def constraint_knots(self) -> np.ndarray:
        """Fine-grid indices of the shooting knots and interval midpoints."""
        total = self.n_intervals * self.substeps
        return np.unique(np.round(np.linspace(0, total, 2 * self.n_intervals + 1)).astype(np.int64))

    def shooting_data(self, unconstrained: bool = False) -> kernels.ShootingData:
        cidx = self.constraint_knots()
        n = self.model.state_dim
        if unconstrained:
            lo, hi, eta = -np.inf * np.ones(n), np.inf * np.ones(n), np.inf
            nb, clear2 = np.zeros((0, cidx.size, n)), np.zeros(0)
        else:
            lo, hi, eta = self.state_box.lower, self.state_box.upper, self.terminal.eta
            times = self.fine_times[cidx]
            nb = np.array([c.trajectory.sample(times) for c in self.coupled_constraints]).reshape(-1, cidx.size, n)
            clear2 = np.array([c.clearance ** 2 for c in self.coupled_constraints])
        return kernels.ShootingData(
            e0=self.initial_error, x_des=self.x_des, u_ref=self.terminal.u_eq, h=self.h,
            substeps=self.substeps, N=self.n_intervals, m=self.n_controls,
            Q=self.weights.Q, R=self.weights.R, P=self.weights.P, eta=eta, cidx=cidx,
            lo=lo, hi=hi, nb=nb, clear2=clear2)


@dataclass
class OcpSolution:
    controls: np.ndarray
    predicted: Trajectory
    cost: float
    status: str
    kkt_residual: float
    max_violation: float = 0.0
    inner_iterations: int = 0
    outer_iterations: int = 0
    problem: Optional[OcpProblem] = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"


@dataclass
class SolverOptions:
    fd_step: float = 1e-6
    kkt_tol: float = 1e-6
    max_inner: int = 200
    max_outer: int = 8
    mu0: float = 1.0
    mu_growth: float = 10.0
    infeasible_tol: float = 1e-4
    backend: Optional[str] = None


def evaluate_cost(problem: OcpProblem, controls, backend: Optional[str] = None):
    """Cost of a control sequence and the predicted nominal error trajectory."""
    controls = np.asarray(controls, dtype=float).reshape(problem.n_intervals, problem.n_controls)
    if not np.all(np.isfinite(controls)):
        raise ValueError("controls must be finite")
    states, running = kernels.rollout(problem.model, problem.initial_error, problem.x_des, problem.terminal.u_eq,
                                      controls, problem.h, problem.substeps, problem.weights.Q,
                                      problem.weights.R, backend=backend)
    if not np.all(np.isfinite(states)) or not np.isfinite(running):
        log.warning("rollout diverged; cost set to inf")
        return np.inf, None
    eN = states[-1]
    cost = float(running + eN @ problem.weights.P @ eN)
    inputs = np.repeat(controls, problem.substeps, axis=0)
    return cost, Trajectory(problem.fine_times, states, inputs)


def objective_gradient(problem: OcpProblem, controls, fd_step: float = 1e-6, backend: Optional[str] = None):
    """Cost and its gradient with every constraint switched off."""
    data = problem.shooting_data(unconstrained=True)
    lam = np.zeros(data.n_constraints)
    return kernels.merit_grad(problem.model, np.ravel(controls), data, lam, 1.0, fd_step, backend=backend)


def solve_dfhocp(problem: OcpProblem, warm_start=None, options: Optional[SolverOptions] = None) -> OcpSolution:
    """Solve the nominal finite-horizon problem from ``problem.initial_error``."""
    opt = options or SolverOptions()
    N, m = problem.n_intervals, problem.n_controls
    lo_u = np.tile(problem.input_box.lower, N)
    hi_u = np.tile(problem.input_box.upper, N)
    if warm_start is None:
        u = np.zeros(N * m)
    else:
        u = np.asarray(warm_start, dtype=float).reshape(-1).copy()
    u = np.clip(u, lo_u, hi_u)
    data = problem.shooting_data()
    lam = np.zeros(data.n_constraints)
    mu = opt.mu0
    model = problem.model

    v0, _, _ = kernels.merit(model, u, data, lam, mu, backend=opt.backend)
    if not np.isfinite(v0):
        raise SolverDiverged(f"non-finite objective at the initial guess (t={problem.t0:.3f})")

    def fun(x, lam_, mu_):
        val, grad = kernels.merit_grad(model, x, data, lam_, mu_, opt.fd_step, backend=opt.backend)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            return 1e30, np.zeros_like(x)
        return val, grad

    inner = 0
    outer = 0
    prev_viol = np.inf
    kkt = np.inf
    viol = np.inf
    for outer in range(1, opt.max_outer + 1):
        res = minimize(fun, u, args=(lam, mu), jac=True, method="L-BFGS-B",
                       bounds=list(zip(lo_u, hi_u)),
                       options={"maxiter": opt.max_inner, "gtol": 0.1 * opt.kkt_tol, "ftol": 1e-15,
                                "maxcor": 20})
        inner += int(res.nit)
        u = np.clip(res.x, lo_u, hi_u)
        _, grad = fun(u, lam, mu)
        _, _, g = kernels.merit(model, u, data, lam, mu, backend=opt.backend)
        lam_new = np.maximum(0.0, lam + mu * g)
        viol = float(max(0.0, g.max()))
        stat = float(np.max(np.abs(u - np.clip(u - grad, lo_u, hi_u))))
        comp = float(np.max(np.abs(lam_new * g))) if g.size else 0.0
        kkt = max(stat, viol, comp)
        lam = lam_new
        if kkt < opt.kkt_tol:
            break
        if viol > 0.25 * prev_viol or viol > opt.kkt_tol:
            mu *= opt.mu_growth
        prev_viol = viol

    cost, predicted = evaluate_cost(problem, u, backend=opt.backend)
    if predicted is None:
        raise SolverDiverged(f"prediction diverged at the solution (t={problem.t0:.3f})")
    if viol > opt.infeasible_tol:
        status = "infeasible"
    elif kkt < opt.kkt_tol:
        status = "optimal"
    else:
        status = "feasible_suboptimal"
    return OcpSolution(controls=u.reshape(N, m), predicted=predicted, cost=cost, status=status,
                       kkt_residual=kkt, max_violation=viol, inner_iterations=inner,
                       outer_iterations=outer, problem=problem)


def shift_solution(previous: OcpSolution, terminal: TerminalIngredients, delta: float) -> np.ndarray:
    """Warm start for the next sampling instant.

    Drops the first ``delta`` seconds of the previous controls and appends the
    local law evaluated along its continuation from the predicted terminal
    state (held constant per interval, projected onto the input box).
    """
    if not previous.feasible:
        raise ValueError("cannot shift an infeasible solution")
    prob = previous.problem
    N = previous.controls.shape[0]
    step = prob.delta if prob is not None else delta
    k = int(round(delta / step))
    k = min(max(k, 0), N)
    head = previous.controls[k:]
    if k == 0:
        return previous.controls.copy()
    tail = []
    e = previous.predicted.final.copy()
    for _ in range(k):
        u = terminal.local_law(e, prob.input_box if prob is not None else None)
        tail.append(u)
        if prob is not None:
            field_ = lambda t, x, u=u: prob.model.eval(x + prob.x_des, u)
            e = integrate_rk4(field_, e, 0.0, prob.h, prob.substeps).final
    return np.vstack([head, np.array(tail)]) if head.size else np.array(tail)


@dataclass
class AdmissibilityReport:
    conditions: dict
    margins: dict

    @property
    def ok(self) -> bool:
        return all(self.conditions.values())


def check_admissibility(problem: OcpProblem, solution, tol_input: float = 1e-9, tol_state: float = 1e-6,
                        tol_terminal: float = 1e-6) -> AdmissibilityReport:
    """Re-verify the four admissibility conditions with an independent rollout.

    ``solution`` may be an :class:`OcpSolution` or a bare control sequence.
    The nominal error is re-integrated with the generic RK4 routine at twice
    the shooting resolution. Margins are worst constraint values (positive
    means violated).
    """
    controls = solution.controls if isinstance(solution, OcpSolution) else np.asarray(solution, dtype=float)
    controls = controls.reshape(problem.n_intervals, problem.n_controls)
    finite = bool(np.all(np.isfinite(controls)))
    ib = problem.input_box
    in_margin = float(np.max(np.concatenate([(ib.lower - controls).ravel(), (controls - ib.upper).ravel()])))

    sub = 2 * problem.substeps
    h = problem.delta / sub
    e = problem.initial_error.copy()
    states = [e]
    for i in range(problem.n_intervals):
        u = controls[i]
        traj = integrate_rk4(lambda t, x, u=u: problem.model.eval(x + problem.x_des, u), e, 0.0, h, sub)
        states.extend(traj.states[1:])
        e = traj.final
    states = np.array(states)
    sb = problem.state_box
    st_margin = float(np.max(np.concatenate([(sb.lower - states).ravel(), (states - sb.upper).ravel()])))
    term_margin = problem.terminal.value(states[-1]) - problem.terminal.eta
    conditions = {
        "piecewise_continuous": finite,
        "inputs_in_tightened_set": finite and in_margin <= tol_input,
        "states_in_tightened_set": bool(np.all(np.isfinite(states))) and st_margin <= tol_state,
        "terminal_in_terminal_set": bool(np.isfinite(term_margin)) and term_margin <= tol_terminal,
    }
    margins = {"input": in_margin, "state": st_margin, "terminal": float(term_margin)}
    return AdmissibilityReport(conditions, margins)
