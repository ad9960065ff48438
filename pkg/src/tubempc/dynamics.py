"""Agent dynamics, disturbance signals and the fixed-step integrator.

Model right-hand sides are written with ``x[..., j]`` indexing so that one call
can evaluate a whole batch of states at once. The pure-Python shooting kernel
relies on this to run all finite-difference perturbations together.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .sets import BoxSet


class IntegrationDiverged(RuntimeError):
    def __init__(self, t: float, message: str = ""):
        self.t = float(t)
        super().__init__(message or f"non-finite state encountered at t={t:.6g}")


class AssumptionViolation(ValueError):
    def __init__(self, assumption: str, witness, value: float, bound: float):
        self.assumption = assumption
        self.witness = witness
        self.value = value
        self.bound = bound
        super().__init__(f"{assumption} violated: value {value:.6g} vs bound {bound:.6g} at {witness}")


# Kernel codes understood by the compiled shooting core. Anything else goes
# through the generic vectorised path.
KERNEL_BENCHMARK = 1
KERNEL_INTEGRATOR = 2


@dataclass(frozen=True)
class AgentModel:
    """Dynamics ``f(x, u)`` of one agent together with its certified constants.

    ``lipschitz_L`` and ``jac_lower_bound`` are supplied by whoever writes the
    model; :func:`verify_assumptions` cross-checks them by sampling.
    """

    state_dim: int
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    control_jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_L: float
    jac_lower_bound: float
    input_set: BoxSet
    workspace: BoxSet
    name: str = "custom"
    kernel_code: Optional[int] = None

    def __call__(self, x, u):
        return self.eval(x, u)

    def with_sets(self, input_set: BoxSet | None = None, workspace: BoxSet | None = None) -> "AgentModel":
        from dataclasses import replace

        return replace(
            self,
            input_set=input_set if input_set is not None else self.input_set,
            workspace=workspace if workspace is not None else self.workspace,
        )


def _benchmark_f(x, u):
    x1 = x[..., 0]
    x2 = x[..., 1]
    u1 = u[..., 0]
    u2 = u[..., 1]
    ex = np.exp(-x2)
    q = 0.25 * x1 * x1
    f1 = (0.1 - 0.1 * ex) / (1.0 + ex) + q + 2.0 * u1
    f2 = q + u2 + 0.1 * u2 * u2 * u2
    return np.stack((f1, f2), axis=-1)


def _benchmark_jac(x, u):
    u = np.asarray(u, dtype=float)
    u2 = u[..., 1]
    out = np.zeros(u.shape[:-1] + (2, 2))
    out[..., 0, 0] = 2.0
    out[..., 1, 1] = 1.0 + 0.3 * u2 * u2
    return out


def benchmark_model() -> AgentModel:
    """Two-state non-affine benchmark agent.

    ``f1 = (0.1 - 0.1 e^{-x2}) / (1 + e^{-x2}) + 0.25 x1^2 + 2 u1``,
    ``f2 = 0.25 x1^2 + u2 + 0.1 u2^3``, with ``L = 2.5`` and ``J_lower = 1``
    on the workspace ``[-5, 5]^2`` and inputs ``[-2.125, 2.125]^2``.
    """
    return AgentModel(
        state_dim=2,
        eval=_benchmark_f,
        control_jacobian=_benchmark_jac,
        lipschitz_L=2.5,
        jac_lower_bound=1.0,
        input_set=BoxSet.symmetric(2.125, 2),
        workspace=BoxSet.symmetric(5.0, 2),
        name="benchmark",
        kernel_code=KERNEL_BENCHMARK,
    )


def integrator_model(dim: int = 1, lipschitz_L: float = 1.0, input_bound: float = 10.0,
                     workspace_bound: float = 10.0) -> AgentModel:
    """Single integrator ``x' = u``; ``J = I`` so ``J_lower = 1`` exactly."""

    def f(x, u):
        return np.asarray(u, dtype=float) + 0.0 * np.asarray(x, dtype=float)

    def jac(x, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(np.eye(dim), u.shape[:-1] + (dim, dim)).copy()

    return AgentModel(
        state_dim=dim,
        eval=f,
        control_jacobian=jac,
        lipschitz_L=lipschitz_L,
        jac_lower_bound=1.0,
        input_set=BoxSet.symmetric(input_bound, dim),
        workspace=BoxSet.symmetric(workspace_bound, dim),
        name="integrator",
        kernel_code=KERNEL_INTEGRATOR,
    )


def linear_model(a: float, b: float = 1.0, input_bound: float = 10.0, workspace_bound: float = 100.0) -> AgentModel:
    """Scalar ``x' = a x + b u``. With ``a > 0`` the Lipschitz constant ``|a|`` is tight."""

    def f(x, u):
        return a * np.asarray(x, dtype=float) + b * np.asarray(u, dtype=float)

    def jac(x, u):
        u = np.asarray(u, dtype=float)
        return np.full(u.shape[:-1] + (1, 1), float(b))

    return AgentModel(
        state_dim=1,
        eval=f,
        control_jacobian=jac,
        lipschitz_L=max(abs(a), 1e-12),
        jac_lower_bound=float(b),
        input_set=BoxSet.symmetric(input_bound, 1),
        workspace=BoxSet.symmetric(workspace_bound, 1),
        name="linear",
    )


MODEL_FACTORIES = {
    "benchmark": benchmark_model,
    "integrator": integrator_model,
    "linear": linear_model,
}


def finite_difference_control_jacobian(model: AgentModel, x, u, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    m = u.size
    cols = []
    for j in range(m):
        du = np.zeros(m)
        du[j] = step
        cols.append((model.eval(x, u + du) - model.eval(x, u - du)) / (2 * step))
    return np.stack(cols, axis=-1)


# --------------------------------------------------------------------------
# disturbances

@dataclass(frozen=True)
class DisturbanceSignal:
    """Deterministic disturbance ``w(t)`` with a claimed sup-norm bound."""

    eval: Callable[[float], np.ndarray]
    bound: float
    dim: int
    name: str = "custom"

    def __call__(self, t):
        return self.eval(t)

    def observed_max(self, times) -> float:
        return float(max(np.linalg.norm(self.eval(t)) for t in times))


def benchmark_disturbance() -> DisturbanceSignal:
    """``w(t) = (0.3 cos t, 0.2 sin 2t)`` with claimed bound 0.3.

    Note the norm actually peaks at 0.3125 (near ``cos^2 t = 25/32``); the
    claimed bound is kept because the tube radius is synthesised from it.
    """

    def w(t):
        return np.array([0.3 * np.cos(t), 0.2 * np.sin(2.0 * t)])

    return DisturbanceSignal(eval=w, bound=0.3, dim=2, name="benchmark")


def zero_disturbance(dim: int) -> DisturbanceSignal:
    z = np.zeros(dim)
    return DisturbanceSignal(eval=lambda t: z.copy(), bound=0.0, dim=dim, name="zero")


def random_disturbance(bound: float, dim: int, seed: int, hold: float = 0.05) -> DisturbanceSignal:
    """Piecewise-constant disturbance drawn uniformly from the ball of radius ``bound``.

    The value on ``[k*hold, (k+1)*hold)`` depends only on ``(seed, k)``, so the
    signal is a pure function of ``t``.
    """
    cache: dict[int, np.ndarray] = {}

    def draw(k: int) -> np.ndarray:
        v = cache.get(k)
        if v is None:
            rng = np.random.default_rng([seed, k])
            d = rng.standard_normal(dim)
            d /= max(np.linalg.norm(d), 1e-300)
            v = bound * rng.uniform() ** (1.0 / dim) * d
            cache[k] = v
        return v

    def w(t):
        return draw(int(np.floor(t / hold + 1e-12))).copy()

    return DisturbanceSignal(eval=w, bound=float(bound), dim=dim, name="random")


# --------------------------------------------------------------------------
# trajectories and integration

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.states) != len(self.times):
            raise ValueError(f"{len(self.states)} states for {len(self.times)} times")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.inputs is not None:
            self.inputs = np.asarray(self.inputs, dtype=float)
            if len(self.inputs) != len(self.times) - 1:
                raise ValueError(f"{len(self.inputs)} inputs for {len(self.times)} times")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def sample(self, t) -> np.ndarray:
        """Linear interpolation, holding the end states outside the time span."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        cols = [np.interp(t, self.times, self.states[:, j]) for j in range(self.states.shape[1])]
        return np.stack(cols, axis=-1)

    def shifted(self, offset, delta: float, hold_until: float) -> "Trajectory":
        """Add ``offset`` to every state, drop the first ``delta`` seconds and
        hold the last state so the trajectory again reaches ``hold_until``."""
        t0 = self.times[0] + delta
        keep = self.times > t0 + 1e-12
        times = np.concatenate([[t0], self.times[keep]])
        states = np.vstack([self.sample(t0), self.states[keep]]) + offset
        if hold_until > times[-1] + 1e-12:
            dt = np.median(np.diff(self.times)) if len(self.times) > 1 else (hold_until - times[-1])
            extra = np.arange(times[-1] + dt, hold_until - 1e-9, dt)
            extra = np.append(extra, hold_until)
            times = np.concatenate([times, extra])
            states = np.vstack([states, np.repeat(states[-1][None, :], extra.size, axis=0)])
        return Trajectory(times, states)


def rk4_step(field, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = field(t, x)
    k2 = field(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = field(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = field(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(field, x0, t0: float, dt: float, n_steps: int) -> Trajectory:
    """Classical fixed-step RK4 for ``x' = field(t, x)``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.array(x0, dtype=float).reshape(-1)
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    for k in range(n_steps):
        t = t0 + k * dt
        x = rk4_step(field, t, x, dt)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(t + dt)
        states[k + 1] = x
    times = t0 + dt * np.arange(n_steps + 1)
    return Trajectory(times, states)


# --------------------------------------------------------------------------
# assumption checks

@dataclass
class AssumptionReport:
    min_eig: float
    lipschitz_estimate: float
    f00_norm: float
    min_eig_witness: tuple = ()
    lipschitz_witness: tuple = ()
    grid_density: int = 0
    passed: dict = field(default_factory=dict)
    note: str = ("grid sampling is a necessary check only; it does not prove the bounds "
                 "on the continuum")

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def verify_assumptions(model: AgentModel, grid_density: int = 20, n_pairs: int = 20000,
                       seed: int = 0, strict: bool = True) -> AssumptionReport:
    """Sample the assumptions behind the tube construction.

    Checks ``f(0, 0) = 0``, the eigenvalue lower bound of the symmetric part
    of the control Jacobian on a uniform grid over workspace x inputs, and a
    difference-quotient estimate of the Lipschitz constant in ``x``.
    With ``strict`` the first failing check raises :class:`AssumptionViolation`.
    """
    if grid_density < 2:
        raise ValueError("grid_density must be at least 2")
    n = model.state_dim
    D, U = model.workspace, model.input_set
    m = U.dim
    axes = [np.linspace(lo, hi, grid_density) for lo, hi in zip(D.lower, D.upper)]
    axes += [np.linspace(lo, hi, grid_density) for lo, hi in zip(U.lower, U.upper)]

    min_eig, min_wit = np.inf, ()
    # chunk over the leading state axis to bound memory
    rest = np.array(list(itertools.product(*axes[1:]))) if len(axes) > 1 else np.zeros((1, 0))
    for a0 in axes[0]:
        pts = np.column_stack([np.full(len(rest), a0), rest])
        xs, us = pts[:, :n], pts[:, n:]
        J = np.asarray(model.control_jacobian(xs, us), dtype=float)
        eig = np.linalg.eigvalsh(0.5 * (J + np.swapaxes(J, -1, -2)))[:, 0]
        k = int(np.argmin(eig))
        if eig[k] < min_eig:
            min_eig, min_wit = float(eig[k]), (xs[k].tolist(), us[k].tolist())

    rng = np.random.default_rng(seed)
    x_a = D.sample(rng, n_pairs)
    # half the pairs are close together to probe the local derivative
    x_b = D.sample(rng, n_pairs)
    close = np.arange(n_pairs) % 2 == 0
    x_b[close] = np.clip(x_a[close] + 1e-3 * rng.standard_normal((close.sum(), n)), D.lower, D.upper)
    us = U.sample(rng, n_pairs)
    num = np.linalg.norm(model.eval(x_a, us) - model.eval(x_b, us), axis=-1)
    den = np.linalg.norm(x_a - x_b, axis=-1)
    ok = den > 1e-12
    ratios = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    k = int(np.argmax(ratios))
    lip, lip_wit = float(ratios[k]), (x_a[k].tolist(), x_b[k].tolist(), us[k].tolist())

    f00 = float(np.linalg.norm(model.eval(np.zeros(n), np.zeros(m))))

    report = AssumptionReport(min_eig=min_eig, lipschitz_estimate=lip, f00_norm=f00,
                              min_eig_witness=min_wit, lipschitz_witness=lip_wit,
                              grid_density=grid_density)
    report.passed = {
        "f(0,0)=0": f00 <= 1e-12,
        "control-jacobian lower bound": min_eig >= model.jac_lower_bound - 1e-9,
        "lipschitz bound": lip <= model.lipschitz_L + 1e-6,
    }
    if strict:
        if not report.passed["f(0,0)=0"]:
            raise AssumptionViolation("f(0,0)=0", (np.zeros(n).tolist(), np.zeros(m).tolist()), f00, 0.0)
        if not report.passed["control-jacobian lower bound"]:
            raise AssumptionViolation("control-jacobian lower bound", min_wit, min_eig, model.jac_lower_bound)
        if not report.passed["lipschitz bound"]:
            raise AssumptionViolation("lipschitz bound", lip_wit, lip, model.lipschitz_L)
    return report
