"""Offline tube synthesis and the ancillary feedback law.

The ancillary law ``kappa(e, e_bar) = -k (e - e_bar)`` keeps the deviation
``z = e - e_bar`` between the disturbed and the nominal error inside the ball
of radius ``z_tilde``. Gain and radius have closed forms in the model
constants; :func:`validate_rci` checks the containment claim by simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import AgentModel, DisturbanceSignal
from .sets import BoxSet, EmptySet, pontryagin_diff_box_ball, tighten_input_box


@dataclass(frozen=True)
class TubeParams:
    rho: float
    k_lower: float
    k_gain: float
    z_tilde: float


def _require_positive(**kwargs):
    for name, v in kwargs.items():
        if not (v > 0):
            raise ValueError(f"{name} must be positive, got {v}")


def compute_gain(rho: float, k_lower: float, L: float, J_lower: float) -> float:
    """Ancillary gain ``k_lower + (L + 1/(4 rho)) / J_lower``."""
    _require_positive(rho=rho, k_lower=k_lower, L=L, J_lower=J_lower)
    return k_lower + (L + 1.0 / (4.0 * rho)) / J_lower


def compute_tube_radius(rho: float, w_tilde: float, k_lower: float, J_lower: float) -> float:
    """Tube radius ``sqrt(rho) * w_tilde / sqrt(k_lower * J_lower)``."""
    _require_positive(rho=rho, k_lower=k_lower, J_lower=J_lower)
    if w_tilde < 0:
        raise ValueError(f"w_tilde must be nonnegative, got {w_tilde}")
    return math.sqrt(rho) * w_tilde / math.sqrt(k_lower * J_lower)


def synthesize_tube(model: AgentModel, w_tilde: float, rho: float = 1.0, k_lower: float = 1.0) -> TubeParams:
    return TubeParams(
        rho=rho,
        k_lower=k_lower,
        k_gain=compute_gain(rho, k_lower, model.lipschitz_L, model.jac_lower_bound),
        z_tilde=compute_tube_radius(rho, w_tilde, k_lower, model.jac_lower_bound),
    )


def ancillary_feedback(e, e_bar, k_gain: float) -> np.ndarray:
    return -k_gain * (np.asarray(e, dtype=float) - np.asarray(e_bar, dtype=float))


def total_control(u_bar, correction) -> np.ndarray:
    return np.asarray(u_bar, dtype=float) + np.asarray(correction, dtype=float)


@dataclass
class RciReport:
    max_z_norm: float
    lyapunov_violations: int
    z_tilde: float
    n_samples: int
    n_truncated: int
    slack: float = 0.02

    @property
    def passed(self) -> bool:
        return self.max_z_norm <= self.z_tilde * (1.0 + self.slack) and self.lyapunov_violations == 0


def validate_rci(model: AgentModel, tube: TubeParams, disturbance: DisturbanceSignal, n_trials: int = 100,
                 horizon: float = 10.0, step: float = 0.01, hold: float = 0.1, seed: int = 0,
                 slack: float = 0.02, lyap_tol: float = 1e-9) -> RciReport:
    """Monte-Carlo check that the tube is robustly invariant.

    Each trial draws a start in the tightened state box and a piecewise-constant
    nominal input in the tightened input box, then integrates the disturbed and
    nominal systems together under ``u = u_bar - k z`` from ``z(0) = 0``.
    The disturbance has magnitude ``disturbance.bound`` and points along ``z``
    (the worst case for ``d/dt |z|^2``); at ``z = 0`` the given signal is used.
    A trial stops once either state leaves the region where the model
    constants are certified. All trials advance together as one batch.
    """
    n = model.state_dim
    w_tilde = disturbance.bound
    e_box = pontryagin_diff_box_ball(model.workspace, tube.z_tilde)
    u_box = tighten_input_box(model.input_set, tube.k_gain, tube.z_tilde)
    if isinstance(e_box, EmptySet) or isinstance(u_box, EmptySet):
        raise ValueError("tube too large for the model's workspace or input set")
    decay = tube.k_lower * model.jac_lower_bound
    forcing = tube.rho * w_tilde ** 2

    rng = np.random.default_rng(seed)
    n_steps = int(round(horizon / step))
    per_hold = max(1, int(round(hold / step)))
    e_bar = e_box.sample(rng, n_trials)
    e = e_bar.copy()
    alive = np.ones(n_trials, dtype=bool)
    u_bar = u_box.sample(rng, n_trials)

    def dist(t, z):
        nz = np.linalg.norm(z, axis=-1, keepdims=True)
        w_sig = np.broadcast_to(np.asarray(disturbance(t), dtype=float), z.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            w_adv = w_tilde * z / nz
        return np.where(nz > 1e-14, w_adv, w_sig)

    def field(t, s, ub):
        ee, eb = s[:, :n], s[:, n:]
        z = ee - eb
        u = ub - tube.k_gain * z
        return np.hstack([model.eval(ee, u) + dist(t, z), model.eval(eb, ub)])

    def in_region(ee, eb):
        ok = np.all((eb >= e_box.lower) & (eb <= e_box.upper), axis=1)
        ok &= np.all((ee >= model.workspace.lower) & (ee <= model.workspace.upper), axis=1)
        return ok

    max_z = 0.0
    violations = 0
    samples = 0
    s = np.hstack([e, e_bar])
    for k in range(n_steps):
        t = k * step
        if k % per_hold == 0 and k > 0:
            u_bar = u_box.sample(rng, n_trials)
        ee, eb = s[:, :n], s[:, n:]
        z = ee - eb
        znorm = np.linalg.norm(z, axis=1)
        zdot = field(t, s, u_bar)
        zdot = zdot[:, :n] - zdot[:, n:]
        phidot = np.sum(z * zdot, axis=1)
        live = alive
        samples += int(live.sum())
        if live.any():
            max_z = max(max_z, float(znorm[live].max()))
            outside = live & (znorm > tube.z_tilde)
            bound = -decay * znorm ** 2 + forcing + lyap_tol
            violations += int(np.sum(outside & (phidot >= bound)))
        k1 = field(t, s, u_bar)
        k2 = field(t + 0.5 * step, s + 0.5 * step * k1, u_bar)
        k3 = field(t + 0.5 * step, s + 0.5 * step * k2, u_bar)
        k4 = field(t + step, s + step * k3, u_bar)
        s_new = s + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        finite = np.all(np.isfinite(s_new), axis=1)
        alive = alive & finite & in_region(np.nan_to_num(s_new[:, :n]), np.nan_to_num(s_new[:, n:]))
        s = np.where(alive[:, None], s_new, s)
        if not alive.any():
            break
    # final instant
    z = s[:, :n] - s[:, n:]
    if alive.any():
        max_z = max(max_z, float(np.linalg.norm(z[alive], axis=1).max()))
    return RciReport(max_z_norm=max_z, lyapunov_violations=violations, z_tilde=tube.z_tilde,
                     n_samples=samples, n_truncated=int((~alive).sum()), slack=slack)
