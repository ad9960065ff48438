"""Pure-Python shooting kernels (numpy, batched).

Every finite-difference perturbation of the control sequence is rolled out
in the same batch, so one gradient costs one vectorised rollout instead of
``2 N m`` separate ones. The compiled core in ``_ckernels`` implements the
same functions with C loops; both must agree to rounding.
"""

from __future__ import annotations

import numpy as np


def _rk4_batch(f, e, x_des, u, c, h, Q, R, u_ref):
    """One RK4 step of the error dynamics augmented with the running cost.

    ``e`` is (B, n), ``u`` is (B, m) and ``c`` is (B,).
    """
    du = u - u_ref
    ucost = np.einsum("bi,ij,bj->b", du, R, du)

    def rhs(ee):
        return f(ee + x_des, u), np.einsum("bi,ij,bj->b", ee, Q, ee) + ucost

    k1, c1 = rhs(e)
    k2, c2 = rhs(e + 0.5 * h * k1)
    k3, c3 = rhs(e + 0.5 * h * k2)
    k4, c4 = rhs(e + h * k3)
    e_new = e + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    c_new = c + (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
    return e_new, c_new


def rollout_batch(f, e0, x_des, u_ref, controls, h, substeps, Q, R):
    """Roll out a batch of piecewise-constant control sequences.

    Returns the fine-grid states, shape (B, N*substeps + 1, n), and the
    integrated running cost, shape (B,).
    """
    controls = np.asarray(controls, dtype=float)
    B, N, _ = controls.shape
    n = e0.size
    states = np.empty((B, N * substeps + 1, n))
    e = np.broadcast_to(e0, (B, n)).copy()
    c = np.zeros(B)
    states[:, 0] = e
    k = 0
    for i in range(N):
        u = controls[:, i, :]
        for _ in range(substeps):
            e, c = _rk4_batch(f, e, x_des, u, c, h, Q, R, u_ref)
            k += 1
            states[:, k] = e
    return states, c


def rollout(f, e0, x_des, u_ref, controls, h, substeps, Q, R):
    states, c = rollout_batch(f, e0, x_des, u_ref, np.asarray(controls, dtype=float)[None], h, substeps, Q, R)
    return states[0], float(c[0])


def constraints_batch(states, data):
    """Stack every inequality ``g <= 0`` for a batch of rollouts.

    Order: per constraint knot ``[lo - e, e - hi]``, then the terminal level,
    then per neighbour and knot the squared-distance constraint.
    """
    ek = states[:, data.cidx, :]  # (B, K, n)
    B, K, n = ek.shape
    box = np.concatenate([data.lo - ek, ek - data.hi], axis=2).reshape(B, K * 2 * n)
    eN = states[:, -1, :]
    term = (np.einsum("bi,ij,bj->b", eN, data.P, eN) - data.eta)[:, None]
    parts = [box, term]
    if data.nb.shape[0]:
        diff = (ek + data.x_des)[:, None, :, :] - data.nb[None]  # (B, M, K, n)
        d2 = np.sum(diff * diff, axis=3) - data.clear2[None, :, None]
        parts.append(d2.reshape(B, -1))
    return np.concatenate(parts, axis=1)


def merit_batch(f, controls, data, lam, mu):
    states, c = rollout_batch(f, data.e0, data.x_des, data.u_ref, controls, data.h, data.substeps, data.Q, data.R)
    eN = states[:, -1, :]
    J = c + np.einsum("bi,ij,bj->b", eN, data.P, eN)
    g = constraints_batch(states, data)
    shifted = np.maximum(0.0, lam[None, :] + mu * g)
    pen = np.sum(shifted * shifted - lam[None, :] ** 2, axis=1) / (2.0 * mu)
    return J + pen, J, g


def merit(f, u_flat, data, lam, mu):
    controls = np.asarray(u_flat, dtype=float).reshape(1, data.N, data.m)
    m_, J, g = merit_batch(f, controls, data, lam, mu)
    return float(m_[0]), float(J[0]), g[0]


def merit_grad(f, u_flat, data, lam, mu, fd_step):
    """Merit value and its central-difference gradient."""
    u_flat = np.asarray(u_flat, dtype=float)
    nv = u_flat.size
    pert = np.empty((2 * nv + 1, nv))
    pert[:] = u_flat
    idx = np.arange(nv)
    pert[1 + idx, idx] += fd_step
    pert[1 + nv + idx, idx] -= fd_step
    vals, _, _ = merit_batch(f, pert.reshape(-1, data.N, data.m), data, lam, mu)
    grad = (vals[1:1 + nv] - vals[1 + nv:]) / (2.0 * fd_step)
    return float(vals[0]), grad
