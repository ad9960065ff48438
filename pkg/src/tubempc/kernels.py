"""Backend selection for the shooting kernels.

The compiled core is used when it imported and the model carries a kernel
code it knows; everything else runs on the numpy fallback. Set
``TUBEMPC_FORCE_PYTHON=1`` before import to disable the compiled core.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("TUBEMPC_FORCE_PYTHON") == "1":
        raise ImportError("compiled kernels disabled by TUBEMPC_FORCE_PYTHON")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "compiled" if _ckernels is not None else "python"
_MAXDIM = 16


@dataclass
class ShootingData:
    """Everything a merit evaluation needs apart from the controls."""

    e0: np.ndarray
    x_des: np.ndarray
    u_ref: np.ndarray
    h: float
    substeps: int
    N: int
    m: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    eta: float
    cidx: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    nb: np.ndarray
    clear2: np.ndarray

    def __post_init__(self):
        f = lambda a: np.array(a, dtype=float, order="C")
        self.e0, self.x_des, self.u_ref = f(self.e0), f(self.x_des), f(self.u_ref)
        self.Q, self.R, self.P = f(self.Q), f(self.R), f(self.P)
        self.lo, self.hi, self.clear2 = f(self.lo), f(self.hi), f(self.clear2).reshape(-1)
        self.cidx = np.array(self.cidx, dtype=np.int64, order="C")
        n = self.e0.size
        self.nb = f(self.nb).reshape(-1, self.cidx.size, n)

    @property
    def n_constraints(self) -> int:
        return self.cidx.size * 2 * self.e0.size + 1 + self.nb.shape[0] * self.cidx.size


def _use_compiled(model, backend) -> bool:
    if backend == "python":
        return False
    ok = (_ckernels is not None and model.kernel_code in _ckernels.SUPPORTED_CODES
          and model.state_dim <= _MAXDIM)
    if backend == "compiled" and not ok:
        raise RuntimeError(f"compiled kernel unavailable for model {model.name!r}")
    return ok


def rollout(model, e0, x_des, u_ref, controls, h, substeps, Q, R, backend=None):
    """Fine-grid states and integrated running cost for one control sequence."""
    e0 = np.ascontiguousarray(e0, dtype=float)
    x_des = np.ascontiguousarray(x_des, dtype=float)
    u_ref = np.ascontiguousarray(u_ref, dtype=float)
    controls = np.ascontiguousarray(controls, dtype=float)
    Q = np.ascontiguousarray(Q, dtype=float)
    R = np.ascontiguousarray(R, dtype=float)
    if _use_compiled(model, backend):
        return _ckernels.rollout(model.kernel_code, e0, x_des, u_ref, controls, float(h), int(substeps), Q, R)
    return _kernels_py.rollout(model.eval, e0, x_des, u_ref, controls, h, int(substeps), Q, R)


def _args(data):
    return (data.e0, data.x_des, data.u_ref, float(data.h), int(data.substeps), int(data.N), data.Q, data.R,
            data.P, float(data.eta), data.cidx, data.lo, data.hi, data.nb, data.clear2)


def merit(model, u, data: ShootingData, lam, mu, backend=None):
    u = np.ascontiguousarray(u, dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    if _use_compiled(model, backend):
        return _ckernels.merit(model.kernel_code, u, *_args(data), lam, float(mu))
    return _kernels_py.merit(model.eval, u, data, lam, mu)


def merit_grad(model, u, data: ShootingData, lam, mu, fd_step=1e-6, backend=None):
    u = np.ascontiguousarray(u, dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    if _use_compiled(model, backend):
        return _ckernels.merit_grad(model.kernel_code, u, *_args(data), lam, float(mu), float(fd_step))
    return _kernels_py.merit_grad(model.eval, u, data, lam, mu, fd_step)
