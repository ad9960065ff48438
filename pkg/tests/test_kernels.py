import os
import subprocess
import sys

import numpy as np
import pytest

from tubempc import kernels
from tubempc.dynamics import benchmark_model, integrator_model, linear_model
from tubempc.kernels import ShootingData

compiled = pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled extension not built")


def _data(n=2, N=5, s=10, M=1, seed=0, eta=5.0):
    rng = np.random.default_rng(seed)
    K = 2 * N + 1
    A = rng.standard_normal((n, n))
    return ShootingData(
        e0=rng.uniform(-2, 2, n), x_des=rng.uniform(-1, 1, n), u_ref=rng.uniform(-0.2, 0.2, n), h=0.01,
        substeps=s, N=N, m=n, Q=A @ A.T + np.eye(n), R=0.5 * np.eye(n), P=0.5 * np.eye(n), eta=eta,
        cidx=np.round(np.linspace(0, N * s, K)).astype(int), lo=-np.ones(n) * 2.5, hi=np.ones(n) * 2.5,
        nb=rng.uniform(-3, 3, (M, K, n)), clear2=np.full(M, 4.0))


@compiled
@pytest.mark.parametrize("model,n", [(benchmark_model(), 2), (integrator_model(3), 3)])
def test_backends_agree(model, n):
    for seed in range(5):
        data = _data(n=n, seed=seed)
        rng = np.random.default_rng(100 + seed)
        u = rng.uniform(-1, 1, data.N * n)
        lam = rng.uniform(0, 1, data.n_constraints)
        vp, Jp, gp = kernels.merit(model, u, data, lam, 3.0, backend="python")
        vc, Jc, gc = kernels.merit(model, u, data, lam, 3.0, backend="compiled")
        assert vc == pytest.approx(vp, rel=1e-12)
        assert Jc == pytest.approx(Jp, rel=1e-12)
        np.testing.assert_allclose(gc, gp, rtol=1e-12, atol=1e-12)
        fp, dp = kernels.merit_grad(model, u, data, lam, 3.0, backend="python")
        fc, dc = kernels.merit_grad(model, u, data, lam, 3.0, backend="compiled")
        np.testing.assert_allclose(dc, dp, rtol=1e-6, atol=1e-7)


@compiled
def test_rollout_agrees():
    m = benchmark_model()
    d = _data()
    U = np.random.default_rng(4).uniform(-1, 1, (5, 2))
    sp, cp = kernels.rollout(m, d.e0, d.x_des, d.u_ref, U, d.h, d.substeps, d.Q, d.R, backend="python")
    sc, cc = kernels.rollout(m, d.e0, d.x_des, d.u_ref, U, d.h, d.substeps, d.Q, d.R, backend="compiled")
    np.testing.assert_allclose(sc, sp, rtol=1e-13, atol=1e-14)
    assert cc == pytest.approx(cp, rel=1e-13)


def test_constraint_layout():
    m = benchmark_model()
    d = _data(M=2)
    u = np.zeros(d.N * 2)
    _, _, g = kernels.merit(m, u, d, np.zeros(d.n_constraints), 1.0, backend="python")
    K = d.cidx.size
    assert g.size == K * 4 + 1 + 2 * K
    # first knot is the initial error
    np.testing.assert_allclose(g[:4], np.concatenate([d.lo - d.e0, d.e0 - d.hi]))
    diff = d.e0 + d.x_des - d.nb[0, 0]
    assert g[K * 4 + 1] == pytest.approx(diff @ diff - 4.0)


def test_model_without_kernel_code_uses_python():
    m = linear_model(-1.0)
    d = ShootingData(e0=[1.0], x_des=[0.0], u_ref=[0.0], h=0.1, substeps=2, N=3, m=1, Q=[[1.0]], R=[[1.0]],
                     P=[[1.0]], eta=10.0, cidx=[0, 1, 2, 3, 4, 5, 6], lo=[-5.0], hi=[5.0],
                     nb=np.zeros((0, 7, 1)), clear2=[])
    val, grad = kernels.merit_grad(m, np.zeros(3), d, np.zeros(d.n_constraints), 1.0)
    assert np.isfinite(val) and grad.shape == (3,)
    if kernels.BACKEND == "compiled":
        with pytest.raises(RuntimeError):
            kernels.merit(m, np.zeros(3), d, np.zeros(d.n_constraints), 1.0, backend="compiled")


def test_penalty_is_zero_when_feasible_without_multipliers():
    m = benchmark_model()
    d = _data(M=0, eta=1e9)
    d.e0[:] = 0.1
    v, J, g = kernels.merit(m, np.zeros(d.N * 2), d, np.zeros(d.n_constraints), 10.0)
    assert np.all(g <= 0)
    assert v == J


def test_forced_python_fallback_in_subprocess():
    env = dict(os.environ, TUBEMPC_FORCE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from tubempc import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
