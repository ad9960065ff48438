"""Compare the compiled and pure-Python shooting kernels.

Times one merit-plus-gradient evaluation on a benchmark-model problem for
each backend, checks that both return the same numbers, and optionally times
a short closed-loop run under each backend in a subprocess.

    python3 benchmarks/bench_kernels.py [--repeat 50] [--closed-loop]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from tubempc import kernels
from tubempc.dynamics import benchmark_model
from tubempc.ocp import OcpProblem, OcpWeights, synthesize_terminal
from tubempc.sets import BoxSet


def make_problem(horizon=0.5, n_intervals=5):
    model = benchmark_model()
    x_des = np.array([2.0, 0.0])
    ub = BoxSet([-1.0, -1.0], [1.0, 1.0])
    W = OcpWeights(0.5 * np.eye(2), 0.5 * np.eye(2), 0.5 * np.eye(2))
    term = synthesize_terminal(model, x_des, W.Q, W.R, ub, P=W.P, eta=5.0)
    return OcpProblem(model, x_des, horizon, n_intervals, W, BoxSet([-6.7, -4.7], [2.7, 4.7]), ub, term,
                      np.array([-4.5, -0.2]))


def time_backend(problem, backend, u, repeat):
    data = problem.shooting_data()
    lam = np.zeros(data.n_constraints)
    kernels.merit_grad(problem.model, u, data, lam, 1.0, backend=backend)
    tic = time.perf_counter()
    for _ in range(repeat):
        val, grad = kernels.merit_grad(problem.model, u, data, lam, 1.0, backend=backend)
    return (time.perf_counter() - tic) / repeat, val, grad


def closed_loop_time(force_python):
    env = dict(os.environ, TUBEMPC_LOG_LEVEL="error")
    if force_python:
        env["TUBEMPC_FORCE_PYTHON"] = "1"
    code = ("import time; from tubempc.config import load_config; from tubempc.sim import run_closed_loop;"
            "c = load_config('three_agent_benchmark', {'total_time': 2.0}); t = time.perf_counter();"
            "run_closed_loop(c); print(time.perf_counter() - t)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=50)
    p.add_argument("--closed-loop", action="store_true", help="also time a 2 s closed-loop run per backend")
    args = p.parse_args(argv)

    problem = make_problem()
    u = np.random.default_rng(0).uniform(-1, 1, problem.n_intervals * problem.n_controls)
    t_py, v_py, g_py = time_backend(problem, "python", u, args.repeat)
    print(f"python   merit+grad: {1e3 * t_py:8.3f} ms")
    if kernels.BACKEND != "compiled":
        print("compiled backend not built; nothing to compare")
        return 0
    t_c, v_c, g_c = time_backend(problem, "compiled", u, args.repeat)
    print(f"compiled merit+grad: {1e3 * t_c:8.3f} ms")
    print(f"speedup: {t_py / t_c:.1f}x")
    print(f"|merit diff| = {abs(v_py - v_c):.2e}, max |grad diff| = {np.max(np.abs(g_py - g_c)):.2e}")
    if args.closed_loop:
        tc = closed_loop_time(False)
        tp = closed_loop_time(True)
        print(f"closed loop (2 s, 3 agents): compiled {tc:.2f} s, python {tp:.2f} s, speedup {tp / tc:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
