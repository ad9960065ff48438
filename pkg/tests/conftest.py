import logging
import time

import pytest

from tubempc.config import load_config
from tubempc.sim import run_closed_loop

logging.getLogger("tubempc").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def golden_config():
    return load_config("three_agent_benchmark")


@pytest.fixture(scope="session")
def golden_run(golden_config):
    """One closed-loop run of the bundled benchmark, shared across modules.

    Cold solves are recorded too so warm-start efficiency can be checked.
    """
    tic = time.perf_counter()
    sim_log, report = run_closed_loop(golden_config, compare_cold=True)
    golden_config.raw["_elapsed"] = time.perf_counter() - tic
    return sim_log, report
