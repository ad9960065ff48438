import copy

import numpy as np
import pytest

from tubempc.config import ConfigError, build_config, load_config, load_raw
from tubempc.sim import (SimulationLog, csv_header, emit_csv, emit_metrics, iss_envelope_check, read_csv,
                         run_checks, run_closed_loop)


@pytest.fixture(scope="module")
def raw():
    return load_raw("three_agent_benchmark")


def test_bundled_config_derived_sets(golden_config):
    for a in golden_config.agents:
        assert a.tube.k_gain == 3.75
        assert a.tube.z_tilde == 0.3
        np.testing.assert_array_equal(a.sets.input_tight.lower, [-1.0, -1.0])
        np.testing.assert_array_equal(a.sets.input_tight.upper, [1.0, 1.0])
    assert golden_config.n_intervals == 5
    assert golden_config.n_rounds == 100


def test_zero_disturbance_config_has_no_tightening(raw):
    r = copy.deepcopy(raw)
    r["defaults"]["w_tilde"] = 0.0
    cfg = build_config(r)
    for a in cfg.agents:
        assert a.tube.z_tilde == 0.0
        assert a.sets.error_tight == a.sets.error_set
        assert a.sets.input_tight == a.sets.input_set


def test_large_disturbance_empties_input_set(raw):
    r = copy.deepcopy(raw)
    r["defaults"]["w_tilde"] = 10.0
    with pytest.raises(ConfigError, match="tube too large"):
        build_config(r)


@pytest.mark.parametrize("key,value", [("horizon_T", 0.55), ("total_time", 10.05), ("integrator_substeps", 0)])
def test_config_invariants(raw, key, value):
    r = copy.deepcopy(raw)
    r[key] = value
    with pytest.raises(ConfigError):
        build_config(r)


def test_config_errors_name_the_field(raw):
    r = copy.deepcopy(raw)
    r["agents"][1]["dynamics"] = "quadrotor"
    with pytest.raises(ConfigError, match=r"agents\[1\]"):
        build_config(r)
    r = copy.deepcopy(raw)
    del r["delta"]
    with pytest.raises(ConfigError, match="delta"):
        build_config(r)
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/scenario.yaml")


def test_default_error_set_is_shifted_workspace(raw):
    cfg = build_config(raw)
    a2 = cfg.agent(2)
    np.testing.assert_allclose(a2.sets.error_set.lower, [-7.0, -5.0])
    np.testing.assert_allclose(a2.sets.error_set.upper, [3.0, 5.0])
    a3 = cfg.agent(3)
    np.testing.assert_allclose(a3.sets.error_set.upper, [4.1, 2.2])


@pytest.fixture(scope="module")
def zero_run(raw):
    r = copy.deepcopy(raw)
    r["disturbance"] = {"type": "zero"}
    r["total_time"] = 3.0
    r["iss"] = {"transient": 1.0, "slack": 1e-3}
    cfg = build_config(r)
    return cfg, run_closed_loop(cfg)


def test_zero_disturbance_keeps_real_on_nominal(zero_run):
    cfg, (lg, rep) = zero_run
    for i in lg.agent_ids:
        assert lg.znorm[i].max() <= 1e-6


def test_zero_disturbance_tail_bound(zero_run):
    cfg, (lg, rep) = zero_run
    ok, data = iss_envelope_check(lg, cfg, slack=1e-3)
    assert ok
    for i in lg.agent_ids:
        a = cfg.agent(i)
        cap = np.sqrt(a.terminal.eta / np.linalg.eigvalsh(a.terminal.P)[0]) + 1e-3
        assert data["tail_sup"][i] <= cap


def test_log_shape(zero_run):
    cfg, (lg, rep) = zero_run
    assert lg.n_rows == cfg.n_rounds * cfg.integrator_substeps + 1
    assert len(lg.rounds) == cfg.n_rounds * len(cfg.agents)
    assert lg.pairs == [(1, 2), (2, 3)]


def test_iss_check_fails_on_growing_error(zero_run):
    cfg, (lg, rep) = zero_run
    t = lg.times
    grow = {i: np.column_stack([1.0 + t, np.zeros_like(t)]) for i in lg.agent_ids}
    fake = SimulationLog(t, lg.agent_ids, grow, grow, grow, grow, lg.u, lg.u_bar, lg.znorm, lg.stage_cost,
                         lg.pairs)
    ok, data = iss_envelope_check(fake, cfg, transient=0.5, slack=0.05)
    assert not ok
    assert not all(data["envelope_ok"].values())


def test_csv_header_and_roundtrip(zero_run, tmp_path):
    cfg, (lg, rep) = zero_run
    path = emit_csv(lg, tmp_path / "run.csv")
    header, data = read_csv(path)
    assert header[:11] == ["t", "x1_1", "x1_2", "xbar1_1", "xbar1_2", "u1_1", "u1_2", "ubar1_1", "ubar1_2",
                           "znorm1", "stagecost1"]
    assert header[-2:] == ["dist_1_2", "dist_2_3"]
    assert data.shape == (lg.n_rows, len(header))
    for i in lg.agent_ids:
        col = header.index(f"znorm{i}")
        assert data[0, col] == 0.0
        assert data[:, col].max() == rep.max_znorm[i]
    txt, js = emit_metrics(rep, tmp_path / "metrics")
    assert txt.read_text().startswith("max_znorm.1=")
    assert js.exists()


def test_empty_log_writes_header_only(zero_run, tmp_path):
    cfg, (lg, rep) = zero_run
    empty = SimulationLog(np.empty(0), lg.agent_ids, *[{i: a[i][:0] for i in lg.agent_ids} for a in
                                                      (lg.x, lg.x_bar, lg.e, lg.e_bar, lg.u, lg.u_bar, lg.znorm,
                                                       lg.stage_cost)], pairs=lg.pairs)
    path = emit_csv(empty, tmp_path / "empty.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert lines[0].split(",") == csv_header(lg)


def test_random_disturbance_run_is_seeded(raw):
    r = copy.deepcopy(raw)
    r["disturbance"] = {"type": "random", "bound": 0.3}
    r["total_time"] = 1.0
    a = run_closed_loop(build_config({**r, "seed": 3}))[0]
    b = run_closed_loop(build_config({**r, "seed": 3}))[0]
    c = run_closed_loop(build_config({**r, "seed": 4}))[0]
    assert np.array_equal(a.x[1], b.x[1])
    assert not np.array_equal(a.x[1], c.x[1])
    assert max(a.znorm[i].max() for i in a.agent_ids) <= 0.306


def test_golden_run_checks(golden_run, golden_config):
    lg, rep = golden_run
    checks = run_checks(lg, rep, golden_config)
    assert all(checks.values()), checks


def test_golden_clearance_soundness(golden_run, golden_config):
    """Real distances stay below d - eps whenever predictions respect the clearance."""
    lg, rep = golden_run
    for i, j in lg.pairs:
        assert lg.distance(i, j).max() <= 5.0 - golden_config.epsilon


def test_golden_every_solution_admissible(golden_run):
    lg, rep = golden_run
    assert all(r.status in ("optimal", "feasible_suboptimal") for r in lg.rounds)
