import math

import numpy as np
import pytest
from scipy.linalg import expm

from dsmcbf.checks import check_energy_decrease
from dsmcbf.dynamics import closed_loop_f_pi, equilibrium
from dsmcbf.errors import ConfigurationError
from dsmcbf.lyapunov import ConstraintKind as K, ConstraintSpec, reference_admissible
from dsmcbf.sim import (CONTROLLERS, payload_trace, rk4_step, run_all, run_scenario,
                        scenario_a, scenario_b, settling_time)

from conftest import PI, CRANE, cached_run


def test_rk4_examples():
    np.testing.assert_array_equal(rk4_step([1.0, 2.0], lambda y: np.zeros(2), 0.1), [1.0, 2.0])
    assert rk4_step([1.0], lambda y: -y, 0.1)[0] == pytest.approx(0.9048375, abs=1e-12)
    with pytest.raises(ValueError):
        rk4_step([1.0], lambda y: -y, 0.0)


def _linearized(v=0.3, h=1e-6):
    x0 = equilibrium(v)
    return np.column_stack([(closed_loop_f_pi(x0 + h * e, v, CRANE, PI)
                             - closed_loop_f_pi(x0 - h * e, v, CRANE, PI)) / (2 * h) for e in np.eye(4)])


def test_rk4_against_matrix_exponential():
    A = _linearized()
    y0 = np.array([0.1, -0.05, 0.2, 0.3])
    errs = []
    for dt in (0.1, 0.05):
        y = rk4_step(y0, lambda z: A @ z, dt)
        errs.append(np.abs(y - expm(A * dt) @ y0).max())
    # local error is O(dt^5): halving dt shrinks it about 32x
    assert errs[0] / errs[1] > 20
    assert errs[1] < 1e-6


def test_horizon_zero_gives_initial_record():
    for c in CONTROLLERS:
        log = run_scenario(scenario_b(controller=c, horizon=0.0))
        assert len(log.t) == 1 and log.t[0] == 0.0 and log.completed
        np.testing.assert_array_equal(log.x[0], [0, 0, 0, 0])


def test_record_count_and_monotone_time():
    logs = run_all(scenario_a(horizon=0.5))
    for c in ("nominal", "erg", "dsmcbf"):
        assert len(logs[c].t) == 501 and np.all(np.diff(logs[c].t) > 0)


def test_nominal_violates_scenario_a():
    cfg, log = cached_run("a", "nominal")
    v = log.violations(cfg.constraints, CRANE.L)
    assert max(v[2], v[3], v[5]) > 1e-3


@pytest.mark.parametrize("scenario", ["a", "b"])
def test_dsmcbf_forward_invariance(scenario):
    cfg, log = cached_run(scenario, "dsmcbf")
    assert log.completed and all(s == "ok" for s in log.status)
    assert np.nanmin(log.dsm) >= -1e-6
    assert log.max_violation(cfg.constraints, CRANE.L) <= 1e-6
    assert np.abs(log.u).max() <= 4.0 + 1e-6
    assert all(reference_admissible(float(v), cfg.constraints, CRANE) for v in log.v[::50])


def test_dsmcbf_without_reference_weight_stays_safe():
    cfg, log = cached_run("a", "dsmcbf", eta=0.0)
    assert log.completed
    assert log.max_violation(cfg.constraints, CRANE.L) <= 1e-6
    assert np.nanmin(log.dsm) >= -1e-6


def test_candidate_cbf_infeasible_in_scenario_b():
    cfg, log = cached_run("b", "cbf")
    t = log.event_time("infeasible")
    assert t is not None and 0 < t < cfg.horizon
    assert not log.completed and log.status[-1] == "infeasible" and math.isnan(log.u[-1])
    assert log.t[-1] == t


def test_settling_time_examples():
    t = np.linspace(0, 1, 11)
    assert settling_time(t, np.ones(11), r=1.0) == 0.0
    assert settling_time(t, np.zeros(11), r=1.0) == math.inf
    x = np.array([0, 0.5, 0.9, 0.99, 1.01, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    assert settling_time(t, x, r=1.0) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        settling_time(t, x, band=0.0)


def test_dsmcbf_settles_before_erg_in_scenario_a():
    _, d = cached_run("a", "dsmcbf")
    _, e = cached_run("a", "erg")
    assert settling_time(d) < settling_time(e)


def test_incomplete_runs_never_settle():
    _, log = cached_run("b", "cbf")
    assert settling_time(log) == math.inf


@pytest.mark.parametrize("controller", ["nominal", "erg"])
def test_halving_dt_changes_terminal_state_little(controller):
    a = run_scenario(scenario_a(controller=controller, horizon=3.0, dt=1e-3))
    b = run_scenario(scenario_a(controller=controller, horizon=3.0, dt=5e-4))
    assert np.abs(a.x[-1] - b.x[-1]).max() < 1e-6


def test_energy_non_increasing_under_prestabilizing_law(rng):
    res = check_energy_decrease(scenario_a(), rng, steps=3000, runs=5)
    assert res.passed, res.detail


def test_domain_exit_stops_run():
    cfg = scenario_a(controller="nominal", x0=(0.0, 1.4, 0.0, 20.0), horizon=2.0)
    log = run_scenario(cfg)
    assert not log.completed and log.events[0]["kind"] == "domain_exit"


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(horizon=-1.0), dict(controller="pid"),
                                dict(eta=-1.0), dict(backoff=-1e-3), dict(angle_form="tan"),
                                dict(x0=(0.0, 0.0))])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        run_scenario(scenario_a(**kw))


def test_constraint_list_validation():
    dup = [ConstraintSpec(K.INPUT_BOUND, 4.0), ConstraintSpec(K.INPUT_BOUND, 3.0)]
    with pytest.raises(ConfigurationError):
        scenario_a().with_(constraints=dup).validate()
    crossed = [ConstraintSpec(K.POSITION_LOWER, 1.0), ConstraintSpec(K.POSITION_UPPER, 0.5)]
    with pytest.raises(ConfigurationError):
        scenario_a().with_(constraints=crossed).validate()


def test_payload_trace():
    _, log = cached_run("a", "dsmcbf")
    p = payload_trace(log, CRANE)
    assert p.shape == log.t.shape and p.max() <= 1.1 + 1e-6
