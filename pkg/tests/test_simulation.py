import numpy as np
import pytest

from clf_cbf_dcp.certificates import CertificateFunction, linear_class_k
from clf_cbf_dcp.controllers import (
    CbfQpController,
    Controller,
    ControllerError,
    DcpController,
    DcpControllerConfig,
)
from clf_cbf_dcp.simulation import (
    IntegratorConfig,
    Outcome,
    OutcomeKind,
    TrajectoryRecord,
    closed_loop_field,
    dcp_field_split,
    integrate,
    monitor_invariants,
)


def _dcp(scenario, k=None, **kw):
    k = scenario.default_k if k is None else k
    return DcpController.for_scenario(scenario, DcpControllerConfig(k=k, **kw))


def test_closed_loop_field_example(case1):
    np.testing.assert_allclose(closed_loop_field(_dcp(case1), np.array([1.0, 0.0])), [-0.5, 0.0],
                               atol=1e-15)


def test_field_split_identity(case1, case2, rng):
    for scen in (case1, case2):
        ctrl = _dcp(scen)
        count = 0
        while count < 100:
            x = rng.uniform(-8, 8, size=2)
            if scen.cbf.value(x) <= 0 or np.linalg.norm(x) < 0.1:
                continue
            count += 1
            out = ctrl.evaluate(x)
            Fu, Gwp = dcp_field_split(ctrl, x, out)
            direct = closed_loop_field(ctrl, x)
            split = Fu + out.u_bar_h * ctrl.cfg.k * Gwp
            np.testing.assert_allclose(direct, split, atol=1e-12 * (1 + np.linalg.norm(direct)), rtol=0)


def test_field_split_parts_do_not_depend_on_gain(case1):
    x = np.array([1.2, 6.0])
    a = dcp_field_split(_dcp(case1, k=0.0), x)
    b = dcp_field_split(_dcp(case1, k=40.0), x)
    np.testing.assert_allclose(a[0], b[0], atol=1e-13)
    np.testing.assert_allclose(a[1], b[1], atol=1e-15)


def test_start_inside_origin_ball_stops_with_zero_input(case1):
    rec = integrate(_dcp(case1), np.array([5e-4, 0.0]))
    assert rec.outcome.kind is OutcomeKind.REACHED_ORIGIN
    assert len(rec) == 1
    np.testing.assert_array_equal(rec.inputs[0], [0.0, 0.0])
    # The unforced drift vanishes at the origin.
    np.testing.assert_array_equal(case1.system.drift(np.zeros(2)), [0.0, 0.0])


def test_rollout_below_obstacle_reaches_origin_with_decreasing_V(case1):
    rec = integrate(_dcp(case1), np.array([0.0, -3.0]), domain=case1.domain)
    assert rec.outcome.kind is OutcomeKind.REACHED_ORIGIN
    assert np.all(rec.u_bar_h == 0.0)
    assert np.all(np.diff(rec.v_values) < 0)
    rep = monitor_invariants(rec, case1.clf, case1.cbf)
    assert rep.max_clf_residual <= 1e-3
    assert rep.min_h >= -1e-6
    assert rep.clf_steps == len(rec) - 1


def test_monitor_on_constant_record():
    n = 5
    rec = TrajectoryRecord(
        times=np.arange(n) * 1e-3, states=np.ones((n, 2)), inputs=np.zeros((n, 2)),
        h_values=np.full(n, 2.0), v_values=np.full(n, 3.0), u_bar_l=np.zeros(n),
        u_bar_h=np.zeros(n), outcome=Outcome(OutcomeKind.TIMEOUT), controller="dcp")
    zero_k = CertificateFunction(lambda x: 0.0, linear_class_k(1.0), "cbf")
    rep = monitor_invariants(rec, zero_k, zero_k)
    assert rep.max_v_increase == 0.0
    # With alpha = id the residual is Vdot + V = 0 + 3.
    assert rep.max_clf_residual == pytest.approx(3.0)


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(dt=1e-3, equilibrium_dwell_steps=10)
    assert IntegratorConfig(dt=1e-3, t_max=2.0).max_steps == 2000


def test_rejects_unsafe_or_misshaped_initial_state(case1):
    ctrl = _dcp(case1)
    with pytest.raises(ValueError, match="unsafe"):
        integrate(ctrl, np.array([0.0, 4.0]))
    with pytest.raises(ValueError):
        integrate(ctrl, np.array([0.0, 7.0, 1.0]))
    with pytest.raises(ValueError, match="domain"):
        integrate(ctrl, np.array([0.0, 11.0]), domain=case1.domain)


def test_left_domain_and_timeout(case1):
    ctrl = CbfQpController.for_scenario(case1)
    box = np.array([[-10.0, 10.0], [6.5, 10.0]])
    rec = integrate(ctrl, np.array([0.0, 7.0]), domain=box)
    assert rec.outcome.kind is OutcomeKind.LEFT_DOMAIN
    assert rec.outcome.point[1] < 6.5
    rec = integrate(ctrl, np.array([0.0, 7.0]), IntegratorConfig(t_max=0.05))
    assert rec.outcome.kind is OutcomeKind.TIMEOUT
    assert len(rec) == 51


class _FailingController(DcpController):
    """Raises after a fixed number of evaluations."""

    def __init__(self, scenario, budget):
        super().__init__(scenario.system, scenario.clf, scenario.cbf, DcpControllerConfig(k=15.0))
        self.budget = budget

    def _eval(self, x):
        self.budget -= 1
        if self.budget < 0:
            raise ControllerError("injected failure")
        return super()._eval(x)


def test_controller_failure_gives_aborted_record(case1):
    rec = integrate(_FailingController(case1, 41), np.array([0.0, 7.0]))
    assert rec.outcome.kind is OutcomeKind.ABORTED
    assert "injected failure" in rec.outcome.error
    assert len(rec) == 11
    assert isinstance(rec.outcome.point, np.ndarray)


def test_csv_round_trip_and_determinism(case1, tmp_path):
    cfg = IntegratorConfig(t_max=0.5)
    rec = integrate(_dcp(case1), np.array([1.0, 7.0]), cfg)
    rec.write_csv(tmp_path / "a.csv")
    rec.write_outcome_json(tmp_path / "a.json")
    back = TrajectoryRecord.read(tmp_path / "a.csv", tmp_path / "a.json")
    for name in ("times", "states", "inputs", "h_values", "v_values", "u_bar_l", "u_bar_h"):
        np.testing.assert_array_equal(getattr(back, name), getattr(rec, name))
    assert back.outcome.kind is rec.outcome.kind
    np.testing.assert_array_equal(back.outcome.point, rec.outcome.point)
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "t,x1,x2,u1,u2,h,V,u_bar_l,u_bar_h"

    again = integrate(_dcp(case1), np.array([1.0, 7.0]), cfg)
    again.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_halving_step_keeps_outcome_and_equilibrium(case1):
    ctrl = CbfQpController.for_scenario(case1)
    coarse = integrate(ctrl, np.array([1.0, 7.0]), IntegratorConfig(dt=1e-3))
    fine = integrate(ctrl, np.array([1.0, 7.0]), IntegratorConfig(dt=5e-4, equilibrium_dwell_steps=4000))
    assert coarse.outcome.kind is fine.outcome.kind is OutcomeKind.UNDESIRED_EQUILIBRIUM
    assert np.linalg.norm(coarse.outcome.point - fine.outcome.point) < 1e-3


def test_generic_controller_base_is_abstract(case1):
    with pytest.raises(NotImplementedError):
        Controller(case1.system, case1.clf, case1.cbf).evaluate(np.array([1.0, 7.0]))
