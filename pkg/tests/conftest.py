import numpy as np
import pytest

from clf_cbf_dcp.certificates import make_case1_scenario, make_case2_scenario, make_switching_scenario

# Filled by tests/test_acceptance.py: criterion number -> (passed, detail).
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} | {detail}")


@pytest.fixture
def case1():
    return make_case1_scenario()


@pytest.fixture
def case2():
    return make_case2_scenario()


@pytest.fixture
def switching():
    return make_switching_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def safe_grid(scenario, n=21, half=6.0, min_norm=0.1):
    """Points of an n x n grid on [-half, half]^2 inside the safe set, away from the origin."""
    axis = np.linspace(-half, half, n)
    pts = []
    for a in axis:
        for b in axis:
            x = np.array([a, b])
            if np.linalg.norm(x) > min_norm and scenario.cbf.value(x) > 0:
                pts.append(x)
    return pts


@pytest.fixture(scope="session")
def case1_boundary():
    from clf_cbf_dcp.analysis import sample_boundary

    scen = make_case1_scenario()
    return sample_boundary(scen.cbf, 720, scen.domain, scen.seeds)


@pytest.fixture(scope="session")
def threshold_rollouts():
    """Case 1 DCP rollouts from (-5, 4) with k = 14.6 and k = 15 (t_max = 60)."""
    from clf_cbf_dcp.controllers import DcpController, DcpControllerConfig
    from clf_cbf_dcp.simulation import IntegratorConfig, integrate

    scen = make_case1_scenario()
    cfg = IntegratorConfig(t_max=60.0)
    out = {}
    for k in (14.6, 15.0):
        ctrl = DcpController.for_scenario(scen, DcpControllerConfig(k=k))
        out[k] = integrate(ctrl, np.array([-5.0, 4.0]), cfg, scen.domain)
    return out
