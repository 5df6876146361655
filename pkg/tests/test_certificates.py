import numpy as np
import pytest

from clf_cbf_dcp.analysis import sample_boundary
from clf_cbf_dcp.certificates import (
    CertificateFunction,
    ClassKFunction,
    ControlAffineSystem,
    LieData,
    Polynomial,
    cbf_admissible,
    check_gradient,
    check_positive_definite,
    clf_admissible,
    finite_difference_gradient,
    lie_derivatives,
    linear_class_k,
    linear_system,
    quadratic_clf,
)


def _grid21():
    axis = np.linspace(-6.0, 6.0, 21)
    return [np.array([a, b]) for a in axis for b in axis]


def test_case1_lie_derivatives_of_V_at_1_0(case1):
    lie = lie_derivatives(case1.system, case1.clf, np.array([1.0, 0.0]))
    assert lie.lf == pytest.approx(6.0, abs=1e-14)
    np.testing.assert_allclose(lie.lg, [6.0, 0.0], atol=1e-14)
    assert lie.F == pytest.approx(9.0, abs=1e-14)


def test_case1_lie_derivatives_of_h_at_boundary_bottom(case1):
    x = np.array([0.0, 2.0])
    assert case1.cbf.value(x) == 0.0
    lie = lie_derivatives(case1.system, case1.cbf, x)
    assert lie.lf == pytest.approx(-8.0, abs=1e-14)
    np.testing.assert_allclose(lie.lg, [0.0, -4.0], atol=1e-14)
    assert lie.F == pytest.approx(-8.0, abs=1e-14)


def test_lie_term_vanishes_where_drift_and_value_vanish():
    # h = x1 with the drift f = (0, x2): at (0, 1) both f.grad h and alpha(h) are zero.
    sys = ControlAffineSystem(2, 2, lambda x: np.array([0.0, x[1]]), lambda x: np.eye(2), 2)
    cert = CertificateFunction(lambda x: x[0], linear_class_k(1.0), "cbf",
                               gradient=lambda x: np.array([1.0, 0.0]))
    assert lie_derivatives(sys, cert, np.array([0.0, 1.0])).F == 0.0


def _lie(F, lg):
    lg = np.asarray(lg, dtype=float)
    return LieData(lf=F, lg=lg, F=F, value=0.0, grad=lg)


def test_clf_admissible_examples():
    assert clf_admissible(_lie(-1.0, [6.0, 0.0]), np.zeros(2))
    assert clf_admissible(_lie(9.0, [6.0, 0.0]), np.array([-2.0, 0.0]))
    assert not clf_admissible(_lie(9.0, [6.0, 0.0]), np.zeros(2))


def test_cbf_admissible_examples():
    assert cbf_admissible(_lie(3.0, [0.0, -4.0]), np.zeros(2))
    assert cbf_admissible(_lie(-8.0, [0.0, -4.0]), np.array([0.0, -3.0]))
    assert not cbf_admissible(_lie(-8.0, [0.0, -4.0]), np.zeros(2))


def test_scenario_values(case1, case2):
    assert case1.cbf.value(np.array([0.0, 6.0])) == 0.0
    assert case1.cbf.value(np.zeros(2)) == 12.0
    assert case1.clf.value(np.zeros(2)) == 0.0
    assert case2.cbf.value(np.array([0.0, 3.0])) == pytest.approx(16.0 - 2.1 ** 4, abs=1e-12)
    assert case2.cbf.value(np.array([0.0, 3.0])) < 0
    assert case2.cbf.value(np.zeros(2)) == pytest.approx(169.0 - 19.4481, abs=1e-10)


def test_scenario_gradients_match_finite_differences(case1, case2, switching):
    points = _grid21()
    for scen in (case1, case2, switching):
        for cert in (scen.clf, scen.cbf):
            assert check_gradient(cert, points, rel_tol=1e-6) <= 1e-6


def test_fused_evaluation_agrees_with_separate_handles(case2):
    for x in _grid21()[::7]:
        v, g = case2.cbf.value_grad(x.tolist())
        assert v == case2.cbf.value(x)
        np.testing.assert_array_equal(np.asarray(g), case2.cbf.grad(x))


def test_clfs_are_positive_definite(case1, case2):
    for scen in (case1, case2):
        check_positive_definite(scen.clf, _grid21())


def test_lgh_nonzero_on_sampled_boundaries(case1, case2):
    for scen in (case1, case2):
        pts = sample_boundary(scen.cbf, 360, scen.domain, scen.seeds)
        for x in pts:
            lgh = scen.cbf.grad(x) @ scen.system.input_matrix(x)
            assert np.linalg.norm(lgh) > 1e-3


def test_class_k_validation():
    with pytest.raises(ValueError):
        ClassKFunction(lambda s: s + 1.0)
    with pytest.raises(ValueError):
        ClassKFunction(lambda s: -s)
    with pytest.raises(ValueError):
        linear_class_k(0.0)
    assert linear_class_k(2.5)(2.0) == 5.0


def test_cbf_needs_extended_class_k():
    with pytest.raises(ValueError):
        CertificateFunction(lambda x: x[0], linear_class_k(1.0, extended=False), "cbf")
    with pytest.raises(ValueError):
        CertificateFunction(lambda x: x[0], linear_class_k(1.0), "barrier")


def test_finite_difference_fallback():
    cert = CertificateFunction(lambda x: x[0] ** 3 + x[0] * x[1], linear_class_k(1.0), "cbf")
    x = np.array([1.5, -2.0])
    np.testing.assert_allclose(cert.grad(x), [3 * 1.5 ** 2 - 2.0, 1.5], rtol=1e-8)
    np.testing.assert_allclose(finite_difference_gradient(cert.value, x), cert.grad(x))


def test_system_validation():
    with pytest.raises(ValueError, match="vanish"):
        ControlAffineSystem(2, 2, lambda x: x + 1.0, lambda x: np.eye(2), 2)
    with pytest.raises(ValueError, match="shape"):
        ControlAffineSystem(2, 2, lambda x: x, lambda x: np.eye(3), 2)
    with pytest.raises(ValueError, match="drift matrix"):
        ControlAffineSystem(2, 2, lambda x: x, lambda x: np.eye(2), 2, drift_matrix=2 * np.eye(2))
    with pytest.raises(ValueError, match="constant"):
        ControlAffineSystem(2, 2, lambda x: x, lambda x: np.diag([1.0, 1.0 + x[0]]), 2,
                            constant_input=True)


def test_polynomial_matches_case1_barrier(case1):
    poly = Polynomial.from_terms([(1.0, (2, 0)), (1.0, (0, 2)), (-8.0, (0, 1)), (12.0, (0, 0))])
    for x in _grid21()[::5]:
        assert poly(x) == pytest.approx(case1.cbf.value(x), abs=1e-12)
        np.testing.assert_allclose(poly.gradient(x), case1.cbf.grad(x), atol=1e-12)


def test_quadratic_clf_and_linear_system():
    clf = quadratic_clf(np.diag([6.0, 1.0]))
    x = np.array([1.0, 2.0])
    assert clf.value(x) == pytest.approx(5.0)
    np.testing.assert_allclose(clf.grad(x), [6.0, 2.0])
    with pytest.raises(ValueError):
        quadratic_clf(np.diag([1.0, -1.0]))
    sys = linear_system(np.eye(2), np.eye(2))
    np.testing.assert_allclose(sys.dynamics(x, np.ones(2)), [2.0, 3.0])
    with pytest.raises(ValueError):
        linear_system(np.eye(2), np.eye(3))
