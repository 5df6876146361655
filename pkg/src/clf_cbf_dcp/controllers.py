"""Feedback laws: closed-form CBF-QP, penalty CLF-CBF-QP and the CLF-CBF-DCP controller.

All three report their input in the common parameterization

    u = w_l * u_bar_l + w_h * u_bar_h,    w_l = -L_G V^T,  w_h = L_G h^T (+ k w_p)

so rollouts of different controllers can be compared column by column. For the QP
baselines the magnitudes are the (scaled) constraint multipliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .certificates import (
    CertificateFunction,
    ControlAffineSystem,
    LieData,
    Scenario,
    lie_from_parts,
)
from .lcp import EPS_POS, solve_scalar_lcp, triangular_lcp_values

GRAD_TOL = 1e-10
CLF_ACTIVE_TOL = 1e-10
WP_TOL = 1e-8

NAIVE = "naive"
NULL_SPACE_MODIFIED = "null_space_modified"
NEG_LGV = "neg_lgv"


class ControllerError(RuntimeError):
    """Base class for numerical failures of a feedback law at a given state."""


class DegenerateCbfGradient(ControllerError):
    """``L_G h(x)`` vanishes, so the safety constraint cannot be enforced."""


class ClfDegeneracyError(ControllerError):
    """``F_l(x) > 0`` while ``L_G V(x)`` vanishes: no input can decrease V."""


class NoNullSpaceDirection(ControllerError):
    """No ``w_p`` with ``L_G h w_p = 0`` and ``G w_p != 0`` exists at this state."""


class QpInfeasibleError(ControllerError):
    """No active set of the penalty QP satisfies the KKT conditions."""


@dataclass(frozen=True)
class DcpControllerConfig:
    """Direction-vector choice for the DCP controller.

    ``k`` scales the null-space term ``w_p`` added to ``w_h``; ``wp_sign`` picks one
    of the two unit null-space directions. With ``wh_mode="naive"`` the null-space
    term is dropped altogether.
    """

    k: float = 0.0
    wp_sign: int = 1
    wh_mode: str = NULL_SPACE_MODIFIED
    wl_mode: str = NEG_LGV

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be nonnegative, got {self.k!r}")
        if self.wp_sign not in (1, -1):
            raise ValueError(f"wp_sign must be +1 or -1, got {self.wp_sign!r}")
        if self.wh_mode not in (NAIVE, NULL_SPACE_MODIFIED):
            raise ValueError(f"unknown wh_mode {self.wh_mode!r}")
        if self.wl_mode != NEG_LGV:
            raise ValueError(f"unknown wl_mode {self.wl_mode!r}")


@dataclass(frozen=True)
class ControlOutput:
    u: np.ndarray
    u_bar_l: float
    u_bar_h: float
    w_l: np.ndarray
    w_h: np.ndarray
    w_p: np.ndarray
    F_l: float
    F_h: float
    lgv: np.ndarray
    lgh: np.ndarray
    v_value: float = float("nan")
    h_value: float = float("nan")

    @property
    def cbf_residual(self) -> float:
        """``F_h + L_G h u``; nonnegative for a safe input."""
        return self.F_h + float(self.lgh @ self.u)

    @property
    def clf_residual(self) -> float:
        """``-F_l - L_G V w_l u_bar_l``; nonnegative when the CLF constraint holds."""
        return -self.F_l - float(self.lgv @ self.w_l) * self.u_bar_l


@dataclass(frozen=True)
class NominalController:
    """A stabilizing feedback ``r(x)`` used as reference by the CBF-QP."""

    eval: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.eval(x)


def _min_norm_from_lie(lv: LieData) -> tuple[np.ndarray, float]:
    """Min-norm stabilizing input ``-(F_l)_+ / |L_G V|^2 L_G V^T`` and its magnitude."""
    if lv.F <= 0.0:
        return np.zeros_like(lv.lg), 0.0
    nv2 = float(lv.lg @ lv.lg)
    if nv2 <= EPS_POS:
        if lv.F > CLF_ACTIVE_TOL:
            raise ClfDegeneracyError(f"F_l={lv.F:.3e} > 0 with |L_G V|^2={nv2:.3e}")
        return np.zeros_like(lv.lg), 0.0
    mag = lv.F / nv2
    return -mag * lv.lg, mag


def min_norm_nominal(sys: ControlAffineSystem, clf: CertificateFunction) -> NominalController:
    def r(x):
        x = np.asarray(x, dtype=float)
        lv = lie_from_parts(clf, x, sys.drift(x), sys.input_matrix(x))
        return _min_norm_from_lie(lv)[0]

    return NominalController(r)


def _wp_from_parts(Gx: np.ndarray, lgh: np.ndarray, sign: int) -> np.ndarray:
    m = Gx.shape[1]
    if m == 2:
        # Rotation of L_G h by +-90 degrees: continuous in x, unlike a component-sign rule.
        wp = np.array([-lgh[1], lgh[0]]) * (sign / np.sqrt(lgh @ lgh))
    else:
        _, sg, vt_g = np.linalg.svd(Gx)
        rank_g = int(np.sum(sg > WP_TOL * max(1.0, sg[0] if sg.size else 1.0)))
        stacked = np.vstack([lgh[None, :], vt_g[rank_g:]])
        _, s, vt = np.linalg.svd(stacked)
        smallest = s[-1] if s.size == m else 0.0
        if smallest > WP_TOL:
            raise NoNullSpaceDirection(f"stacked null-space matrix is full rank (sigma_min={smallest:.3e})")
        wp = vt[-1] / np.linalg.norm(vt[-1])
        first = wp[np.flatnonzero(np.abs(wp) > 1e-12)[0]]
        if np.sign(first) != sign:
            wp = -wp
    if np.linalg.norm(Gx @ wp) <= WP_TOL:
        raise NoNullSpaceDirection("G(x) w_p vanishes; input matrix rank is below 2")
    return wp


def compute_wp(sys: ControlAffineSystem, cbf: CertificateFunction, x: np.ndarray,
               sign: int = 1) -> np.ndarray:
    """Unit input direction that leaves ``h`` unchanged but still moves the state.

    For two inputs this is ``L_G h^T`` rotated by +90 degrees (``sign=+1``) or -90
    degrees (``sign=-1``). Otherwise it is taken from the null space of
    ``[L_G h; N^T]`` with ``N`` a null-space basis of ``G``, signed so its first
    nonzero component has the requested sign.
    """
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign!r}")
    x = np.asarray(x, dtype=float)
    Gx = sys.input_matrix(x)
    lgh = cbf.grad(x) @ Gx
    if lgh @ lgh <= GRAD_TOL ** 2:
        raise DegenerateCbfGradient(f"|L_G h| below {GRAD_TOL} at {x}")
    return _wp_from_parts(Gx, lgh, sign)


def _as_list(v) -> list:
    return v.tolist() if isinstance(v, np.ndarray) else [float(a) for a in v]


def _as_rows(G) -> list:
    return G.tolist() if isinstance(G, np.ndarray) else [[float(a) for a in row] for row in G]


def _dot(a, b) -> float:
    if len(a) == 2:
        return a[0] * b[0] + a[1] * b[1]
    acc = 0.0
    for p, q in zip(a, b):
        acc += p * q
    return acc


def _row_times(g, Gx) -> list:
    """``g^T G`` for a gradient ``g`` and an (n, m) matrix stored as rows."""
    out = [0.0] * len(Gx[0])
    for gi, row in zip(g, Gx):
        if gi:
            for j, gij in enumerate(row):
                out[j] += gi * gij
    return out


def _mat_times(Gx, u) -> list:
    return [_dot(row, u) for row in Gx]


class _Terms(NamedTuple):
    fx: list
    Gx: list
    v: float
    h: float
    lgv: list
    lgh: list
    F_l: float
    F_h: float
    nh2: float
    grad_h: list


class _Eval(NamedTuple):
    """Controller output on plain floats; ``evaluate`` turns it into a ControlOutput."""

    u: list
    u_bar_l: float
    u_bar_h: float
    w_l: list
    w_h: list
    w_p: list
    terms: _Terms


class Controller:
    """Bundles a system with its certificates; subclasses implement ``_eval``.

    ``_eval`` works on a state given as a list of floats and is what the integrator
    calls; for two-dimensional problems plain float arithmetic is several times
    faster than numpy on length-2 arrays. ``evaluate`` is the public numpy view.
    """

    name = "controller"

    def __init__(self, sys: ControlAffineSystem, clf: CertificateFunction,
                 cbf: CertificateFunction):
        self.sys = sys
        self.clf = clf
        self.cbf = cbf
        # Structure hints from the system let _terms skip callables and products.
        n = sys.state_dim
        self._A_rows = None
        self._A_identity = False
        if sys.drift_matrix is not None:
            A = np.asarray(sys.drift_matrix, dtype=float)
            self._A_rows = A.tolist()
            self._A_identity = bool(np.array_equal(A, np.eye(n)))
        self._G_rows = None
        self._G_identity = False
        if sys.constant_input:
            G = np.asarray(sys.input_matrix(np.zeros(n)), dtype=float)
            self._G_rows = G.tolist()
            self._G_identity = G.shape == (n, n) and bool(np.array_equal(G, np.eye(n)))
        self._alpha_l = clf.class_k.fn
        self._alpha_h = cbf.class_k.fn

    @classmethod
    def for_scenario(cls, scenario: Scenario, *args, **kwargs):
        return cls(scenario.system, scenario.clf, scenario.cbf, *args, **kwargs)

    def _terms(self, x: list) -> _Terms:
        if self._A_identity:
            fx = x
        elif self._A_rows is not None:
            fx = [_dot(row, x) for row in self._A_rows]
        else:
            fx = _as_list(self.sys.drift(x))
        v, gv = self.clf.value_grad(x)
        h, gh = self.cbf.value_grad(x)
        Gx = self._G_rows
        if Gx is None:
            Gx = _as_rows(self.sys.input_matrix(x))
        if self._G_identity:
            lgv = gv
            lgh = gh
        else:
            lgv = _row_times(gv, Gx)
            lgh = _row_times(gh, Gx)
        nh2 = _dot(lgh, lgh)
        if nh2 <= GRAD_TOL ** 2:
            raise DegenerateCbfGradient(f"|L_G h| below {GRAD_TOL} at {x}")
        F_l = _dot(gv, fx) + self._alpha_l(v)
        F_h = _dot(gh, fx) + self._alpha_h(h)
        return _Terms(fx, Gx, v, h, lgv, lgh, F_l, F_h, nh2, gh)

    def _eval(self, x: list) -> _Eval:
        raise NotImplementedError

    def evaluate(self, x: np.ndarray) -> ControlOutput:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.sys.state_dim,):
            raise ValueError(f"state has shape {x.shape}, expected ({self.sys.state_dim},)")
        e = self._eval(x.tolist())
        t = e.terms
        arr = np.array
        return ControlOutput(arr(e.u), e.u_bar_l, e.u_bar_h, arr(e.w_l), arr(e.w_h), arr(e.w_p),
                             t.F_l, t.F_h, arr(t.lgv), arr(t.lgh), t.v, t.h)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x).u


def _wp_list(Gx: list, lgh: list, sign: int) -> list:
    if len(lgh) == 2:
        scale = sign / math.sqrt(lgh[0] * lgh[0] + lgh[1] * lgh[1])
        wp = [-lgh[1] * scale, lgh[0] * scale]
        gwp = _mat_times(Gx, wp)
        if math.sqrt(_dot(gwp, gwp)) <= WP_TOL:
            raise NoNullSpaceDirection("G(x) w_p vanishes; input matrix rank is below 2")
        return wp
    return _wp_from_parts(np.array(Gx), np.array(lgh), sign).tolist()


class DcpController(Controller):
    """CLF-CBF-DCP feedback: both magnitudes come from a triangular LCP."""

    name = "dcp"

    def __init__(self, sys, clf, cbf, cfg: DcpControllerConfig | None = None):
        super().__init__(sys, clf, cbf)
        self.cfg = cfg or DcpControllerConfig()

    def _eval(self, x: list) -> _Eval:
        if not any(x):
            raise ValueError("the DCP controller is undefined at the origin")
        t = self._terms(x)
        lgv, lgh = t.lgv, t.lgh
        nv2 = _dot(lgv, lgv)
        w_l = [-a for a in lgv]

        if nv2 > EPS_POS:
            u_bar_l, u_bar_h = triangular_lcp_values(nv2, _dot(lgh, w_l), t.nh2, -t.F_l, t.F_h)
        elif t.F_l > CLF_ACTIVE_TOL:
            raise ClfDegeneracyError(f"F_l={t.F_l:.3e} > 0 with |L_G V|^2={nv2:.3e} at {x}")
        else:
            # Stability is not endangered; the magnitude along w_l is set to zero.
            u_bar_l = 0.0
            u_bar_h = solve_scalar_lcp(t.nh2, t.F_h)

        cfg = self.cfg
        if cfg.wh_mode == NAIVE:
            w_p = [0.0] * len(lgh)
            w_h = lgh
        else:
            w_p = _wp_list(t.Gx, lgh, cfg.wp_sign)
            w_h = [a + cfg.k * b for a, b in zip(lgh, w_p)]
        u = [a * u_bar_l + b * u_bar_h for a, b in zip(w_l, w_h)]
        return _Eval(u, u_bar_l, u_bar_h, w_l, w_h, w_p, t)


def dcp_control(sys: ControlAffineSystem, clf: CertificateFunction, cbf: CertificateFunction,
                cfg: DcpControllerConfig, x: np.ndarray) -> ControlOutput:
    return DcpController(sys, clf, cbf, cfg).evaluate(x)


def _min_norm_list(F_l: float, lgv: list) -> tuple[list, float]:
    if F_l <= 0.0:
        return [0.0] * len(lgv), 0.0
    nv2 = _dot(lgv, lgv)
    if nv2 <= EPS_POS:
        if F_l > CLF_ACTIVE_TOL:
            raise ClfDegeneracyError(f"F_l={F_l:.3e} > 0 with |L_G V|^2={nv2:.3e}")
        return [0.0] * len(lgv), 0.0
    mag = F_l / nv2
    return [-mag * a for a in lgv], mag


class CbfQpController(Controller):
    """Minimal perturbation of a nominal stabilizing law subject to the CBF constraint.

    The QP has the closed form: keep ``r(x)`` when it is already safe, otherwise
    project it onto the constraint boundary along ``L_G h^T``.
    """

    name = "cbf_qp"

    def __init__(self, sys, clf, cbf, nominal: NominalController | None = None):
        super().__init__(sys, clf, cbf)
        self.nominal = nominal

    def _eval(self, x: list) -> _Eval:
        t = self._terms(x)
        if self.nominal is None:
            r, u_bar_l = _min_norm_list(t.F_l, t.lgv)
        else:
            r = _as_list(self.nominal(np.array(x)))
            nv2 = _dot(t.lgv, t.lgv)
            u_bar_l = -_dot(t.lgv, r) / nv2 if nv2 > EPS_POS else 0.0
        e = [a + b for a, b in zip(t.fx, _mat_times(t.Gx, r))]
        s = _dot(t.grad_h, e) + self.cbf.class_k(t.h)
        if s >= 0.0:
            u = r
            u_bar_h = 0.0
        else:
            u_bar_h = -s / t.nh2
            u = [a + u_bar_h * b for a, b in zip(r, t.lgh)]
        return _Eval(u, u_bar_l, u_bar_h, [-a for a in t.lgv], t.lgh, [0.0] * len(t.lgh), t)


def cbf_qp_control(sys: ControlAffineSystem, clf: CertificateFunction, cbf: CertificateFunction,
                   nominal: NominalController | None, x: np.ndarray) -> np.ndarray:
    return CbfQpController(sys, clf, cbf, nominal).evaluate(x).u


def _penalty_multipliers(aa: float, ab: float, bb: float, F_l: float, F_h: float,
                         penalty: float) -> tuple[float, float]:
    """KKT multipliers ``(lam_clf, lam_cbf)`` of the penalty QP, by active-set enumeration.

    With ``u = (-lam_clf * lgv + lam_cbf * lgh) / 2`` and ``delta = lam_clf / (2 penalty)``
    the two constraints read, as functions of the multipliers,

        g_clf = F_l - (aa + 1/penalty) lam_clf / 2 + ab lam_cbf / 2   (must be <= 0)
        g_cbf = F_h - ab lam_clf / 2 + bb lam_cbf / 2                  (must be >= 0)

    The objective is strictly convex, so at most one pattern is a KKT point up to ties.
    """
    p11 = (aa + 1.0 / penalty) / 2.0
    p12 = ab / 2.0
    p22 = bb / 2.0
    tol = 1e-9 * (1.0 + abs(F_l) + abs(F_h))
    candidates = [(0.0, 0.0), (F_l / p11, 0.0)]
    if p22 > 0.0:
        candidates.append((0.0, -F_h / p22))
    det = p11 * p22 - p12 * p12
    if det > 0.0:
        # Both constraints tight: p11 l1 - p12 l2 = F_l and p12 l1 - p22 l2 = F_h.
        candidates.append(((F_l * p22 - p12 * F_h) / det, (p12 * F_l - p11 * F_h) / det))

    best = None
    for l1, l2 in candidates:
        if l1 < -tol or l2 < -tol:
            continue
        l1 = max(l1, 0.0)
        l2 = max(l2, 0.0)
        if F_l - p11 * l1 + p12 * l2 > tol or F_h - p12 * l1 + p22 * l2 < -tol:
            continue
        # |u|^2 + penalty delta^2 written in the multipliers.
        obj = (aa * l1 * l1 - 2.0 * ab * l1 * l2 + bb * l2 * l2) / 4.0 + l1 * l1 / (4.0 * penalty)
        if best is None or obj < best[0]:
            best = (obj, l1, l2)
    if best is None:
        raise QpInfeasibleError(
            f"no KKT point: F_l={F_l:.3e}, F_h={F_h:.3e}, |L_G V|^2={aa:.3e}, |L_G h|^2={bb:.3e}"
        )
    return best[1], best[2]


def solve_penalty_qp(lgv: np.ndarray, F_l: float, lgh: np.ndarray, F_h: float,
                     penalty: float) -> tuple[np.ndarray, float, float, float]:
    """Minimize ``|u|^2 + penalty*delta^2`` s.t. ``F_l + lgv.u <= delta`` and ``F_h + lgh.u >= 0``.

    Enumerates the four active sets of the two inequality constraints. Returns
    ``(u, delta, lam_clf, lam_cbf)`` for the KKT point; the stationarity condition
    gives ``u = (-lam_clf * lgv + lam_cbf * lgh) / 2`` and ``delta = lam_clf / (2 penalty)``.
    """
    if penalty <= 0:
        raise ValueError(f"penalty must be positive, got {penalty!r}")
    lgv = np.asarray(lgv, dtype=float)
    lgh = np.asarray(lgh, dtype=float)
    l1, l2 = _penalty_multipliers(float(lgv @ lgv), float(lgv @ lgh), float(lgh @ lgh),
                                  float(F_l), float(F_h), penalty)
    u = (-l1 * lgv + l2 * lgh) / 2.0
    return u, l1 / (2.0 * penalty), l1, l2


class PenaltyQpController(Controller):
    """CLF-CBF-QP with the CLF condition softened by a quadratically penalized slack."""

    name = "penalty_qp"

    def __init__(self, sys, clf, cbf, penalty: float = 10.0):
        super().__init__(sys, clf, cbf)
        if penalty <= 0:
            raise ValueError(f"penalty must be positive, got {penalty!r}")
        self.penalty = penalty

    def _eval(self, x: list) -> _Eval:
        t = self._terms(x)
        lgv, lgh = t.lgv, t.lgh
        l1, l2 = _penalty_multipliers(_dot(lgv, lgv), _dot(lgv, lgh), t.nh2, t.F_l, t.F_h,
                                      self.penalty)
        u = [(-l1 * a + l2 * b) / 2.0 for a, b in zip(lgv, lgh)]
        return _Eval(u, l1 / 2.0, l2 / 2.0, [-a for a in lgv], lgh, [0.0] * len(lgh), t)


def penalty_clf_cbf_qp_control(sys: ControlAffineSystem, clf: CertificateFunction,
                               cbf: CertificateFunction, penalty: float,
                               x: np.ndarray) -> np.ndarray:
    return PenaltyQpController(sys, clf, cbf, penalty).evaluate(x).u


CONTROLLER_NAMES = ("cbf_qp", "penalty_qp", "dcp")


def build_controller(name: str, scenario: Scenario, dcp: DcpControllerConfig | None = None,
                     penalty: float = 10.0) -> Controller:
    if name == "dcp":
        return DcpController.for_scenario(scenario, dcp)
    if name == "cbf_qp":
        return CbfQpController.for_scenario(scenario)
    if name == "penalty_qp":
        return PenaltyQpController.for_scenario(scenario, penalty)
    raise ValueError(f"unknown controller {name!r}; expected one of {CONTROLLER_NAMES}")
