"""Closed-loop rollouts with fixed-step RK4, outcome detection and invariant monitoring."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .certificates import CertificateFunction
from .controllers import ControllerError, ControlOutput, Controller, DcpController, _as_list, _dot
from .lcp import LcpAssumptionError

log = logging.getLogger(__name__)

SAFETY_TOL = 1e-6
UBAR_ZERO_TOL = 1e-10


class OutcomeKind(str, Enum):
    REACHED_ORIGIN = "ReachedOrigin"
    UNDESIRED_EQUILIBRIUM = "UndesiredEquilibrium"
    LEFT_DOMAIN = "LeftDomain"
    TIMEOUT = "Timeout"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    point: np.ndarray | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "point": None if self.point is None else [float(v) for v in self.point],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Outcome":
        point = None if d.get("point") is None else np.array(d["point"], dtype=float)
        return cls(OutcomeKind(d["kind"]), point, d.get("error"))


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    t_max: float = 30.0
    origin_tol: float = 1e-3
    equilibrium_speed_tol: float = 1e-4
    equilibrium_dwell_steps: int = 2000

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max!r}")
        if self.dt * self.equilibrium_dwell_steps < 1.0 - 1e-9:
            raise ValueError("equilibrium dwell window must cover at least one time unit")

    @property
    def max_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class TrajectoryRecord:
    """One rollout, sampled at every integration step (row i is time i*dt)."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    h_values: np.ndarray
    v_values: np.ndarray
    u_bar_l: np.ndarray
    u_bar_h: np.ndarray
    outcome: Outcome
    controller: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def final_state(self) -> np.ndarray:
        """Last recorded state; for an empty record (abort on the first evaluation) the
        outcome point, which is the initial state."""
        if len(self) == 0:
            return np.asarray(self.outcome.point, dtype=float)
        return self.states[-1]

    @property
    def min_h(self) -> float:
        """Smallest recorded ``h``; NaN for an empty record."""
        return float(np.min(self.h_values)) if len(self) else math.nan

    def header(self) -> list[str]:
        n = self.states.shape[1]
        m = self.inputs.shape[1]
        return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + ["h", "V", "u_bar_l", "u_bar_h"])

    def write_csv(self, path: str | Path) -> None:
        cols = np.column_stack([self.times, self.states, self.inputs, self.h_values,
                                self.v_values, self.u_bar_l, self.u_bar_h])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in cols:
                w.writerow([repr(float(v)) for v in row])

    def write_outcome_json(self, path: str | Path) -> None:
        payload = {
            "controller": self.controller,
            "outcome": self.outcome.to_dict(),
            "steps": len(self),
            "final_state": [float(v) for v in self.final_state],
            "min_h": self.min_h if len(self) else None,
            **self.meta,
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def read(cls, csv_path: str | Path, json_path: str | Path | None = None) -> "TrajectoryRecord":
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
        n = sum(1 for c in header if c.startswith("x"))
        m = sum(1 for c in header if c.startswith("u") and c[1:].isdigit())
        outcome = Outcome(OutcomeKind.TIMEOUT)
        controller = ""
        meta = {}
        if json_path is not None:
            payload = json.loads(Path(json_path).read_text())
            outcome = Outcome.from_dict(payload.pop("outcome"))
            controller = payload.pop("controller", "")
            for key in ("steps", "final_state", "min_h"):
                payload.pop(key, None)
            meta = payload
        return cls(
            times=data[:, 0],
            states=data[:, 1:1 + n],
            inputs=data[:, 1 + n:1 + n + m],
            h_values=data[:, 1 + n + m],
            v_values=data[:, 2 + n + m],
            u_bar_l=data[:, 3 + n + m],
            u_bar_h=data[:, 4 + n + m],
            outcome=outcome,
            controller=controller,
            meta=meta,
        )


def closed_loop_field(controller: Controller, x: np.ndarray) -> np.ndarray:
    """``f(x) + G(x) u(x)`` for the given feedback law."""
    x = np.asarray(x, dtype=float)
    sys = controller.sys
    return sys.drift(x) + sys.input_matrix(x) @ controller.evaluate(x).u


def dcp_field_split(controller: DcpController, x: np.ndarray,
                    out: ControlOutput | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Split the DCP closed loop into ``F_u(x)`` and ``G(x) w_p(x)``.

    ``F_u`` is the drift plus the inputs along ``-L_G V^T`` and ``L_G h^T``; the full
    field is ``F_u + u_bar_h * k * G w_p``.
    """
    x = np.asarray(x, dtype=float)
    if out is None:
        out = controller.evaluate(x)
    Gx = controller.sys.input_matrix(x)
    Fu = controller.sys.drift(x) + Gx @ (-out.lgv * out.u_bar_l + out.lgh * out.u_bar_h)
    return Fu, Gx @ out.w_p


def integrate(controller: Controller, x0, cfg: IntegratorConfig | None = None,
              domain: np.ndarray | None = None) -> TrajectoryRecord:
    """Roll out ``xdot = f(x) + G(x) u(x)`` from ``x0`` with classic RK4.

    Stops on the first of: ``|x| <= origin_tol`` (ReachedOrigin, input recorded as
    zero on that row); leaving the ``domain`` box (LeftDomain); speed below
    ``equilibrium_speed_tol`` for ``equilibrium_dwell_steps`` consecutive steps
    (UndesiredEquilibrium, located at the mean of the dwell window); ``t_max``
    reached (Timeout). A controller failure ends the record early with outcome
    Aborted. RK4 stage points may fall inside the origin ball; the controller is
    used there as well, only the exact origin gets ``u = 0``.
    """
    cfg = cfg or IntegratorConfig()
    sys = controller.sys
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.state_dim,):
        raise ValueError(f"initial state has shape {x0.shape}, expected ({sys.state_dim},)")
    h0 = float(controller.cbf.value(x0))
    if h0 < 0:
        raise ValueError(f"initial state {x0} is unsafe: h(x0)={h0:.6g} < 0")
    if domain is not None and not _in_box(x0, domain):
        raise ValueError(f"initial state {x0} lies outside the domain box")

    n, m = sys.state_dim, sys.input_dim
    dt = cfg.dt
    half = 0.5 * dt
    sixth = dt / 6.0
    origin_tol2 = cfg.origin_tol ** 2
    speed_tol2 = cfg.equilibrium_speed_tol ** 2
    dwell = cfg.equilibrium_dwell_steps
    lo = hi = None
    if domain is not None:
        lo = domain[:, 0].tolist()
        hi = domain[:, 1].tolist()
    core = controller._eval
    drift = sys.drift

    def field(y):
        if not any(y):
            return _as_list(drift(y))
        e = core(y)
        t = e.terms
        return [fi + _dot(row, e.u) for fi, row in zip(t.fx, t.Gx)]

    states, inputs, hs, vs, ubl, ubh = [], [], [], [], [], []
    window = deque(maxlen=dwell)
    outcome = None
    x = x0.tolist()
    step = 0

    try:
        while True:
            if _dot(x, x) <= origin_tol2:
                states.append(x)
                inputs.append([0.0] * m)
                hs.append(float(controller.cbf.value(x)))
                vs.append(float(controller.clf.value(x)))
                ubl.append(0.0)
                ubh.append(0.0)
                outcome = Outcome(OutcomeKind.REACHED_ORIGIN, np.array(x))
                break

            e = core(x)
            t = e.terms
            k1 = [fi + _dot(row, e.u) for fi, row in zip(t.fx, t.Gx)]
            states.append(x)
            inputs.append(e.u)
            hs.append(t.h)
            vs.append(t.v)
            ubl.append(e.u_bar_l)
            ubh.append(e.u_bar_h)

            if lo is not None and any(a < l or a > u for a, l, u in zip(x, lo, hi)):
                outcome = Outcome(OutcomeKind.LEFT_DOMAIN, np.array(x))
                break
            if _dot(k1, k1) <= speed_tol2:
                window.append(x)
                if len(window) >= dwell:
                    outcome = Outcome(OutcomeKind.UNDESIRED_EQUILIBRIUM, np.mean(window, axis=0))
                    break
            else:
                window.clear()
            if step >= cfg.max_steps:
                outcome = Outcome(OutcomeKind.TIMEOUT, np.array(x))
                break

            k2 = field([a + half * b for a, b in zip(x, k1)])
            k3 = field([a + half * b for a, b in zip(x, k2)])
            k4 = field([a + dt * b for a, b in zip(x, k3)])
            x = [a + sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4)]
            step += 1
    except (ControllerError, LcpAssumptionError, FloatingPointError, ValueError) as exc:
        log.warning("rollout aborted at step %d: %s", step, exc)
        outcome = Outcome(OutcomeKind.ABORTED, np.array(x), f"{type(exc).__name__}: {exc}")

    rows = len(states)
    # A failure between recording the state and its input leaves one state unmatched.
    rows = min(rows, len(inputs))
    return TrajectoryRecord(
        times=np.arange(rows) * dt,
        states=np.array(states[:rows], dtype=float).reshape(rows, n),
        inputs=np.array(inputs[:rows], dtype=float).reshape(rows, m),
        h_values=np.array(hs[:rows], dtype=float),
        v_values=np.array(vs[:rows], dtype=float),
        u_bar_l=np.array(ubl[:rows], dtype=float),
        u_bar_h=np.array(ubh[:rows], dtype=float),
        outcome=outcome,
        controller=controller.name,
        meta={"x0": x0.tolist(), "dt": dt},
    )


def _in_box(x, box) -> bool:
    return bool(np.all(x >= box[:, 0]) and np.all(x <= box[:, 1]))


@dataclass(frozen=True)
class InvariantReport:
    """Numerical checks of the CLF decrease and CBF conditions along a record.

    Derivatives are forward differences over one step. The class-K terms are taken
    at the step midpoint (average of the two endpoint values), which is where the
    forward difference is second-order accurate.
    """

    max_clf_residual: float  # max of Vdot + alpha_l(V) over steps with u_bar_h = 0
    min_h: float
    min_cbf_residual: float  # min of min(0, hdot + alpha_h(h))
    max_v_increase: float  # max of V[i+1] - V[i] over steps with u_bar_h = 0
    clf_steps: int


def monitor_invariants(record: TrajectoryRecord, clf: CertificateFunction,
                       cbf: CertificateFunction) -> InvariantReport:
    dt = record.times[1] - record.times[0] if len(record) > 1 else 1.0
    v = record.v_values
    h = record.h_values
    if len(record) < 2:
        return InvariantReport(-math.inf, float(np.min(h)), 0.0, -math.inf, 0)

    v_dot = np.diff(v) / dt
    h_dot = np.diff(h) / dt
    v_mid = 0.5 * (v[1:] + v[:-1])
    h_mid = 0.5 * (h[1:] + h[:-1])
    alpha_l = np.array([clf.class_k(s) for s in v_mid])
    alpha_h = np.array([cbf.class_k(s) for s in h_mid])

    inactive = (record.u_bar_h[:-1] <= UBAR_ZERO_TOL) & (record.u_bar_h[1:] <= UBAR_ZERO_TOL)
    clf_res = (v_dot + alpha_l)[inactive]
    cbf_res = np.minimum(0.0, h_dot + alpha_h)
    dv = np.diff(v)[inactive]
    return InvariantReport(
        max_clf_residual=float(clf_res.max()) if clf_res.size else -math.inf,
        min_h=float(np.min(h)),
        min_cbf_residual=float(cbf_res.min()),
        max_v_increase=float(dv.max()) if dv.size else -math.inf,
        clf_steps=int(inactive.sum()),
    )
