"""Boundary-set classification, equilibrium residuals and the null-space gain bound.

On the obstacle boundary the DCP closed loop splits as ``F_u(x) + u_bar_h k G w_p``
(see :func:`clf_cbf_dcp.simulation.dcp_field_split`). A nonzero equilibrium needs
``-F_u`` to point along ``G w_p``; the sets below collect boundary points where that
alignment holds (Omega), where the safety magnitude is active as well (X), where it
is also small (Q) and the inactive points bordering X (S).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .certificates import CertificateFunction, ControlAffineSystem
from .controllers import (
    GRAD_TOL,
    Controller,
    DcpController,
    DegenerateCbfGradient,
    NominalController,
)
from .simulation import closed_loop_field, dcp_field_split

log = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-10
FU_MIN_NORM = 1e-8
UBAR_ACTIVE_TOL = 1e-10
GWP_MIN_NORM = 1e-10
MIN_SAMPLES = 8
SLOPE_FLOOR = 1e-12
LOCAL_SLOPE_WINDOW = 5


class SamplingError(RuntimeError):
    """The boundary could not be sampled (bad seed, or too few rays hit it)."""


class WpDegeneracyError(RuntimeError):
    """``G w_p`` (nearly) vanishes on X, so the gain bound is undefined."""


# --------------------------------------------------------------------------
# Boundary sampling


def sample_boundary(cbf: CertificateFunction, n_samples: int, domain_box: np.ndarray,
                    seeds) -> np.ndarray:
    """Points on ``h = 0`` found along ``n_samples`` rays cast from each seed.

    Seeds must lie inside the obstacle (``h < 0``). Each ray is marched outward
    until ``h`` changes sign and the crossing is refined with Brent's method. With
    several seeds a point is kept only if the casting seed is its nearest seed, so
    overlapping fans do not double-sample. Only planar states are supported.
    Returns an ``(N, 2)`` array ordered seed by seed, by ray angle.
    """
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be at least {MIN_SAMPLES}, got {n_samples}")
    seeds = [np.asarray(s, dtype=float) for s in seeds]
    if not seeds:
        raise SamplingError("no seed points given")
    box = np.asarray(domain_box, dtype=float)
    if box.shape != (2, 2):
        raise ValueError("boundary sampling supports planar states only")
    seed_arr = np.array(seeds)

    points = []
    for si, seed in enumerate(seeds):
        h_seed = float(cbf.value(seed))
        if not h_seed < 0.0:
            raise SamplingError(f"seed {seed} is not inside the obstacle (h={h_seed:.3g})")
        for theta in 2.0 * np.pi * np.arange(n_samples) / n_samples:
            d = np.array([math.cos(theta), math.sin(theta)])
            p = _ray_crossing(cbf, seed, d, box)
            if p is None:
                log.warning("ray at angle %.4f from seed %s finds no sign change", theta, seed)
                continue
            if len(seeds) > 1:
                nearest = int(np.argmin(np.linalg.norm(seed_arr - p, axis=1)))
                if nearest != si:
                    continue
            points.append(p)
    if len(points) < MIN_SAMPLES:
        raise SamplingError(f"only {len(points)} boundary points found, need {MIN_SAMPLES}")
    return np.array(points)


def _ray_crossing(cbf, seed, d, box, n_march=400):
    # Parameter where the ray leaves the box.
    with np.errstate(divide="ignore"):
        t_hi = np.where(d > 0, (box[:, 1] - seed) / d, np.where(d < 0, (box[:, 0] - seed) / d, np.inf))
    t_max = float(np.min(t_hi))
    if not t_max > 0:
        return None

    def h_at(t):
        return float(cbf.value(seed + t * d))

    ts = np.linspace(0.0, t_max, n_march + 1)
    prev = ts[0]
    for t in ts[1:]:
        if h_at(t) >= 0.0:
            root = brentq(h_at, prev, t, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
            p = seed + root * d
            # Brent's bracket leaves |h| at round-off level; reject the ray otherwise.
            if abs(h_at(root)) > BOUNDARY_TOL:
                return None
            return p
        prev = t
    return None


# --------------------------------------------------------------------------
# Classification


@dataclass(frozen=True)
class BoundarySample:
    x: np.ndarray
    h: float
    Fu: np.ndarray
    Gwp: np.ndarray
    u_bar_h: float
    parallel_residual: float
    in_Omega: bool = False
    in_X: bool = False
    in_S: bool = False
    in_Q: bool = False


def alignment_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in radians between ``a`` and ``b`` (accurate near 0 and pi)."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return math.pi
    ua = a / na
    ub = b / nb
    return 2.0 * math.atan2(float(np.linalg.norm(ua - ub)), float(np.linalg.norm(ua + ub)))


def classify_boundary(samples: np.ndarray, controller: DcpController, nu: float,
                      alignment_tol: float = 1e-3) -> list[BoundarySample]:
    """Assign Omega/X/S/Q membership to boundary points.

    ``F_u``, ``G w_p`` and ``u_bar_h`` do not depend on the gain ``k``, so the
    controller's ``k`` is irrelevant here; only its ``wp_sign`` matters. Two samples
    are neighbours when closer than twice the median nearest-neighbour spacing.
    """
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu!r}")
    samples = np.asarray(samples, dtype=float)
    base = []
    for x in samples:
        out = controller.evaluate(x)
        Fu, Gwp = dcp_field_split(controller, x, out)
        angle = alignment_angle(-Fu, Gwp)
        in_omega = angle <= alignment_tol and float(np.linalg.norm(Fu)) > FU_MIN_NORM
        in_x = in_omega and out.u_bar_h > UBAR_ACTIVE_TOL
        in_q = in_x and out.u_bar_h < nu
        base.append(BoundarySample(x.copy(), out.h_value, Fu, Gwp, out.u_bar_h, angle,
                                   in_omega, in_x, False, in_q))

    neighbours = boundary_neighbours(samples)
    result = []
    for i, s in enumerate(base):
        in_s = (s.in_Omega and s.u_bar_h <= UBAR_ACTIVE_TOL
                and any(base[j].in_X for j in neighbours[i]))
        result.append(BoundarySample(s.x, s.h, s.Fu, s.Gwp, s.u_bar_h, s.parallel_residual,
                                     s.in_Omega, s.in_X, in_s, s.in_Q))
    return result


def boundary_neighbours(samples: np.ndarray) -> list[list[int]]:
    """Indices of samples within twice the median nearest-neighbour gap of each sample."""
    if len(samples) < 2:
        return [[] for _ in samples]
    tree = cKDTree(samples)
    dist, _ = tree.query(samples, k=2)
    gap = float(np.median(dist[:, 1]))
    return [[j for j in idx if j != i]
            for i, idx in enumerate(tree.query_ball_point(samples, 2.0 * gap))]


@dataclass(frozen=True)
class KBoundResult:
    """Sampled gain bound ``k > sup_X |F_u| / (nu inf_X |G w_p|)``."""

    nu: float
    sup_Fu_norm: float
    inf_Gwp_norm: float
    k_lower_bound: float
    sample_count: int
    x_empty: bool = False
    omega_count: int = 0
    x_count: int = 0
    s_count: int = 0
    q_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def k_lower_bound(classified: list[BoundarySample], nu: float) -> KBoundResult:
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu!r}")
    counts = dict(
        omega_count=sum(s.in_Omega for s in classified),
        x_count=sum(s.in_X for s in classified),
        s_count=sum(s.in_S for s in classified),
        q_count=sum(s.in_Q for s in classified),
    )
    in_x = [s for s in classified if s.in_X]
    if not in_x:
        return KBoundResult(nu, 0.0, math.inf, 0.0, len(classified), x_empty=True, **counts)
    sup_fu = max(float(np.linalg.norm(s.Fu)) for s in in_x)
    inf_gwp = min(float(np.linalg.norm(s.Gwp)) for s in in_x)
    if inf_gwp < GWP_MIN_NORM:
        raise WpDegeneracyError(f"inf |G w_p| over X is {inf_gwp:.3e}")
    return KBoundResult(nu, sup_fu, inf_gwp, sup_fu / (nu * inf_gwp), len(classified), **counts)


CLASSIFICATION_COLUMNS = ("h", "Fu_norm", "Gwp_norm", "u_bar_h", "parallel_residual",
                          "in_Omega", "in_X", "in_S", "in_Q")


def write_classification_csv(classified: list[BoundarySample], path: str | Path) -> None:
    n = len(classified[0].x) if classified else 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(n)] + list(CLASSIFICATION_COLUMNS))
        for s in classified:
            w.writerow([repr(float(v)) for v in s.x]
                       + [repr(float(s.h)), repr(float(np.linalg.norm(s.Fu))),
                          repr(float(np.linalg.norm(s.Gwp))), repr(float(s.u_bar_h)),
                          repr(float(s.parallel_residual))]
                       + [int(s.in_Omega), int(s.in_X), int(s.in_S), int(s.in_Q)])


def read_classification_csv(path: str | Path) -> list[dict]:
    """Rows of a classification CSV as dicts of floats and bools."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: (v == "1") if k.startswith("in_") else float(v) for k, v in row.items()})
    return rows


# --------------------------------------------------------------------------
# Equilibrium residuals


def qp_equilibrium_residual(sys: ControlAffineSystem, cbf: CertificateFunction,
                            nominal: NominalController, x) -> float:
    """Defect of the CBF-QP equilibrium condition at ``x``.

    With ``e = f + G r`` the safety-filtered closed loop is stationary where
    ``e = (grad h . e / |L_G h|^2) G L_G h^T`` and ``grad h . e < 0``. Returns the
    norm of the difference, or ``inf`` when ``grad h . e >= 0``.
    """
    x = np.asarray(x, dtype=float)
    Gx = sys.input_matrix(x)
    gh = cbf.grad(x)
    lgh = gh @ Gx
    nh2 = float(lgh @ lgh)
    if nh2 <= GRAD_TOL ** 2:
        raise DegenerateCbfGradient(f"|L_G h| below {GRAD_TOL} at {x}")
    e = sys.drift(x) + Gx @ np.asarray(nominal(x), dtype=float)
    s = float(gh @ e)
    if s >= 0.0:
        return math.inf
    return float(np.linalg.norm(e - (s / nh2) * (Gx @ lgh)))


def dcp_equilibrium_residual(controller: DcpController, x) -> float:
    """``|F_u(x) + u_bar_h k G w_p|``, the closed-loop speed of the DCP controller."""
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        raise ValueError("the DCP closed loop is undefined at the origin")
    return float(np.linalg.norm(closed_loop_field(controller, x)))


# --------------------------------------------------------------------------
# Continuity probe across F_l = 0


@dataclass(frozen=True)
class ContinuityReport:
    """Result of sampling ``u`` along short segments that cross ``F_l = 0``.

    ``worst_ratio`` is the largest per-step slope divided by the median of the
    nonzero slopes next to it (``LOCAL_SLOPE_WINDOW`` on each side). A jump in ``u``
    shows up as a ratio far above 1, or as ``inf`` when ``u`` is flat around it. A
    kink, where the slope changes but ``u`` stays continuous, stays near 1 or 2.
    """

    segments: int
    worst_ratio: float
    violations: int
    threshold: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def continuity_probe(controller: Controller, region: np.ndarray, n_crossings: int = 100,
                     half_length: float = 0.05, points_per_segment: int = 201,
                     threshold: float = 10.0, min_norm: float = 0.1,
                     rng: np.random.Generator | None = None,
                     max_attempts: int = 100000) -> ContinuityReport:
    """Check the controller output for jumps across the CLF switching surface.

    Crossing points of ``F_l = 0`` are found by bisection between random pairs of
    states in ``region`` (an (n, 2) box) with opposite ``F_l`` sign. Through each a
    segment in a random direction is sampled; it is kept when it lies inside the
    safe set, away from the origin, and really changes the sign of ``F_l``.
    """
    rng = rng or np.random.default_rng(0)
    region = np.asarray(region, dtype=float)
    lo, hi = region[:, 0], region[:, 1]
    n = len(lo)

    def F_l(x):
        return controller.evaluate(x).F_l

    def admissible(x):
        return np.linalg.norm(x) > min_norm and float(controller.cbf.value(x)) > 0.0

    worst = 0.0
    violations = 0
    segments = 0
    attempts = 0
    while segments < n_crossings:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError(f"found only {segments} usable crossings of F_l = 0")
        a = rng.uniform(lo, hi)
        b = rng.uniform(lo, hi)
        if not (admissible(a) and admissible(b)):
            continue
        fa, fb = F_l(a), F_l(b)
        if fa * fb >= 0.0:
            continue
        for _ in range(60):
            mid = 0.5 * (a + b)
            if F_l(mid) * fa > 0.0:
                a = mid
            else:
                b = mid
        c = 0.5 * (a + b)
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        ts = np.linspace(-half_length, half_length, points_per_segment)
        xs = c + ts[:, None] * d
        if not all(admissible(x) for x in xs):
            continue
        if F_l(xs[0]) * F_l(xs[-1]) >= 0.0:
            continue
        us = np.array([controller.evaluate(x).u for x in xs])
        slopes = np.linalg.norm(np.diff(us, axis=0), axis=1) / (ts[1] - ts[0])
        segments += 1
        peak = int(np.argmax(slopes))
        if slopes[peak] <= SLOPE_FLOOR:
            continue
        # Reference: nonzero slopes around the peak, the peak itself left out. A
        # segment-wide median would flag kinks whose steep side covers half the segment.
        lo_i, hi_i = max(0, peak - LOCAL_SLOPE_WINDOW), peak + LOCAL_SLOPE_WINDOW + 1
        rest = np.concatenate([slopes[lo_i:peak], slopes[peak + 1:hi_i]])
        rest = rest[rest > SLOPE_FLOOR]
        ratio = float(slopes[peak] / np.median(rest)) if rest.size else math.inf
        worst = max(worst, ratio)
        if ratio > threshold:
            violations += 1
    return ContinuityReport(segments, worst, violations, threshold)
