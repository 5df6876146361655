"""Closed-form and brute-force solvers for the 2x2 lower-triangular LCP.

The problem is: find z = (z1, z2) >= 0 with w = A z + q >= 0 and z.w = 0, where

    A = [[a, 0],
         [c, d]]

The closed form is valid when either (a > 0 and d > 0) or (a = 0, d > 0, q1 > 0).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

EPS_POS = 1e-12

# Tolerances for the solution invariants and the oracle.
COMPLEMENTARITY_TOL = 1e-10
FEASIBILITY_TOL = 1e-12
TIE_TOL = 1e-10


class LcpAssumptionError(ValueError):
    """The instance violates the conditions under which the closed form applies.

    ``condition`` names the failed requirement, e.g. ``"d>0"`` or ``"q1>0"``.
    """

    def __init__(self, condition: str, message: str):
        super().__init__(message)
        self.condition = condition


class OracleFailure(RuntimeError):
    """Active-set enumeration found no KKT point, or several distinct ones."""


def _check_valid(a: float, d: float, q1: float) -> str:
    """Return ``"i"`` or ``"ii"`` for the validity case, raise otherwise."""
    if not (d > EPS_POS):
        raise LcpAssumptionError("d>0", f"bottom-right entry d={d!r} must be positive")
    if a > EPS_POS:
        return "i"
    if a < 0.0:
        raise LcpAssumptionError("a>=0", f"top-left entry a={a!r} must be nonnegative")
    if not (q1 > EPS_POS):
        raise LcpAssumptionError(
            "q1>0", f"with a={a!r} treated as zero, q1={q1!r} must be positive"
        )
    return "ii"


@dataclass(frozen=True)
class TriangularLcp:
    """Data of LCP(q, A) with A lower triangular; the (1,2) entry is always zero."""

    a: float
    c: float
    d: float
    q1: float
    q2: float

    def __post_init__(self):
        _check_valid(self.a, self.d, self.q1)

    @property
    def case(self) -> str:
        return _check_valid(self.a, self.d, self.q1)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, 0.0], [self.c, self.d]])

    @property
    def q(self) -> np.ndarray:
        return np.array([self.q1, self.q2])


@dataclass(frozen=True)
class LcpSolution:
    z1: float
    z2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.z1, self.z2])


def residuals(problem: TriangularLcp, sol: LcpSolution) -> tuple[float, float, float]:
    """Return (complementarity, min slack w1, min slack w2) for a candidate solution."""
    w1 = problem.a * sol.z1 + problem.q1
    w2 = problem.c * sol.z1 + problem.d * sol.z2 + problem.q2
    return abs(sol.z1 * w1) + abs(sol.z2 * w2), w1, w2


def solve_scalar_lcp(a_tilde: float, b_tilde: float) -> float:
    """Solve 0 <= t  _|_  a_tilde*t + b_tilde >= 0 for a_tilde > 0."""
    if not (a_tilde > 0.0):
        raise ValueError(f"scalar LCP needs a_tilde > 0, got {a_tilde!r}")
    return max(-b_tilde, 0.0) / a_tilde


def triangular_lcp_values(a: float, c: float, d: float, q1: float, q2: float) -> tuple[float, float]:
    """Closed form on plain floats; validates like :class:`TriangularLcp`.

    This is the allocation-free path used inside controller evaluations.
    """
    if _check_valid(a, d, q1) == "i":
        z1 = max(-q1, 0.0) / a
    else:
        z1 = 0.0
    return z1, max(-(c * z1 + q2), 0.0) / d


def solve_triangular_lcp(problem: TriangularLcp) -> LcpSolution:
    """Closed-form solution: z1 from the first row, then z2 from the second."""
    z1, z2 = triangular_lcp_values(problem.a, problem.c, problem.d, problem.q1, problem.q2)
    sol = LcpSolution(z1, z2)
    if __debug__:
        _assert_invariants(problem, sol)
    return sol


def _assert_invariants(problem: TriangularLcp, sol: LcpSolution) -> None:
    comp, w1, w2 = residuals(problem, sol)
    scale = 1.0 + abs(problem.q1) + abs(problem.q2) + abs(problem.c * sol.z1)
    assert sol.z1 >= 0.0 and sol.z2 >= 0.0, sol
    assert w1 >= -FEASIBILITY_TOL * scale and w2 >= -FEASIBILITY_TOL * scale, (w1, w2)
    # Each slack carries round-off of order scale, and is multiplied by its z.
    assert comp <= COMPLEMENTARITY_TOL * scale * (1.0 + sol.z1 + sol.z2), comp


def brute_force_lcp(problem: TriangularLcp) -> LcpSolution:
    """Verification oracle: enumerate the four active sets.

    For each subset S of free variables, solve A[S,S] z[S] = -q[S] with the other
    entries fixed at zero, then keep the candidates that are KKT points. Near a tie two patterns can both pass the feasibility
    tolerance; candidates that agree within ``TIE_TOL`` plus the slack amplified by
    the submatrix inverse norms are merged, keeping the smaller norm.
    """
    (a11, a12), (a21, a22) = problem.matrix.tolist()
    q1, q2 = problem.q.tolist()
    scale = 1.0 + abs(q1) + abs(q2)
    abs_a = abs(a11) + abs(a12) + abs(a21) + abs(a22)
    found: list[tuple[float, float]] = []
    # Bound on how far the feasibility slack can move a candidate: the largest
    # inverse norm over the nonsingular principal submatrices.
    amplification = 1.0
    worst_tol = 0.0
    for free1, free2 in itertools.product((False, True), repeat=2):
        if free1 and free2:
            det = a11 * a22 - a12 * a21
            if abs(det) <= EPS_POS:
                continue
            amplification = max(amplification, abs_a / abs(det))
            z1 = (-q1 * a22 + q2 * a12) / det
            z2 = (-q2 * a11 + q1 * a21) / det
        elif free1:
            if abs(a11) <= EPS_POS:
                continue
            amplification = max(amplification, 1.0 / abs(a11))
            z1, z2 = -q1 / a11, 0.0
        elif free2:
            if abs(a22) <= EPS_POS:
                continue
            amplification = max(amplification, 1.0 / abs(a22))
            z1, z2 = 0.0, -q2 / a22
        else:
            z1 = z2 = 0.0
        w1 = a11 * z1 + a12 * z2 + q1
        w2 = a21 * z1 + a22 * z2 + q2
        tol = FEASIBILITY_TOL * (scale + abs_a * (abs(z1) + abs(z2)))
        if min(z1, z2, w1, w2) < -tol:
            continue
        found.append((max(z1, 0.0), max(z2, 0.0)))
        worst_tol = max(worst_tol, tol)

    if not found:
        raise OracleFailure(f"no KKT-feasible active set for {problem}")
    found.sort(key=lambda v: math.hypot(*v))
    best = found[0]
    for other in found[1:]:
        spread = max(abs(other[0] - best[0]), abs(other[1] - best[1]))
        allowed = TIE_TOL * (1.0 + max(abs(best[0]), abs(best[1]))) + 4.0 * amplification * worst_tol
        if spread > allowed:
            raise OracleFailure(f"multiple distinct KKT points for {problem}: {found}")
    return LcpSolution(float(best[0]), float(best[1]))
