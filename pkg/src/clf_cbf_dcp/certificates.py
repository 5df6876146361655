"""Control-affine dynamics, CLF/CBF certificates and the two planar obstacle scenarios.

A system is ``xdot = f(x) + G(x) u`` with ``x`` in R^n and ``u`` in R^m. Certificates
carry an analytic gradient (or fall back to central differences) and the class-K
function used in their decrease/invariance condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FD_STEP = 1e-5
ADMISSIBLE_TOL = 1e-10

CLF = "clf"
CBF = "cbf"


@dataclass(frozen=True)
class ClassKFunction:
    """Scalar class-K (domain >= 0) or extended class-K (domain R) function."""

    fn: Callable[[float], float]
    extended: bool = False
    name: str = "custom"

    def __post_init__(self):
        lo = -10.0 if self.extended else 0.0
        grid = np.linspace(lo, 10.0, 81)
        vals = np.array([self.fn(float(s)) for s in grid])
        if abs(self.fn(0.0)) > 1e-14:
            raise ValueError(f"class-K function {self.name} must vanish at 0")
        if np.any(np.diff(vals) <= 0.0):
            raise ValueError(f"class-K function {self.name} is not strictly increasing")

    def __call__(self, s: float) -> float:
        return self.fn(s)


def linear_class_k(gain: float = 1.0, extended: bool = True) -> ClassKFunction:
    """``s -> gain * s``; the identity when ``gain == 1``."""
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain!r}")
    if gain == 1.0:
        return ClassKFunction(lambda s: s, extended, "identity")
    return ClassKFunction(lambda s: gain * s, extended, f"{gain:g}*s")


def finite_difference_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                               step: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class CertificateFunction:
    """A CLF ``V`` or CBF ``h`` with its gradient and class-K function.

    If ``gradient`` is omitted, central finite differences with step 1e-5 are used.
    ``value_and_gradient`` is an optional fused evaluation returning ``(value, grad)``
    with the gradient as any float sequence; controllers use it on their hot path.
    All callables must accept the state as a list of floats as well as an array.
    """

    value: Callable[[np.ndarray], float]
    class_k: ClassKFunction
    kind: str
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""
    value_and_gradient: Callable[[Sequence[float]], tuple[float, Sequence[float]]] | None = None

    def __post_init__(self):
        if self.kind not in (CLF, CBF):
            raise ValueError(f"kind must be 'clf' or 'cbf', got {self.kind!r}")
        if self.kind == CBF and not self.class_k.extended:
            raise ValueError("a CBF needs an extended class-K function")

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.gradient is None:
            return finite_difference_gradient(self.value, x)
        return np.asarray(self.gradient(x), dtype=float)

    def value_grad(self, x: Sequence[float]) -> tuple[float, Sequence[float]]:
        if self.value_and_gradient is not None:
            return self.value_and_gradient(x)
        return float(self.value(x)), self.grad(x).tolist()


@dataclass(frozen=True)
class ControlAffineSystem:
    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]
    declared_rank: int
    # Optional structure hints. ``drift_matrix`` A declares f(x) = A x; ``constant_input``
    # declares that G does not depend on x. Both are checked against the callables.
    drift_matrix: np.ndarray | None = None
    constant_input: bool = False

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("state and input dimensions must be positive")
        origin = np.zeros(self.state_dim)
        f0 = np.asarray(self.drift(origin), dtype=float)
        if f0.shape != (self.state_dim,):
            raise ValueError(f"drift returned shape {f0.shape}, expected ({self.state_dim},)")
        if np.max(np.abs(f0)) > 1e-12:
            raise ValueError(f"drift must vanish at the origin, f(0)={f0}")
        G0 = np.asarray(self.input_matrix(origin), dtype=float)
        if G0.shape != (self.state_dim, self.input_dim):
            raise ValueError(
                f"input matrix has shape {G0.shape}, expected ({self.state_dim}, {self.input_dim})"
            )
        if not 0 <= self.declared_rank <= min(self.state_dim, self.input_dim):
            raise ValueError(f"declared rank {self.declared_rank} out of range")
        probe = np.linspace(0.37, 1.91, self.state_dim)
        if self.drift_matrix is not None:
            A = np.asarray(self.drift_matrix, dtype=float)
            if A.shape != (self.state_dim, self.state_dim):
                raise ValueError(f"drift matrix has shape {A.shape}")
            if not np.allclose(A @ probe, self.drift(probe), rtol=0.0, atol=1e-12):
                raise ValueError("drift callable disagrees with the declared drift matrix")
        if self.constant_input and not np.array_equal(G0, self.input_matrix(probe)):
            raise ValueError("input matrix declared constant but varies with x")

    def dynamics(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.drift(x) + self.input_matrix(x) @ u


@dataclass(frozen=True)
class LieData:
    """Lie derivatives of a certificate at a state.

    ``F`` is ``lf + class_k(value)``: the CLF condition is ``F + lg.u <= 0`` and the
    CBF condition is ``F + lg.u >= 0``.
    """

    lf: float
    lg: np.ndarray
    F: float
    value: float
    grad: np.ndarray


def lie_from_parts(cert: CertificateFunction, x: np.ndarray, fx: np.ndarray,
                   Gx: np.ndarray) -> LieData:
    """Same as :func:`lie_derivatives` with ``f(x)`` and ``G(x)`` already evaluated."""
    v = cert.value(x)
    g = cert.grad(x)
    lf = float(g @ fx)
    return LieData(lf, g @ Gx, lf + cert.class_k(v), v, g)


def lie_derivatives(sys: ControlAffineSystem, cert: CertificateFunction,
                    x: np.ndarray) -> LieData:
    x = np.asarray(x, dtype=float)
    return lie_from_parts(cert, x, sys.drift(x), sys.input_matrix(x))


def clf_admissible(lie: LieData, u: np.ndarray) -> bool:
    """True iff ``u`` is in the stabilizing input set (CLF decrease condition)."""
    return lie.F + float(lie.lg @ u) <= ADMISSIBLE_TOL


def cbf_admissible(lie: LieData, u: np.ndarray) -> bool:
    """True iff ``u`` is in the safe input set (CBF condition)."""
    return lie.F + float(lie.lg @ u) >= -ADMISSIBLE_TOL


def check_gradient(cert: CertificateFunction, points: Sequence[np.ndarray],
                   rel_tol: float = 1e-6) -> float:
    """Largest relative mismatch between the gradient and central differences.

    Raises ``ValueError`` if it exceeds ``rel_tol``.
    """
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        g = cert.grad(x)
        fd = finite_difference_gradient(cert.value, x)
        err = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0)
        worst = max(worst, float(err))
    if worst > rel_tol:
        raise ValueError(f"gradient of {cert.name or cert.kind} mismatches finite differences: {worst:.3e}")
    return worst


def check_positive_definite(cert: CertificateFunction, points: Sequence[np.ndarray]) -> None:
    dim = len(points[0])
    if abs(cert.value(np.zeros(dim))) > 1e-12:
        raise ValueError("CLF must vanish at the origin")
    for x in points:
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x) > 0 and not cert.value(x) > 0:
            raise ValueError(f"CLF is not positive at {x}")


# --------------------------------------------------------------------------
# Polynomial and quadratic building blocks (used by config-defined scenarios)


@dataclass(frozen=True)
class Polynomial:
    """Sum of monomials ``coef * prod(x_i ** e_i)`` with analytic gradient."""

    coefficients: np.ndarray  # (T,)
    exponents: np.ndarray  # (T, n) nonnegative ints

    @classmethod
    def from_terms(cls, terms: Sequence[tuple[float, Sequence[int]]]) -> "Polynomial":
        if not terms:
            raise ValueError("polynomial needs at least one term")
        coefs = np.array([float(c) for c, _ in terms])
        exps = np.array([list(e) for _, e in terms], dtype=int)
        if exps.ndim != 2 or np.any(exps < 0):
            raise ValueError("exponents must be nonnegative and of equal length")
        return cls(coefs, exps)

    def __call__(self, x: np.ndarray) -> float:
        return float(self.coefficients @ np.prod(np.power(x, self.exponents), axis=1))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        grad = np.zeros(x.size)
        for i in range(x.size):
            e = self.exponents[:, i]
            lowered = self.exponents.copy()
            lowered[:, i] = np.maximum(e - 1, 0)
            mono = np.prod(np.power(x, lowered), axis=1)
            grad[i] = float((self.coefficients * e) @ mono)
        return grad


def quadratic_clf(P: np.ndarray, class_k: ClassKFunction | None = None,
                  name: str = "V") -> CertificateFunction:
    """``V(x) = 0.5 x^T P x`` with ``P`` symmetrized and required positive definite."""
    P = np.asarray(P, dtype=float)
    P = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise ValueError("quadratic CLF needs a positive-definite matrix")
    return CertificateFunction(
        value=lambda x: 0.5 * float(x @ P @ x),
        gradient=lambda x: P @ x,
        class_k=class_k or linear_class_k(1.0, extended=False),
        kind=CLF,
        name=name,
    )


def linear_system(A: np.ndarray, B: np.ndarray) -> ControlAffineSystem:
    """``xdot = A x + B u`` with constant input matrix."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or A.shape != (B.shape[0], B.shape[0]):
        raise ValueError(f"incompatible shapes A{A.shape}, B{B.shape}")
    B.setflags(write=False)
    return ControlAffineSystem(
        state_dim=A.shape[0],
        input_dim=B.shape[1],
        drift=lambda x: A @ x,
        input_matrix=lambda x: B,
        declared_rank=int(np.linalg.matrix_rank(B)),
        drift_matrix=A,
        constant_input=True,
    )


# --------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class Scenario:
    """A system with its CLF, CBF and the bookkeeping needed by the harness.

    ``domain`` is an (n, 2) box of [lower, upper] bounds outside which a rollout
    stops. ``seeds`` are points inside the obstacle (h < 0) used to sample its
    boundary. ``inits`` are the default initial conditions.
    """

    name: str
    system: ControlAffineSystem
    clf: CertificateFunction
    cbf: CertificateFunction
    domain: np.ndarray
    seeds: tuple[np.ndarray, ...]
    default_k: float = 15.0
    inits: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def in_domain(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.domain[:, 0]) and np.all(x <= self.domain[:, 1]))


def _box(n: int, half_width: float = 10.0) -> np.ndarray:
    return np.tile([-half_width, half_width], (n, 1)).astype(float)


_G_IDENTITY = np.eye(2)
_G_IDENTITY.setflags(write=False)


def single_integrator_unstable() -> ControlAffineSystem:
    """The planar evaluation system ``xdot = x + u``."""
    return ControlAffineSystem(
        state_dim=2,
        input_dim=2,
        drift=lambda x: np.array(x, dtype=float),
        input_matrix=lambda x: _G_IDENTITY,
        declared_rank=2,
        drift_matrix=np.eye(2),
        constant_input=True,
    )


# Each scenario certificate is written once as a fused (value, gradient) evaluation
# on plain floats; the separate value/gradient handles are derived from it.


def _case1_h(x):
    a = x[1] - 4.0
    return x[0] * x[0] + a * a - 4.0, (2.0 * x[0], 2.0 * a)


def _case1_V(x):
    return 0.5 * (6.0 * x[0] * x[0] + x[1] * x[1]), (6.0 * x[0], float(x[1]))


def _case2_h(x):
    dy = x[1] - 3.0
    y = dy * dy
    dl = x[0] - 2.0
    dr = x[0] + 2.0
    a = dl * dl + y
    b = dr * dr + y
    return a * b - 2.1 ** 4, (2.0 * dl * b + 2.0 * dr * a, 2.0 * dy * (a + b))


def _case2_V(x):
    return 0.5 * (x[0] * x[0] + x[1] * x[1]), (float(x[0]), float(x[1]))


def _certificate(fused, class_k: ClassKFunction, kind: str, name: str) -> CertificateFunction:
    return CertificateFunction(
        value=lambda x: fused(x)[0],
        class_k=class_k,
        kind=kind,
        gradient=lambda x: np.array(fused(x)[1]),
        name=name,
        value_and_gradient=fused,
    )


def make_case1_scenario() -> Scenario:
    """Circular obstacle of radius 2 at (0, 4) with the anisotropic CLF 0.5(6x1^2 + x2^2)."""
    ident_ext = linear_class_k(1.0, extended=True)
    return Scenario(
        name="case1",
        system=single_integrator_unstable(),
        clf=_certificate(_case1_V, linear_class_k(1.0, extended=False), CLF, "V_case1"),
        cbf=_certificate(_case1_h, ident_ext, CBF, "h_case1"),
        domain=_box(2),
        seeds=(np.array([0.0, 4.0]),),
        default_k=15.0,
        inits=(np.array([0.0, 7.0]), np.array([1.0, 7.0]), np.array([-1.0, 8.0])),
    )


def make_case2_scenario() -> Scenario:
    """Peanut-shaped (Cassini oval) obstacle around (+-2, 3) with V = 0.5|x|^2."""
    ident_ext = linear_class_k(1.0, extended=True)
    return Scenario(
        name="case2",
        system=single_integrator_unstable(),
        clf=_certificate(_case2_V, linear_class_k(1.0, extended=False), CLF, "V_case2"),
        cbf=_certificate(_case2_h, ident_ext, CBF, "h_case2"),
        domain=_box(2),
        seeds=(np.array([2.0, 3.0]), np.array([-2.0, 3.0])),
        default_k=30.0,
        inits=(np.array([0.5, 4.0]), np.array([-0.5, 4.0]), np.array([0.0, 5.3])),
    )


def make_switching_scenario() -> Scenario:
    """Saddle drift ``diag(1, -3) x`` with V = 0.5|x|^2 and the case-1 obstacle.

    Here ``F_l = 1.5 x1^2 - 2.5 x2^2`` changes sign across two lines through the
    origin, so the CLF magnitude switches on and off. Used by continuity probes.
    """
    A = np.diag([1.0, -3.0])
    sys = ControlAffineSystem(
        state_dim=2,
        input_dim=2,
        drift=lambda x: A @ x,
        input_matrix=lambda x: _G_IDENTITY,
        declared_rank=2,
        drift_matrix=A,
        constant_input=True,
    )
    base = make_case1_scenario()
    return Scenario(
        name="switching",
        system=sys,
        clf=_certificate(_case2_V, linear_class_k(1.0, extended=False), CLF, "V_switching"),
        cbf=base.cbf,
        domain=_box(2),
        seeds=base.seeds,
        default_k=15.0,
        inits=(np.array([3.0, 1.0]),),
    )


SCENARIOS = {
    "case1": make_case1_scenario,
    "case2": make_case2_scenario,
    "switching": make_switching_scenario,
}
