"""One-step maps for quadratic fields and a trajectory runner.

The linearly implicit map solves (x' - x)/h = Q(x, x') + B(x + x')/2 + c
with one linear solve per step. It is the a = -1/2 member of the symmetric
one-parameter family

    (x' - x)/h = a f(x) + (1 - 2a) f((x + x')/2) + a f(x'),

which also contains the midpoint (a=0), trapezoidal (a=1/2), and Simpson
(a=1/6) rules. Single steps are plain numpy for clarity; `iterate` runs the
compiled loops from the kernels module and evaluates observers on the
recorded states afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels, densela
from .errors import (
    NoConvergence,
    SingularMatrix,
    SingularStep,
    StepSizeUnderflow,
    UnsupportedParameter,
)
from .forms import QuadraticVF

__all__ = [
    "Method",
    "StepResult",
    "Trajectory",
    "kahan_step",
    "kahan_step_rosenbrock",
    "kahan_adjoint_residual",
    "family_step",
    "step_jacobian",
    "suzuki_kahan_step",
    "reference_flow",
    "modified_vf_h2_term",
    "iterate",
    "STATUS_OK",
    "STATUS_SINGULAR",
    "STATUS_DIVERGED",
    "STATUS_STALLED",
]

STATUS_OK = 0
STATUS_SINGULAR = 1
STATUS_DIVERGED = 2
STATUS_STALLED = 3

GAMMA1 = _kernels.GAMMA1
GAMMA2 = _kernels.GAMMA2

MAX_STAGE_ITERATIONS = 50


@dataclass(frozen=True)
class Method:
    """Identifier for a one-step map: which family member or composition."""

    kind: str
    a: float | None = None
    tol: float | None = None

    def __post_init__(self):
        if self.kind not in ("kahan", "family", "suzuki", "reference"):
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.kind == "family" and (self.a is None or not np.isfinite(self.a)):
            raise ValueError("family methods need a finite parameter")

    @classmethod
    def kahan(cls):
        return cls("kahan")

    @classmethod
    def family(cls, a):
        return cls("family", float(a))

    @classmethod
    def midpoint(cls):
        return cls("family", 0.0)

    @classmethod
    def trapezoidal(cls):
        return cls("family", 0.5)

    @classmethod
    def simpson(cls):
        return cls("family", 1.0 / 6.0)

    @classmethod
    def suzuki(cls):
        return cls("suzuki")

    @classmethod
    def reference(cls, tol=1e-12):
        return cls("reference", tol=float(tol))

    @property
    def family_parameter(self) -> float:
        if self.kind == "kahan":
            return -0.5
        if self.kind == "family":
            return self.a
        raise UnsupportedParameter(f"{self.kind} is not a member of the one-parameter family")

    def label(self) -> str:
        if self.kind == "family":
            return f"family(a={self.a:g})"
        if self.kind == "reference":
            return f"reference(tol={self.tol:g})"
        return self.kind


@dataclass(frozen=True)
class StepResult:
    """One step: the new state plus solver diagnostics.

    det is det(I - h/2 f'(x)) at the starting point, the quantity whose zero
    set the implicit solve fails on.
    """

    x_next: np.ndarray
    residual: float
    iterations: int
    det: float


@dataclass(frozen=True)
class Trajectory:
    """Recorded states of an orbit plus named observer columns.

    status: 0 completed, 1 stopped on a singular step, 2 stopped on
    divergence, 3 stopped because the stage iteration stalled. completed
    counts steps actually taken; step_index holds the step number of each
    recorded row.
    """

    method: Method
    h: float
    stride: int
    step_index: np.ndarray
    states: np.ndarray
    status: int
    completed: int
    observers: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.step_index * self.h

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _check_state(vf, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (vf.n,):
        raise ValueError(f"state must have shape ({vf.n},), got {x.shape}")
    return x


def _resolvent(vf, x, h):
    return np.eye(vf.n) - 0.5 * h * vf.jacobian(x)


def kahan_step(vf: QuadraticVF, x, h: float) -> StepResult:
    """One linearly implicit step, assembled from the polarized bilinear form.

    The right side is linear in x', so collecting the x' terms gives the
    system (I - h Q(x, .) - h/2 B) x' = x + h/2 Bx + h c.
    """
    x = _check_state(vf, x)
    lin = np.einsum("ijk,j->ik", vf.T, x)
    amat = np.eye(vf.n) - h * lin - 0.5 * h * vf.B
    rhs = x + 0.5 * h * (vf.B @ x) + h * vf.c
    detval = densela.det(amat)
    try:
        x_next = densela.solve(amat, rhs)
    except SingularMatrix as exc:
        raise SingularStep(f"step matrix is singular at this point (det={detval:.3e})") from exc
    resid = (x_next - x) - h * (
        vf.polarize(x, x_next) + 0.5 * (vf.B @ (x + x_next)) + vf.c
    )
    return StepResult(x_next, float(np.max(np.abs(resid))), 0, detval)


def kahan_step_rosenbrock(vf: QuadraticVF, x, h: float) -> StepResult:
    """The same map computed as x' = x + h (I - h/2 f'(x))^{-1} f(x)."""
    x = _check_state(vf, x)
    amat = _resolvent(vf, x, h)
    rhs = h * vf.eval(x)
    detval = densela.det(amat)
    try:
        d = densela.solve(amat, rhs)
    except SingularMatrix as exc:
        raise SingularStep(f"step matrix is singular at this point (det={detval:.3e})") from exc
    resid = amat @ d - rhs
    return StepResult(x + d, float(np.max(np.abs(resid))), 0, detval)


def kahan_adjoint_residual(vf: QuadraticVF, x, x_next, h: float) -> np.ndarray:
    """Residual of the adjoint formulation (x'-x)/h = (I + h/2 f'(x'))^{-1} f(x').

    Vanishes on valid step pairs because the map is self-adjoint.
    """
    x = _check_state(vf, x)
    x_next = _check_state(vf, x_next)
    amat = np.eye(vf.n) + 0.5 * h * vf.jacobian(x_next)
    try:
        d = densela.solve(amat, vf.eval(x_next))
    except SingularMatrix as exc:
        raise SingularStep("adjoint step matrix is singular at this point") from exc
    return (x_next - x) - h * d


def family_step(a: float, vf: QuadraticVF, x, h: float) -> StepResult:
    """One step of the symmetric family member with parameter a.

    Newton iteration with the exact residual Jacobian, run down to the
    rounding floor so that conserved quantities see no systematic bias.
    """
    a = float(a)
    x = _check_state(vf, x)
    fx = vf.eval(x)
    xp = x + h * fx
    w_mid = 1.0 - 2.0 * a
    prev = np.inf
    rn = np.inf
    iterations = 0
    ok = False
    for it in range(MAX_STAGE_ITERATIONS):
        mid = 0.5 * (x + xp)
        r = xp - x - h * (a * fx + w_mid * vf.eval(mid) + a * vf.eval(xp))
        rn = float(np.max(np.abs(r)))
        xn = float(np.max(np.abs(xp)))
        if rn != rn:
            break
        if rn <= _kernels.RESIDUAL_FLOOR * (1.0 + xn):
            ok = True
            iterations = it
            break
        if rn >= prev:
            ok = prev <= _kernels.RESIDUAL_TARGET * (1.0 + xn)
            iterations = it
            break
        prev = rn
        jmat = np.eye(vf.n) - h * (0.5 * w_mid * vf.jacobian(mid) + a * vf.jacobian(xp))
        try:
            xp = xp - densela.solve(jmat, r)
        except SingularMatrix as exc:
            raise SingularStep("stage iteration matrix is singular at this point") from exc
        iterations = it + 1
    if not ok:
        raise NoConvergence(
            f"stage iteration stalled at residual {rn:.3e} after {iterations} corrections"
        )
    return StepResult(xp, rn, iterations, densela.det(_resolvent(vf, x, h)))


def step_jacobian(a: float, vf: QuadraticVF, x, x_next, h: float) -> np.ndarray:
    """Closed-form derivative of the family-a step map at a valid (x, x') pair."""
    x = _check_state(vf, x)
    x_next = _check_state(vf, x_next)
    ca = 0.25 + 0.5 * float(a)
    cb = 0.25 - 0.5 * float(a)
    jx = vf.jacobian(x)
    jn = vf.jacobian(x_next)
    lhs = np.eye(vf.n) - h * (ca * jn + cb * jx)
    rhs = np.eye(vf.n) + h * (ca * jx + cb * jn)
    try:
        return densela.solve(lhs, rhs)
    except SingularMatrix as exc:
        raise SingularStep("step derivative matrix is singular at this point") from exc


def suzuki_kahan_step(vf: QuadraticVF, x, h: float) -> StepResult:
    """Three-stage fourth-order composition of the linearly implicit map.

    Substep sizes are g1 h, (1 - 2 g1) h, g1 h with g1 = 1/(2 - 2^(1/3)).
    """
    x = _check_state(vf, x)
    detval = densela.det(_resolvent(vf, x, h))
    r1 = kahan_step(vf, x, GAMMA1 * h)
    r2 = kahan_step(vf, r1.x_next, GAMMA2 * h)
    r3 = kahan_step(vf, r2.x_next, GAMMA1 * h)
    residual = max(r1.residual, r2.residual, r3.residual)
    return StepResult(r3.x_next, residual, 0, detval)


def reference_flow(vf: QuadraticVF, x, t: float, tol: float = 1e-12) -> np.ndarray:
    """High-accuracy flow approximation used as an order/convergence oracle.

    Embedded eighth-order pair with local error control at tol; global
    accuracy is roughly 100 tol over unit time. Raises StepSizeUnderflow
    near finite-time blow-up.
    """
    if tol < 1e-13:
        raise ValueError("tolerances below 1e-13 are not attainable in double precision")
    x = _check_state(vf, x)
    if t == 0.0:
        return x.copy()
    sol = solve_ivp(
        lambda _s, y: vf.eval(y),
        (0.0, float(t)),
        x,
        method="DOP853",
        rtol=tol,
        atol=tol,
    )
    if not sol.success:
        raise StepSizeUnderflow(f"adaptive integration failed: {sol.message}")
    return sol.y[:, -1]


def modified_vf_h2_term(vf: QuadraticVF, x) -> np.ndarray:
    """The h^2 coefficient of the map's modified field: (f'f'f - 2 f''(f,f))/12."""
    x = np.asarray(x, dtype=float)
    f = vf.eval(x)
    jac = vf.jacobian(x)
    jjf = np.einsum("...ij,...j->...i", jac, np.einsum("...ij,...j->...i", jac, f))
    return (jjf - 2.0 * vf.second_derivative(f, f)) / 12.0


def _default_stride(n_steps):
    return 10 if n_steps >= 10**6 else 1


def _max_records(n_steps, stride):
    return n_steps // stride + 4


def iterate(
    method: Method,
    vf: QuadraticVF,
    x0,
    h: float,
    n_steps: int,
    observers=None,
    stride=None,
) -> Trajectory:
    """Run n_steps of the method, recording every stride-th state.

    The initial state and the last reached state are always recorded. Step
    failures (singular system, divergence past 1e12, stalled stage
    iteration) truncate the run and set the status flag instead of raising,
    so parameter sweeps survive unstable configurations.
    """
    x0 = _check_state(vf, x0)
    n_steps = int(n_steps)
    if n_steps < 0:
        raise ValueError("step count must be nonnegative")
    if stride is None:
        stride = _default_stride(n_steps)
    stride = int(stride)
    if stride < 1:
        raise ValueError("stride must be positive")
    if method.kind == "reference":
        step_index, states, status, completed = _iterate_reference(
            method, vf, x0, h, n_steps, stride
        )
    else:
        maxrec = _max_records(n_steps, stride)
        states_buf = np.empty((maxrec, vf.n))
        rec_buf = np.zeros(maxrec, dtype=np.int64)
        args = (vf.T, vf.B, vf.c, x0, float(h), n_steps, stride, states_buf, rec_buf)
        if method.kind == "kahan":
            status, completed, nrec = _kernels.run_kahan(*args)
        elif method.kind == "suzuki":
            status, completed, nrec = _kernels.run_suzuki(*args)
        else:
            status, completed, nrec = _kernels.run_family(
                vf.T, vf.B, vf.c, method.family_parameter, x0, float(h), n_steps, stride,
                states_buf, rec_buf,
            )
        states = states_buf[:nrec].copy()
        step_index = rec_buf[:nrec].copy()
    columns = {}
    for name, fn in (observers or {}).items():
        columns[name] = np.asarray(fn(states))
    return Trajectory(method, float(h), stride, step_index, states, int(status),
                      int(completed), columns)


def _iterate_reference(method, vf, x0, h, n_steps, stride):
    tol = method.tol if method.tol is not None else 1e-12
    states = [x0.copy()]
    step_index = [0]
    status = STATUS_OK
    completed = 0
    x = x0.copy()
    for s in range(n_steps):
        try:
            x = reference_flow(vf, x, h, tol=tol)
        except StepSizeUnderflow:
            status = STATUS_DIVERGED
            break
        completed = s + 1
        big = bool(np.max(np.abs(x)) > _kernels.DIVERGENCE_BOUND) or not np.all(np.isfinite(x))
        if completed % stride == 0 or completed == n_steps or big:
            states.append(x.copy())
            step_index.append(completed)
        if big:
            status = STATUS_DIVERGED
            break
    if step_index[-1] != completed:
        states.append(x.copy())
        step_index.append(completed)
    return np.array(step_index, dtype=np.int64), np.array(states), status, completed
