"""Conserved quantities and geometric diagnostics of the family of maps.

For a cubic function H and constant antisymmetric K, the field f = K grad(H)
is quadratic and the linearly implicit map conserves the h-dependent rational
function

    Htilde(x, h) = H(x) + (h/3) grad(H)(x)^T (I - h/2 f'(x))^{-1} f(x)

exactly, along with the measure with density 1/det(I - h/2 f'(x)). This
module evaluates Htilde in both its plain and manifestly-even-in-h forms,
the invariant measure densities of the three divergence-free family members,
defect diagnostics for measure and symplecticity, interpolation-based degree
bounds for the rational invariants, and drift-slope estimators used by the
long-run experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import densela
from .errors import (
    DegenerateFit,
    InsufficientSamples,
    SingularSet,
    SingularStep,
    UnsupportedParameter,
)
from .forms import CubicHamiltonian, PoissonStructure, QuadraticVF, SystemSpec, canonical_poisson, hamiltonian_to_vf
from .integrators import Method, Trajectory, kahan_step, step_jacobian

__all__ = [
    "SINGULAR_DET_TOL",
    "DENSITY_PARAMETERS",
    "modified_hamiltonian",
    "modified_hamiltonian_even",
    "measure_density",
    "measure_defect",
    "symplectic_defect",
    "DegreeBoundCheck",
    "DegreeBoundReport",
    "verify_degree_bounds",
    "QuantitySeries",
    "ConservedReport",
    "conserved_report",
    "detrended_drift_slope",
]

# Determinant magnitude below which a point is treated as lying on the
# singular set. Shared with the level-set sentinel mask so plots and errors
# agree on where the map blows up.
SINGULAR_DET_TOL = 1e-9

# Family parameters with an invariant measure density: 1/det, 1, det.
DENSITY_PARAMETERS = (-0.5, 0.0, 0.5)


def _check_point(n, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"point must have shape ({n},), got {x.shape}")
    return x


def _pair(ham: CubicHamiltonian, poi: PoissonStructure, x):
    if ham.n != poi.n:
        raise ValueError(f"dimension mismatch: function n={ham.n}, structure n={poi.n}")
    x = _check_point(ham.n, x)
    grad = ham.gradient(x)
    jac = poi.K @ ham.hessian(x)
    return x, grad, poi.K @ grad, jac


def modified_hamiltonian(ham: CubicHamiltonian, poi: PoissonStructure, x, h: float) -> float:
    """The exactly conserved rational function H + (h/3) grad(H)^T (I - h/2 f')^{-1} f."""
    x, grad, f, jac = _pair(ham, poi, x)
    amat = np.eye(ham.n) - 0.5 * h * jac
    det = densela.det(amat)
    if abs(det) < SINGULAR_DET_TOL:
        raise SingularSet(f"point lies on the singular set (det={det:.3e})")
    return float(ham.value(x) + (h / 3.0) * grad @ densela.solve(amat, f))


def modified_hamiltonian_even(ham: CubicHamiltonian, poi: PoissonStructure, x, h: float) -> float:
    """The same invariant written so h enters only as h^2.

    H + (h^2/6) grad(H)^T (I - h^2/4 f'^2)^{-1} f' f. Equal to
    modified_hamiltonian because grad(H)^T (I - h^2/4 f'^2)^{-1} f vanishes:
    the middle matrix times K is antisymmetric.
    """
    x, grad, f, jac = _pair(ham, poi, x)
    h2 = h * h
    amat = np.eye(ham.n) - 0.25 * h2 * (jac @ jac)
    det = densela.det(amat)
    if abs(det) < SINGULAR_DET_TOL:
        raise SingularSet(f"point lies on the singular set (det={det:.3e})")
    return float(ham.value(x) + (h2 / 6.0) * grad @ densela.solve(amat, jac @ f))


def modified_hamiltonian_batch(
    ham: CubicHamiltonian, poi: PoissonStructure, xs, h: float, sentinel=np.inf
):
    """modified_hamiltonian over many points at once (grid workloads).

    Points within SINGULAR_DET_TOL of the singular set get `sentinel` instead
    of raising, so level-set sampling can sweep straight across the set.
    """
    if ham.n != poi.n:
        raise ValueError(f"dimension mismatch: function n={ham.n}, structure n={poi.n}")
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != ham.n:
        raise ValueError(f"points must have shape (m, {ham.n}), got {xs.shape}")
    grads = ham.gradient(xs)
    fields = grads @ poi.K.T
    jacs = np.einsum("ab,mbc->mac", poi.K, ham.hessian(xs))
    amats = np.eye(ham.n) - 0.5 * h * jacs
    dets = np.linalg.det(amats)
    ok = np.abs(dets) >= SINGULAR_DET_TOL
    values = np.full(xs.shape[0], float(sentinel))
    if np.any(ok):
        sol = np.linalg.solve(amats[ok], fields[ok][..., None])[..., 0]
        values[ok] = ham.value(xs[ok]) + (h / 3.0) * np.einsum("mi,mi->m", grads[ok], sol)
    return values


def second_order_modified_energy(
    ham: CubicHamiltonian, poi: PoissonStructure, xs, h: float, a: float
):
    """H + h^2 (1-6a)/24 grad(H)^T f' f, the O(h^4) modified energy of member a.

    Subtracting the second-order correction removes the bounded O(h^2)
    oscillation from an energy series, exposing the secular O(h^4 t) drift
    that separates the special parameters from generic ones. At a = -1/2 it
    agrees with the conserved invariant through O(h^4); at a = 1/6 it is
    plain H.
    """
    if ham.n != poi.n:
        raise ValueError(f"dimension mismatch: function n={ham.n}, structure n={poi.n}")
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != ham.n:
        raise ValueError(f"points must have shape (m, {ham.n}), got {xs.shape}")
    values = np.asarray(ham.value(xs), dtype=float)
    coef = h * h * (1.0 - 6.0 * a) / 24.0
    if coef == 0.0:
        return values
    grads = ham.gradient(xs)
    fields = grads @ poi.K.T
    jacs = np.einsum("ab,mbc->mac", poi.K, ham.hessian(xs))
    jf = np.einsum("mij,mj->mi", jacs, fields)
    return values + coef * np.einsum("mi,mi->m", grads, jf)


def measure_density(a: float, vf: QuadraticVF, x, h: float) -> float:
    """Density of the invariant measure of the family-a map.

    Only a in {-1/2, 0, 1/2} have one: 1/det(I - h/2 f'), 1, and det
    respectively.
    """
    a = float(a)
    if a not in DENSITY_PARAMETERS:
        raise UnsupportedParameter(
            f"no invariant measure density is available for a={a}; supported: -1/2, 0, 1/2"
        )
    if a == 0.0:
        return 1.0
    x = _check_point(vf.n, x)
    det = densela.det(np.eye(vf.n) - 0.5 * h * vf.jacobian(x))
    if a == 0.5:
        return float(det)
    if abs(det) < 1e-13:
        raise SingularSet(f"density 1/det undefined on the singular set (det={det:.3e})")
    return float(1.0 / det)


def measure_defect(a: float, vf: QuadraticVF, trajectory: Trajectory, density_a=None) -> float:
    """Worst violation of m(x') det(A) = m(x) over consecutive trajectory steps.

    density_a selects the density; by default it is a itself when a has an
    invariant density, and 1/det otherwise — so parameters outside
    {-1/2, 0, 1/2} are measured against the density they fail to preserve.
    Needs a stride-1 trajectory (consecutive recorded states one step apart).
    """
    a = float(a)
    if density_a is None:
        density_a = a if a in DENSITY_PARAMETERS else -0.5
    idx = trajectory.step_index
    adjacent = np.where(np.diff(idx) == 1)[0]
    if idx.size > 1 and adjacent.size == 0:
        raise InsufficientSamples(
            "measure defect needs consecutive recorded steps; rerun with stride=1"
        )
    h = trajectory.h
    worst = 0.0
    for k in adjacent:
        x, x_next = trajectory.states[k], trajectory.states[k + 1]
        det_step = densela.det(step_jacobian(a, vf, x, x_next, h))
        m0 = measure_density(density_a, vf, x, h)
        m1 = measure_density(density_a, vf, x_next, h)
        if m0 == 0.0:
            raise SingularSet("density vanishes at a trajectory point")
        worst = max(worst, abs(m1 * det_step / m0 - 1.0))
    return worst


def symplectic_defect(mat, n_pairs=None) -> float:
    """Max-entry norm of A^T J A - J against the canonical block form J."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"matrix must be square, got {mat.shape}")
    dim = mat.shape[0]
    if dim % 2 != 0:
        raise ValueError(f"the canonical form needs even dimension, got {dim}")
    if n_pairs is not None and 2 * n_pairs != dim:
        raise ValueError(f"matrix is {dim}x{dim}, inconsistent with {n_pairs} pairs")
    jmat = canonical_poisson(dim).K
    return float(np.max(np.abs(mat.T @ jmat @ mat - jmat)))


@dataclass(frozen=True)
class DegreeBoundCheck:
    """Measured polynomial degrees along sample lines versus the claimed bound."""

    name: str
    bound: int
    line_degrees: tuple
    passed: bool

    def to_dict(self):
        return {
            "name": self.name,
            "bound": self.bound,
            "line_degrees": list(self.line_degrees),
            "passed": self.passed,
        }


@dataclass(frozen=True)
class DegreeBoundReport:
    """Degree-bound verification for one (H, K, h) triple."""

    n: int
    k: int
    h: float
    trials: int
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {
            "n": self.n,
            "k": self.k,
            "h": self.h,
            "trials": self.trials,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }


def verify_degree_bounds(
    ham: CubicHamiltonian,
    poi: PoissonStructure,
    h: float,
    trials: int = 3,
    rng=None,
) -> DegreeBoundReport:
    """Check the rational-degree bounds of the map and its invariant.

    With k = rank(K), restricted to random affine lines x(t) = x0 + t v:
    det(I - h/2 f') has degree <= k; Htilde times that determinant has degree
    <= k+3 (<= k+1 when k = n); each component of the one-step image times the
    determinant has degree <= k+1 (<= k when k = n). Degrees are measured by
    polynomial interpolation at Chebyshev points; a bound passes only when
    every sampled line satisfies it.
    """
    if h == 0.0:
        raise ValueError("degree bounds are about the h-dependent map; h must be nonzero")
    if trials < 1:
        raise ValueError("need at least one sample line")
    if rng is None:
        rng = np.random.default_rng(0)
    n = ham.n
    k = poi.rank
    vf = hamiltonian_to_vf(ham, poi)
    bounds = {
        "denominator": k,
        "energy_numerator": k + 1 if k == n else k + 3,
        "map_numerator": k if k == n else k + 1,
    }
    npts = max(bounds.values()) + 10
    ts = densela.chebyshev_points(npts)
    eye = np.eye(n)
    degrees = {name: [] for name in bounds}
    for _ in range(trials):
        for _attempt in range(40):
            x0 = 0.5 * rng.standard_normal(n)
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            dets = np.empty(npts)
            energies = np.empty(npts)
            images = np.empty((npts, n))
            try:
                for i, t in enumerate(ts):
                    x = x0 + t * v
                    dets[i] = densela.det(eye - 0.5 * h * vf.jacobian(x))
                    energies[i] = modified_hamiltonian(ham, poi, x, h) * dets[i]
                    images[i] = kahan_step(vf, x, h).x_next * dets[i]
            except (SingularSet, SingularStep):
                continue
            break
        else:
            raise SingularSet("could not sample a line clear of the singular set")
        degrees["denominator"].append(
            densela.poly_degree_estimate(ts, dets, bounds["denominator"] + 2)
        )
        degrees["energy_numerator"].append(
            densela.poly_degree_estimate(ts, energies, bounds["energy_numerator"] + 2)
        )
        degrees["map_numerator"].append(
            max(
                densela.poly_degree_estimate(ts, images[:, j], bounds["map_numerator"] + 2)
                for j in range(n)
            )
        )
    checks = tuple(
        DegreeBoundCheck(
            name,
            bounds[name],
            tuple(degrees[name]),
            all(d <= bounds[name] for d in degrees[name]),
        )
        for name in ("denominator", "energy_numerator", "map_numerator")
    )
    return DegreeBoundReport(n, k, float(h), trials, checks)


@dataclass(frozen=True)
class QuantitySeries:
    """One scalar quantity sampled along a trajectory, with drift statistics.

    Drift is measured against the first finite sample; max_rel_drift falls
    back to the absolute drift when that baseline is zero. The slope is the
    least-squares drift per step over finite samples (nan when fewer than two
    are available).
    """

    name: str
    values: np.ndarray
    max_abs_drift: float
    max_rel_drift: float
    slope: float

    def to_dict(self):
        return {
            "name": self.name,
            "values": [float(v) for v in self.values],
            "max_abs_drift": self.max_abs_drift,
            "max_rel_drift": self.max_rel_drift,
            "slope": self.slope,
        }


@dataclass(frozen=True)
class ConservedReport:
    """Conserved-quantity series for one trajectory."""

    quantities: tuple

    def __getitem__(self, name: str) -> QuantitySeries:
        for q in self.quantities:
            if q.name == name:
                return q
        raise KeyError(name)

    def names(self):
        return [q.name for q in self.quantities]

    def to_dict(self):
        return {"quantities": [q.to_dict() for q in self.quantities]}


def _series(name, steps, values) -> QuantitySeries:
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if not np.any(finite):
        return QuantitySeries(name, values, float("nan"), float("nan"), float("nan"))
    base = values[finite][0]
    drift = np.abs(values[finite] - base)
    max_abs = float(np.max(drift))
    max_rel = float(max_abs / abs(base)) if base != 0.0 else max_abs
    try:
        slope, _ = densela.fit_line(steps[finite], values[finite])
    except DegenerateFit:
        slope = float("nan")
    return QuantitySeries(name, values, max_abs, max_rel, slope)


# Long trajectories are reduced block by block so the stacked (m, n, n)
# intermediates stay bounded regardless of trajectory length.
_REPORT_BLOCK = 1 << 18


def _batch_jacobians(vf: QuadraticVF, states):
    return 2.0 * np.einsum("ijk,mk->mij", vf.T, states) + vf.B


def _modified_even_values(ham, poi, xs, h):
    """modified_hamiltonian_even over many points; inf marks singular samples."""
    grads = ham.gradient(xs)
    fields = grads @ poi.K.T
    jacs = np.einsum("ab,mbc->mac", poi.K, ham.hessian(xs))
    h2 = h * h
    amats = np.eye(ham.n) - 0.25 * h2 * np.einsum("mij,mjk->mik", jacs, jacs)
    dets = np.linalg.det(amats)
    ok = np.abs(dets) >= SINGULAR_DET_TOL
    values = np.full(xs.shape[0], np.inf)
    if np.any(ok):
        jf = np.einsum("mij,mj->mi", jacs[ok], fields[ok])
        sol = np.linalg.solve(amats[ok], jf[..., None])[..., 0]
        values[ok] = ham.value(xs[ok]) + (h2 / 6.0) * np.einsum("mi,mi->m", grads[ok], sol)
    return values


def _blockwise(fn, xs):
    out = np.empty(xs.shape[0])
    for start in range(0, xs.shape[0], _REPORT_BLOCK):
        stop = start + _REPORT_BLOCK
        out[start:stop] = fn(xs[start:stop])
    return out


def conserved_report(system: SystemSpec, method: Method, trajectory: Trajectory) -> ConservedReport:
    """Series and drift statistics for every conserved quantity of the system.

    Covers H, the modified invariant in both forms (at the trajectory's own
    h), each linear Casimir of K, and — for family members with an invariant
    density, on stride-1 trajectories — the cumulative measure defect.
    Singular-set samples appear as inf and are excluded from the statistics.
    """
    states = trajectory.states
    if states.shape[0] == 0:
        return ConservedReport(())
    steps = trajectory.step_index.astype(float)
    h = trajectory.h
    quantities = []
    ham, poi = system.hamiltonian, system.poisson
    if ham is not None and poi is not None:
        quantities.append(_series("H", steps, ham.value(states)))
        quantities.append(
            _series(
                "Htilde",
                steps,
                _blockwise(lambda xs: modified_hamiltonian_batch(ham, poi, xs, h), states),
            )
        )
        quantities.append(
            _series(
                "Htilde_even",
                steps,
                _blockwise(lambda xs: _modified_even_values(ham, poi, xs, h), states),
            )
        )
    if poi is not None:
        for i, vec in enumerate(poi.casimir_basis(), start=1):
            quantities.append(_series(f"casimir_{i}", steps, states @ vec))
    defect = _measure_defect_series(system.vf, method, trajectory)
    if defect is not None:
        quantities.append(_series("measure_defect", steps, defect))
    return ConservedReport(tuple(quantities))


def _measure_defect_series(vf, method, trajectory):
    try:
        a = method.family_parameter
    except UnsupportedParameter:
        return None
    idx = trajectory.step_index
    if idx.size == 0 or not np.all(np.diff(idx) == 1):
        return None
    density_a = a if a in DENSITY_PARAMETERS else -0.5
    h = trajectory.h
    states = trajectory.states
    eye = np.eye(vf.n)
    ca = 0.25 + 0.5 * a
    cb = 0.25 - 0.5 * a
    values = np.zeros(idx.size)
    worst = 0.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for start in range(0, idx.size - 1, _REPORT_BLOCK):
            stop = min(start + _REPORT_BLOCK, idx.size - 1)
            jl = _batch_jacobians(vf, states[start:stop])
            jr = _batch_jacobians(vf, states[start + 1 : stop + 1])
            det_step = np.linalg.det(eye + h * (ca * jl + cb * jr)) / np.linalg.det(
                eye - h * (ca * jr + cb * jl)
            )
            if density_a == 0.0:
                ratio = det_step
            else:
                d0 = np.linalg.det(eye - 0.5 * h * jl)
                d1 = np.linalg.det(eye - 0.5 * h * jr)
                if density_a == 0.5:
                    if np.any(d0 == 0.0):
                        return None
                    ratio = d1 * det_step / d0
                else:
                    if min(np.min(np.abs(d0)), np.min(np.abs(d1))) < 1e-13:
                        return None
                    ratio = d0 * det_step / d1
            block = np.abs(ratio - 1.0)
            if not np.all(np.isfinite(block)):
                return None
            np.maximum.accumulate(block, out=block)
            if worst > 0.0:
                np.maximum(block, worst, out=block)
            values[start + 1 : stop + 1] = block
            worst = float(block[-1])
    return values


def detrended_drift_slope(values, steps=None, discard=0.01, n_freqs=32, passes=2) -> float:
    """Drift per step of a slowly trending, strongly oscillating series.

    A plain line fit is biased by bounded oscillations whose period is
    commensurate with the window, so the dominant Fourier modes of the
    residual (at least 3 cycles across the window) are regressed out jointly
    with the line, in `passes` rounds of mode selection. The leading
    `discard` fraction of samples is dropped to skip transients. Returns the
    fitted slope per unit of `steps` (per sample when steps is omitted).
    """
    values = np.asarray(values, dtype=float).ravel()
    if steps is None:
        steps = np.arange(values.size, dtype=float)
        delta = 1.0
    else:
        steps = np.asarray(steps, dtype=float).ravel()
        if steps.shape != values.shape:
            raise ValueError("steps and values must have equal length")
        gaps = np.diff(steps)
        if gaps.size == 0 or gaps[0] == 0.0 or not np.allclose(gaps, gaps[0], rtol=1e-12):
            raise ValueError("steps must be uniformly spaced")
        delta = float(gaps[0])
    start = int(np.ceil(values.size * discard))
    v = values[start:]
    n = v.size
    if n < 8:
        raise InsufficientSamples(f"need at least 8 samples after discard, got {n}")
    k = np.arange(n, dtype=float)
    cols = [np.ones(n), k]
    chosen = set()
    for _ in range(passes):
        design = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(design, v, rcond=None)
        resid = v - design @ coef
        amp = np.abs(np.fft.rfft(resid))
        amp[: min(3, amp.size)] = 0.0
        for j in np.argsort(amp)[::-1][:n_freqs]:
            j = int(j)
            if j in chosen or amp[j] == 0.0:
                continue
            chosen.add(j)
            w = 2.0 * np.pi * j / n
            cols.append(np.sin(w * k))
            cols.append(np.cos(w * k))
    design = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    return float(coef[1]) / delta
