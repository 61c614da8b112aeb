"""System catalog and data-production harness.

Bundles the named example systems with step sizes and starting points known
to exercise them well, and runs the standard scans over them: drift-slope
sweeps across the family parameter, level-set grids of the conserved energy,
phase portraits, composed-step drift, and singular-set scans.  Results are
written as CSV with every float carrying 17 significant digits, so the files
parse back to bitwise-identical values.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .conserved import (
    detrended_drift_slope,
    modified_hamiltonian_batch,
    second_order_modified_energy,
)
from .errors import UnsupportedParameter
from .forms import CubicHamiltonian, PoissonStructure, SystemSpec, canonical_poisson
from .integrators import STATUS_SINGULAR, Method, iterate

__all__ = [
    "MASK_DET_TOL",
    "MIN_SWEEP_STEPS",
    "CatalogEntry",
    "DriftSweepResult",
    "DriftSweepRow",
    "LevelSetGrid",
    "PortraitOrbit",
    "SingularPointSet",
    "atomic_write_text",
    "catalog",
    "catalog_entry",
    "drift_sweep",
    "level_set_grid",
    "max_workers",
    "phase_portrait",
    "singular_scan",
    "suzuki_drift",
    "write_grid_csv",
    "write_portrait_csv",
    "write_singular_csv",
    "write_sweep_csv",
    "write_trajectory_csv",
]

# Grid points where |det(I - (h/2) f'(x))| falls below this are masked for
# plotting; the much tighter evaluation sentinel lives in `conserved`.
MASK_DET_TOL = 1e-3

# Below this many steps a fitted drift slope is dominated by the oscillatory
# part of the energy error rather than by secular drift.
MIN_SWEEP_STEPS = 1000

_CYCLIC_K3 = np.array([[0.0, 1.0, -1.0], [-1.0, 0.0, 1.0], [1.0, -1.0, 0.0]])


def _frozen(values) -> np.ndarray:
    out = np.array(values, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    """A named example system plus parameters known to exercise it well."""

    system: SystemSpec
    recommended_h: tuple[float, ...]
    x0: np.ndarray
    recommended_steps: int
    notes: str

    @property
    def name(self) -> str:
        return self.system.name

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system.to_dict(),
            "recommended_h": list(self.recommended_h),
            "x0": self.x0.tolist(),
            "recommended_steps": self.recommended_steps,
            "notes": self.notes,
        }


def _henon_heiles() -> CatalogEntry:
    ham = CubicHamiltonian.from_monomials(
        2,
        cubic={(0, 0, 1): 1.0, (1, 1, 1): -1.0 / 3.0},
        quadratic={(0, 0): 0.5, (1, 1): 0.5},
    )
    system = SystemSpec.from_hamiltonian("henon_heiles", ham, canonical_poisson(2))
    return CatalogEntry(
        system=system,
        recommended_h=(1.0 / 3.0, 2.0 / 3.0),
        x0=_frozen([0.1, 0.1]),
        recommended_steps=1000,
        notes=(
            "Planar cubic potential H = (q^2+p^2)/2 + q^2 p - p^3/3 whose level "
            "sets have a 3-fold rotational symmetry.  The one-step map blows up "
            "on the circle q^2+p^2 = (1+h^2/4)/h^2: radius 1.58 at h=2/3, "
            "radius 3.04 at h=1/3."
        ),
    )


def _nonsym() -> CatalogEntry:
    ham = CubicHamiltonian.from_monomials(
        2,
        cubic={(0, 0, 0): -1.0, (1, 1, 1): -1.0},
        quadratic={(0, 0): 1.0},
        linear=[0.0, 1.0],
    )
    system = SystemSpec.from_hamiltonian("nonsym", ham, canonical_poisson(2))
    return CatalogEntry(
        system=system,
        recommended_h=(0.3,),
        x0=_frozen([0.323, 1.0 / math.sqrt(3.0)]),
        recommended_steps=2000,
        notes=(
            "Nonsymmetric planar system H = p - p^3 + q^2 - q^3 with an "
            "elliptic fixed point at (2/3, 1/sqrt(3)); the default start lies "
            "on a bounded orbit around it and is the standard configuration "
            "for drift-slope comparisons."
        ),
    )


def _volterra() -> CatalogEntry:
    ham = CubicHamiltonian.from_monomials(3, cubic={(0, 1, 2): 1.0})
    system = SystemSpec.from_hamiltonian("volterra", ham, PoissonStructure(_CYCLIC_K3))
    return CatalogEntry(
        system=system,
        recommended_h=(0.1,),
        x0=_frozen([0.3, 0.4, 0.5]),
        recommended_steps=1000,
        notes=(
            "Cyclic three-component chain H = x1 x2 x3 on a constant "
            "degenerate structure; x1 + x2 + x3 spans the Casimir direction "
            "and is preserved to rounding error."
        ),
    )


def _dressing() -> CatalogEntry:
    ham = CubicHamiltonian.from_monomials(
        3,
        cubic={
            (0, 1, 2): 2.0,
            (0, 0, 1): 1.0,
            (0, 0, 2): 1.0,
            (0, 1, 1): 1.0,
            (1, 1, 2): 1.0,
            (0, 2, 2): 1.0,
            (1, 2, 2): 1.0,
        },
        linear=[-1.0, -1.0, -1.0],
    )
    system = SystemSpec.from_hamiltonian(
        "dressing",
        ham,
        PoissonStructure(_CYCLIC_K3),
        metadata={"alpha": [1.0, 1.0, 1.0]},
    )
    return CatalogEntry(
        system=system,
        recommended_h=(0.1,),
        x0=_frozen([0.2, 0.3, 0.5]),
        recommended_steps=1000,
        notes=(
            "Chain system H = (x1+x2)(x2+x3)(x3+x1) - alpha.x on the same "
            "cyclic structure as the x1 x2 x3 chain, with alpha = (1,1,1)."
        ),
    )


def _three_wave() -> CatalogEntry:
    ham = CubicHamiltonian.from_monomials(
        6,
        cubic={
            (0, 1, 2): 2.0,
            (0, 4, 5): -2.0,
            (1, 3, 5): -2.0,
            (2, 3, 4): -2.0,
        },
    )
    system = SystemSpec.from_hamiltonian(
        "three_wave",
        ham,
        canonical_poisson(6),
        metadata={"encoding": "(Re z1, Re z2, Re z3, Im z1, Im z2, Im z3)"},
    )
    return CatalogEntry(
        system=system,
        recommended_h=(0.02,),
        x0=_frozen([0.1, 0.08, -0.06, 0.05, 0.04, -0.1]),
        recommended_steps=150,
        notes=(
            "Resonant-triad interaction H = z1 z2 z3 + conj(z1 z2 z3) on C^3, "
            "encoded on R^6 with the canonical structure.  Generic orbits "
            "escape to infinity in finite time, so the recommended window "
            "stops well before the escape."
        ),
    )


_BUILDERS = (_henon_heiles, _nonsym, _volterra, _dressing, _three_wave)


def catalog() -> tuple[CatalogEntry, ...]:
    """All bundled example systems, in a fixed order."""
    return tuple(build() for build in _BUILDERS)


def catalog_entry(name: str) -> CatalogEntry:
    """Look up one bundled system by name."""
    entries = catalog()
    for entry in entries:
        if entry.name == name:
            return entry
    known = ", ".join(entry.name for entry in entries)
    raise ValueError(f"unknown system {name!r}; available: {known}")


def max_workers() -> int:
    """Worker cap for sweeps, controlled by the KAHAN_GEOM_THREADS variable."""
    raw = os.environ.get("KAHAN_GEOM_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"KAHAN_GEOM_THREADS must be an integer, got {raw!r}") from exc
    return max(1, cap)


@dataclass(frozen=True)
class DriftSweepRow:
    """Fitted per-step drift slope for one family parameter."""

    a: float
    slope: float
    flag: int


@dataclass(frozen=True, eq=False)
class DriftSweepResult:
    """One row per requested parameter, plus the shared run configuration."""

    rows: tuple[DriftSweepRow, ...]
    h: float
    n_steps: int
    x0: np.ndarray


def _sweep_row(system: SystemSpec, a: float, h: float, n_steps: int, x0) -> DriftSweepRow:
    method = Method.kahan() if a == -0.5 else Method.family(a)
    traj = iterate(method, system.vf, x0, h, n_steps, stride=1)
    if traj.status != 0:
        return DriftSweepRow(a=a, slope=math.nan, flag=int(traj.status))
    if a == -0.5:
        series = modified_hamiltonian_batch(system.hamiltonian, system.poisson, traj.states, h)
    else:
        series = second_order_modified_energy(system.hamiltonian, system.poisson, traj.states, h, a)
    if not np.all(np.isfinite(series)):
        return DriftSweepRow(a=a, slope=math.nan, flag=STATUS_SINGULAR)
    slope = detrended_drift_slope(series, steps=traj.step_index)
    return DriftSweepRow(a=a, slope=float(slope), flag=0)


def drift_sweep(entry: CatalogEntry, a_values, h: float, n_steps: int, x0=None) -> DriftSweepResult:
    """Fit the per-step drift of a second-order energy proxy for each a.

    For a = -1/2 the proxy is the exactly conserved modified energy, so its
    slope sits at the rounding floor.  Other family members use the
    second-order modified energy, which removes the dominant oscillatory
    error term and leaves the secular drift that separates the non-drifting
    special parameters from generic ones.  Runs that diverge, stall, or hit
    the singular set are flagged and get a NaN slope instead of a fit.
    """
    if n_steps < MIN_SWEEP_STEPS:
        raise ValueError(f"drift fits need at least {MIN_SWEEP_STEPS} steps, got {n_steps}")
    system = entry.system
    if system.hamiltonian is None:
        raise ValueError("drift sweeps need a system with a generating function")
    start = np.array(entry.x0 if x0 is None else x0, dtype=float)
    a_list = [float(a) for a in a_values]
    workers = min(max_workers(), len(a_list)) if a_list else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda a: _sweep_row(system, a, h, n_steps, start), a_list))
    else:
        rows = [_sweep_row(system, a, h, n_steps, start) for a in a_list]
    return DriftSweepResult(rows=tuple(rows), h=float(h), n_steps=int(n_steps), x0=_frozen(start))


@dataclass(frozen=True, eq=False)
class LevelSetGrid:
    """Sampled scalar field on a rectangular grid, with a singular-set mask."""

    quantity: str
    h: float | None
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    mask: np.ndarray


def _grid_points(bbox, resolution: int):
    if len(bbox) != 4:
        raise ValueError("bounding box must be (xlo, xhi, ylo, yhi)")
    if resolution < 2:
        raise ValueError(f"grid resolution must be at least 2, got {resolution}")
    xlo, xhi, ylo, yhi = (float(v) for v in bbox)
    xs = np.linspace(xlo, xhi, resolution)
    ys = np.linspace(ylo, yhi, resolution)
    gx, gy = np.meshgrid(xs, ys)
    return xs, ys, np.stack([gx.ravel(), gy.ravel()], axis=1)


def _step_matrix_dets(vf, states: np.ndarray, h: float) -> np.ndarray:
    """det(I - (h/2) f'(x)) for a batch of points."""
    jac = 2.0 * np.einsum("ijk,pk->pij", vf.T, states) + vf.B
    return np.linalg.det(np.eye(vf.n) - 0.5 * h * jac)


def level_set_grid(entry: CatalogEntry, quantity: str, bbox, resolution: int, h=None) -> LevelSetGrid:
    """Sample H or the modified energy on a grid for contour plotting.

    Modified-energy grids mask points where |det(I - (h/2) f'(x))| <
    MASK_DET_TOL; within the much tighter evaluation sentinel the value
    itself becomes +inf.  Every masked point should be skipped by plotters.
    """
    system = entry.system
    if system.n != 2:
        raise ValueError("level-set grids are only defined for planar systems")
    if quantity not in ("H", "Htilde"):
        raise ValueError(f"unknown grid quantity {quantity!r}; expected 'H' or 'Htilde'")
    xs, ys, pts = _grid_points(bbox, resolution)
    shape = (resolution, resolution)
    if quantity == "H":
        values = system.hamiltonian.value(pts).reshape(shape)
        return LevelSetGrid("H", None, xs, ys, values, np.zeros(shape, dtype=np.uint8))
    if h is None:
        raise ValueError("the modified-energy grid needs a step size h")
    values = modified_hamiltonian_batch(
        system.hamiltonian, system.poisson, pts, float(h), sentinel=np.inf
    )
    dets = _step_matrix_dets(system.vf, pts, float(h))
    mask = (np.abs(dets) < MASK_DET_TOL).astype(np.uint8)
    return LevelSetGrid("Htilde", float(h), xs, ys, values.reshape(shape), mask.reshape(shape))


@dataclass(frozen=True, eq=False)
class PortraitOrbit:
    """Recorded states of one orbit; nonzero status marks a truncated run."""

    init: np.ndarray
    states: np.ndarray
    step_index: np.ndarray
    status: int


def phase_portrait(entry: CatalogEntry, method: Method, h: float, inits, n_steps: int, stride=None):
    """Run one orbit per starting point and return the recorded states."""
    system = entry.system
    if system.n != 2:
        raise ValueError("phase portraits are only defined for planar systems")
    orbits = []
    for init in inits:
        start = np.array(init, dtype=float)
        traj = iterate(method, system.vf, start, h, n_steps, stride=stride)
        orbits.append(
            PortraitOrbit(
                init=_frozen(start),
                states=traj.states,
                step_index=traj.step_index,
                status=int(traj.status),
            )
        )
    return orbits


def suzuki_drift(entry: CatalogEntry, h: float, n_steps: int, x0=None):
    """Drift slope of the modified energy under the three-stage composition.

    Returns (slope, series).  The composed step is second order and
    symmetric but does not conserve the modified energy, so its slope sits
    many orders above the single-step control; NaN when the run is empty or
    truncated.
    """
    system = entry.system
    if system.hamiltonian is None:
        raise ValueError("the drift diagnostic needs a system with a generating function")
    start = np.array(entry.x0 if x0 is None else x0, dtype=float)
    traj = iterate(Method.suzuki(), system.vf, start, h, n_steps, stride=1)
    series = modified_hamiltonian_batch(
        system.hamiltonian, system.poisson, traj.states, h, sentinel=np.inf
    )
    if n_steps == 0 or traj.status != 0 or not np.all(np.isfinite(series)):
        return math.nan, series
    return float(detrended_drift_slope(series, steps=traj.step_index)), series


@dataclass(frozen=True, eq=False)
class SingularPointSet:
    """Grid points where the step matrix is close to singular."""

    h: float
    points: np.ndarray
    dets: np.ndarray


def singular_scan(entry: CatalogEntry, h: float, bbox, resolution: int) -> SingularPointSet:
    """Collect grid points with |det(I - (h/2) f'(x))| below MASK_DET_TOL."""
    system = entry.system
    if system.n != 2:
        raise ValueError("singular scans are only defined for planar systems")
    _, _, pts = _grid_points(bbox, resolution)
    dets = _step_matrix_dets(system.vf, pts, float(h))
    keep = np.abs(dets) < MASK_DET_TOL
    return SingularPointSet(h=float(h), points=pts[keep], dets=dets[keep])


def _fmt(value) -> str:
    return format(float(value), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write text to a temp file in the target directory, then rename."""
    target = os.fspath(path)
    directory = os.path.dirname(target) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kahan-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_rows(path, header, rows) -> None:
    """Write a CSV to a temp file in the target directory, then rename."""
    target = os.fspath(path)
    directory = os.path.dirname(target) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kahan-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _density_column(system: SystemSpec, method: Method, states: np.ndarray, h: float) -> np.ndarray:
    try:
        a = method.family_parameter
    except UnsupportedParameter:
        return np.full(states.shape[0], np.nan)
    if a == 0.0:
        return np.ones(states.shape[0])
    if a not in (-0.5, 0.5):
        return np.full(states.shape[0], np.nan)
    dets = _step_matrix_dets(system.vf, states, h)
    if a == 0.5:
        return dets
    with np.errstate(divide="ignore"):
        return 1.0 / dets


def write_trajectory_csv(path, system: SystemSpec, method: Method, trajectory) -> None:
    """Write step,t,x1..xn,H,Htilde,measure(,casimir_i..) rows for one run.

    Systems without a generating function get NaN in the H and Htilde
    columns; the measure column holds the invariant density for the method's
    family parameter when one exists ({-1/2, 0, 1/2}) and NaN otherwise.
    """
    states = trajectory.states
    n = states.shape[1]
    header = ["step", "t"] + [f"x{i + 1}" for i in range(n)] + ["H", "Htilde", "measure"]
    basis = []
    if system.poisson is not None:
        basis = system.poisson.casimir_basis()
        header += [f"casimir_{i + 1}" for i in range(len(basis))]
    if system.hamiltonian is not None:
        h_col = np.asarray(system.hamiltonian.value(states), dtype=float)
        ht_col = modified_hamiltonian_batch(
            system.hamiltonian, system.poisson, states, trajectory.h, sentinel=np.inf
        )
    else:
        h_col = np.full(states.shape[0], np.nan)
        ht_col = np.full(states.shape[0], np.nan)
    measure = _density_column(system, method, states, trajectory.h)
    rows = []
    for k in range(states.shape[0]):
        row = [str(int(trajectory.step_index[k])), _fmt(trajectory.step_index[k] * trajectory.h)]
        row += [_fmt(v) for v in states[k]]
        row += [_fmt(h_col[k]), _fmt(ht_col[k]), _fmt(measure[k])]
        row += [_fmt(states[k] @ v) for v in basis]
        rows.append(row)
    _atomic_write_rows(path, header, rows)


def write_grid_csv(path, grid: LevelSetGrid) -> None:
    """Write x,y,value,mask rows, x varying fastest."""
    rows = []
    res_y, res_x = grid.values.shape
    for iy in range(res_y):
        for ix in range(res_x):
            rows.append(
                [
                    _fmt(grid.xs[ix]),
                    _fmt(grid.ys[iy]),
                    _fmt(grid.values[iy, ix]),
                    str(int(grid.mask[iy, ix])),
                ]
            )
    _atomic_write_rows(path, ["x", "y", "value", "mask"], rows)


def write_sweep_csv(path, result: DriftSweepResult) -> None:
    """Write a,slope,flag rows; flagged rows carry slope = nan."""
    rows = [[_fmt(row.a), _fmt(row.slope), str(int(row.flag))] for row in result.rows]
    _atomic_write_rows(path, ["a", "slope", "flag"], rows)


def write_portrait_csv(path, orbits) -> None:
    """Write orbit,step,x1..xn rows, one block per starting point."""
    orbits = list(orbits)
    if not orbits:
        raise ValueError("no orbits to write")
    n = orbits[0].states.shape[1]
    header = ["orbit", "step"] + [f"x{i + 1}" for i in range(n)]
    rows = []
    for idx, orbit in enumerate(orbits):
        for k in range(orbit.states.shape[0]):
            rows.append(
                [str(idx), str(int(orbit.step_index[k]))] + [_fmt(v) for v in orbit.states[k]]
            )
    _atomic_write_rows(path, header, rows)


def write_singular_csv(path, scan: SingularPointSet) -> None:
    """Write x,y,det rows for the near-singular grid points."""
    rows = [
        [_fmt(point[0]), _fmt(point[1]), _fmt(det)]
        for point, det in zip(scan.points, scan.dets)
    ]
    _atomic_write_rows(path, ["x", "y", "det"], rows)
