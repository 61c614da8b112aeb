"""Polynomial system representations.

Quadratic vector fields f(x) = Q(x) + Bx + c, cubic scalar functions with
exact gradient and Hessian evaluation, constant antisymmetric structure
matrices, and the constructions connecting them: polarization of Q into a
symmetric bilinear map, building f = K grad(H), embedding a nonhomogeneous
cubic into a homogeneous one in dimension n+1, and linear conserved
directions from the kernel of K.

All coefficient arrays are stored in a normalized symmetric layout so that
evaluation identities (gradient contraction, Hessian symmetry) hold to the
last bit, not just to rounding. Point evaluations broadcast over leading
axes: x may be a single n-vector or any (..., n) stack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from . import densela

__all__ = [
    "QuadraticVF",
    "CubicHamiltonian",
    "PoissonStructure",
    "SystemSpec",
    "canonical_poisson",
    "hamiltonian_to_vf",
    "homogenize",
    "affine_pushforward",
]


def _frozen_array(a, shape):
    out = np.array(a, dtype=float)
    if out.shape != shape:
        raise ValueError(f"expected shape {shape}, got {out.shape}")
    out.flags.writeable = False
    return out


def _symmetrize_last_two(t):
    swapped = t.transpose(0, 2, 1)
    if np.array_equal(t, swapped):
        return t
    return (t + swapped) / 2.0


def _symmetrize_full(t):
    n = t.shape[0]
    if all(np.array_equal(t, t.transpose(p)) for p in ((0, 2, 1), (1, 0, 2))):
        return t
    out = np.empty_like(t)
    for i in range(n):
        for j in range(i, n):
            for k in range(j, n):
                orbit = sorted(set(permutations((i, j, k))))
                val = sum(t[p] for p in orbit) / len(orbit)
                for p in orbit:
                    out[p] = val
    return out


def _symmetrize_matrix(s):
    if np.array_equal(s, s.T):
        return s
    return (s + s.T) / 2.0


def _check_points(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != n:
        raise ValueError(f"points must have {n} components on the last axis, got shape {x.shape}")
    return x


def _orbit_size(i, j, k):
    if i == j == k:
        return 1
    if i == j or j == k or i == k:
        return 3
    return 6


def _coef_with_exact_reload(value, mult):
    """Scale a stored coefficient so dividing by mult reloads it bitwise.

    Serialization stores the total coefficient of a monomial; loading divides
    it by the orbit size again. Multiplying and dividing back can each round,
    so nudge the emitted product by ulps until the reload division lands on
    the stored value exactly. Stored values that themselves arose from such a
    division always have a preimage within a few ulps.
    """
    value = float(value)
    if mult == 1:
        return value
    m = value * mult
    if m / mult == value:
        return m
    lo = hi = m
    for _ in range(8):
        lo = np.nextafter(lo, -np.inf)
        if lo / mult == value:
            return float(lo)
        hi = np.nextafter(hi, np.inf)
        if hi / mult == value:
            return float(hi)
    return m


@dataclass(frozen=True)
class QuadraticVF:
    """Vector field f(x) = Q(x) + Bx + c with Q_i(x) = sum_jk T[i,j,k] x_j x_k.

    T is stored symmetric in its last two slots, so T doubles as the
    polarized bilinear map: Q(x, y)_i = sum_jk T[i,j,k] x_j y_k.
    """

    T: np.ndarray
    B: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        t = np.array(self.T, dtype=float)
        if t.ndim != 3 or len(set(t.shape)) != 1:
            raise ValueError(f"quadratic coefficients must be (n, n, n), got {t.shape}")
        n = t.shape[0]
        object.__setattr__(self, "T", _frozen_array(_symmetrize_last_two(t), (n, n, n)))
        object.__setattr__(self, "B", _frozen_array(self.B, (n, n)))
        object.__setattr__(self, "c", _frozen_array(self.c, (n,)))

    @classmethod
    def from_linear(cls, b, c=None):
        b = np.asarray(b, dtype=float)
        n = b.shape[0]
        return cls(np.zeros((n, n, n)), b, np.zeros(n) if c is None else c)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def eval(self, x):
        x = _check_points(x, self.n)
        quad = np.einsum("ijk,...j,...k->...i", self.T, x, x)
        return quad + x @ self.B.T + self.c

    def polarize(self, x, y):
        """Symmetric bilinear map with polarize(x, x) equal to the quadratic part."""
        x = _check_points(x, self.n)
        y = _check_points(y, self.n)
        return np.einsum("ijk,...j,...k->...i", self.T, x, y)

    def jacobian(self, x):
        """Derivative matrix f'(x), affine in x; shape (..., n, n)."""
        x = _check_points(x, self.n)
        return 2.0 * np.einsum("ijk,...k->...ij", self.T, x) + self.B

    def second_derivative(self, u, v):
        """The constant bilinear map f''(u, v) = 2 Q(u, v); base-point free."""
        return 2.0 * self.polarize(u, v)


@dataclass(frozen=True)
class CubicHamiltonian:
    """Scalar function C(x,x,x) + x^T S x + l.x + d with exact derivatives.

    C is stored fully symmetric, so the gradient of the cubic part contracts
    as 3 C(x, x, .); S is stored symmetric, so the Hessian of the quadratic
    part is 2S.
    """

    C: np.ndarray
    S: np.ndarray
    l: np.ndarray
    d: float = 0.0

    def __post_init__(self):
        c = np.array(self.C, dtype=float)
        if c.ndim != 3 or len(set(c.shape)) != 1:
            raise ValueError(f"cubic coefficients must be (n, n, n), got {c.shape}")
        n = c.shape[0]
        s = _symmetrize_matrix(np.array(self.S, dtype=float))
        object.__setattr__(self, "C", _frozen_array(_symmetrize_full(c), (n, n, n)))
        object.__setattr__(self, "S", _frozen_array(s, (n, n)))
        object.__setattr__(self, "l", _frozen_array(self.l, (n,)))
        object.__setattr__(self, "d", float(self.d))

    @classmethod
    def from_monomials(cls, n, cubic=None, quadratic=None, linear=None, constant=0.0):
        """Build from total monomial coefficients.

        cubic maps an index triple (any order) to the coefficient of
        x_i x_j x_k; quadratic is either a dict {(i, j): coefficient of
        x_i x_j} or the full symmetric matrix S with quadratic part x^T S x.
        """
        c = np.zeros((n, n, n))
        for idx, coef in (cubic or {}).items():
            i, j, k = sorted(idx)
            share = coef / _orbit_size(i, j, k)
            for p in set(permutations((i, j, k))):
                c[p] += share
        s = np.zeros((n, n))
        if isinstance(quadratic, dict):
            for idx, coef in quadratic.items():
                i, j = sorted(idx)
                if i == j:
                    s[i, i] += coef
                else:
                    s[i, j] += coef / 2.0
                    s[j, i] += coef / 2.0
        elif quadratic is not None:
            s = np.asarray(quadratic, dtype=float)
        return cls(c, s, np.zeros(n) if linear is None else linear, constant)

    @property
    def n(self) -> int:
        return self.C.shape[0]

    def value(self, x):
        x = _check_points(x, self.n)
        out = (
            np.einsum("ijk,...i,...j,...k->...", self.C, x, x, x)
            + np.einsum("ij,...i,...j->...", self.S, x, x)
            + x @ self.l
            + self.d
        )
        return float(out) if out.ndim == 0 else out

    def gradient(self, x):
        x = _check_points(x, self.n)
        return 3.0 * np.einsum("ijk,...j,...k->...i", self.C, x, x) + 2.0 * (x @ self.S) + self.l

    def hessian(self, x):
        x = _check_points(x, self.n)
        return 6.0 * np.einsum("ijk,...k->...ij", self.C, x) + 2.0 * self.S

    def trilinear(self, x, y, z):
        """The symmetric trilinear form underlying the cubic part."""
        x = _check_points(x, self.n)
        y = _check_points(y, self.n)
        z = _check_points(z, self.n)
        out = np.einsum("ijk,...i,...j,...k->...", self.C, x, y, z)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PoissonStructure:
    """Constant antisymmetric matrix K defining the flow direction K grad(H)."""

    K: np.ndarray
    rank: int = field(init=False)

    def __post_init__(self):
        k = np.array(self.K, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError(f"structure matrix must be square, got {k.shape}")
        if not np.array_equal(k.T, -k):
            raise ValueError("structure matrix must be exactly antisymmetric")
        sing = np.linalg.svd(k, compute_uv=False)
        rank = 0 if sing.size == 0 else int(np.sum(sing > 1e-10 * sing[0]))
        object.__setattr__(self, "K", _frozen_array(k, k.shape))
        object.__setattr__(self, "rank", rank)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def casimir_basis(self):
        """Orthonormal kernel vectors v of K; each v.x is constant under K grad(H)."""
        kernel = densela.null_space(self.K, tol=1e-10)
        return [kernel[:, j].copy() for j in range(kernel.shape[1])]


def canonical_poisson(n: int) -> PoissonStructure:
    """The block structure [[0, I], [-I, 0]] on (q, p) coordinates; n must be even."""
    if n % 2 != 0:
        raise ValueError(f"canonical structure needs even dimension, got {n}")
    half = n // 2
    k = np.zeros((n, n))
    k[:half, half:] = np.eye(half)
    k[half:, :half] = -np.eye(half)
    return PoissonStructure(k)


def hamiltonian_to_vf(ham: CubicHamiltonian, poi: PoissonStructure) -> QuadraticVF:
    """Exact coefficient-level construction of the field K grad(H)."""
    if ham.n != poi.n:
        raise ValueError(f"dimension mismatch: function has n={ham.n}, structure n={poi.n}")
    t = 3.0 * np.einsum("im,mjk->ijk", poi.K, ham.C)
    b = 2.0 * poi.K @ ham.S
    return QuadraticVF(t, b, poi.K @ ham.l)


def homogenize(ham: CubicHamiltonian, poi: PoissonStructure):
    """Embed into dimension n+1 as a homogeneous cubic.

    The extra coordinate x0 multiplies the quadratic part once, the linear
    part twice, and the constant three times, so the extended function
    restricted to x0=1 reproduces the original. The structure matrix gets a
    zero initial row and column, making x0 a conserved linear quantity of
    the extended field.
    """
    n = ham.n
    c = np.zeros((n + 1, n + 1, n + 1))
    c[1:, 1:, 1:] = ham.C
    third = ham.S / 3.0
    c[0, 1:, 1:] = third
    c[1:, 0, 1:] = third
    c[1:, 1:, 0] = third
    lin = ham.l / 3.0
    c[0, 0, 1:] = lin
    c[0, 1:, 0] = lin
    c[1:, 0, 0] = lin
    c[0, 0, 0] = ham.d
    k = np.zeros((n + 1, n + 1))
    k[1:, 1:] = poi.K
    ext_ham = CubicHamiltonian(c, np.zeros((n + 1, n + 1)), np.zeros(n + 1), 0.0)
    return ext_ham, PoissonStructure(k)


def affine_pushforward(vf: QuadraticVF, amat, b) -> QuadraticVF:
    """The field in coordinates y = Ax + b; satisfies g(Ax + b) = A f(x)."""
    amat = np.asarray(amat, dtype=float)
    b = np.asarray(b, dtype=float)
    inv = densela.solve(amat, np.eye(vf.n))
    m = -inv @ b
    t = np.einsum("ia,abc,bj,ck->ijk", amat, vf.T, inv, inv)
    lin = 2.0 * np.einsum("abc,bj,c->aj", vf.T, inv, m) + vf.B @ inv
    return QuadraticVF(t, amat @ lin, amat @ vf.eval(m))


@dataclass(frozen=True)
class SystemSpec:
    """Named bundle of a vector field with its optional generating structure."""

    name: str
    vf: QuadraticVF
    hamiltonian: CubicHamiltonian | None = None
    poisson: PoissonStructure | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.hamiltonian is None) != (self.poisson is None):
            raise ValueError("generating function and structure matrix must come together")
        if self.hamiltonian is not None and self.hamiltonian.n != self.vf.n:
            raise ValueError("generating function dimension does not match the field")
        if self.poisson is not None and self.poisson.n != self.vf.n:
            raise ValueError("structure matrix dimension does not match the field")

    @classmethod
    def from_hamiltonian(cls, name, ham, poi, metadata=None):
        vf = hamiltonian_to_vf(ham, poi)
        return cls(name, vf, ham, poi, metadata or {})

    @classmethod
    def from_vf(cls, name, vf, metadata=None):
        return cls(name, vf, None, None, metadata or {})

    @property
    def n(self) -> int:
        return self.vf.n

    def to_dict(self) -> dict:
        out = {"name": self.name, "n": self.n}
        if self.hamiltonian is not None:
            ham = self.hamiltonian
            cubic = []
            for i in range(self.n):
                for j in range(i, self.n):
                    for k in range(j, self.n):
                        if ham.C[i, j, k] != 0.0:
                            coef = _coef_with_exact_reload(ham.C[i, j, k], _orbit_size(i, j, k))
                            cubic.append({"idx": [i, j, k], "coef": coef})
            out["cubic"] = cubic
            out["quadratic"] = ham.S.tolist()
            out["linear"] = ham.l.tolist()
            out["constant"] = ham.d
            out["poisson"] = self.poisson.K.tolist()
        else:
            out["vf"] = {"T": self.vf.T.tolist(), "B": self.vf.B.tolist(), "c": self.vf.c.tolist()}
        if self.metadata:
            out["metadata"] = dict(self.metadata)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SystemSpec":
        name = data["name"]
        n = int(data["n"])
        metadata = data.get("metadata") or {}
        if "vf" in data:
            raw = data["vf"]
            vf = QuadraticVF(np.array(raw["T"]), np.array(raw["B"]), np.array(raw["c"]))
            return cls.from_vf(name, vf, metadata)
        cubic = {}
        for entry in data.get("cubic", []):
            idx = tuple(int(i) for i in entry["idx"])
            if len(idx) != 3 or list(idx) != sorted(idx):
                raise ValueError(f"monomial index {list(idx)} is not a nondecreasing triple")
            if min(idx) < 0 or max(idx) >= n:
                raise ValueError(f"monomial index {list(idx)} out of range for n={n}")
            if idx in cubic:
                raise ValueError(f"monomial index {list(idx)} appears twice")
            cubic[idx] = float(entry["coef"])
        ham = CubicHamiltonian.from_monomials(
            n,
            cubic=cubic,
            quadratic=np.array(data.get("quadratic", np.zeros((n, n)))),
            linear=np.array(data.get("linear", np.zeros(n)), dtype=float),
            constant=float(data.get("constant", 0.0)),
        )
        poi = PoissonStructure(np.array(data["poisson"]))
        return cls.from_hamiltonian(name, ham, poi, metadata)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SystemSpec":
        return cls.from_dict(json.loads(text))
