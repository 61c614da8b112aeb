"""Small dense linear algebra with explicit singularity semantics.

Matrices are plain numpy arrays (row-major). Everything here is written for
the n <= ~12 systems this package works with; nothing is tuned for large n.

`solve` and `det` use Gaussian elimination with partial pivoting and declare
a matrix singular as soon as a pivot falls below ``1e-14`` times the scale of
its row. This threshold is part of the contract: a singular solve is how a
step detects that the state sits on the zero set of det(I - h/2 f').
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateFit, InsufficientSamples, SingularMatrix

PIVOT_RTOL = 1e-14


def _eliminate(a):
    """LU-factor ``a`` in place with partial pivoting.

    Returns (permutation sign, singular flag). Row scales are taken from the
    input matrix and permuted along with the rows, so the pivot test stays
    relative to the magnitude of the row it sits in.
    """
    n = a.shape[0]
    scale = np.max(np.abs(a), axis=1)
    sign = 1.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        pivot = abs(a[p, k])
        if pivot <= PIVOT_RTOL * scale[p]:
            return sign, True
        if p != k:
            a[[k, p]] = a[[p, k]]
            scale[[k, p]] = scale[[p, k]]
            sign = -sign
        mult = a[k + 1 :, k] / a[k, k]
        a[k + 1 :, k] = mult
        a[k + 1 :, k + 1 :] -= np.outer(mult, a[k, k + 1 :])
    return sign, False


def _eliminate_with_rhs(a, b):
    n = a.shape[0]
    scale = np.max(np.abs(a), axis=1)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        pivot = abs(a[p, k])
        if pivot <= PIVOT_RTOL * scale[p]:
            raise SingularMatrix(f"pivot {pivot:.3e} below {PIVOT_RTOL} * row scale {scale[p]:.3e}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
            scale[[k, p]] = scale[[p, k]]
        mult = a[k + 1 :, k] / a[k, k]
        a[k + 1 :, k + 1 :] -= mult[:, None] * a[k, k + 1 :]
        b[k + 1 :] -= np.outer(mult, b[k])
    for i in range(n - 1, -1, -1):
        b[i] -= a[i, i + 1 :] @ b[i + 1 :]
        b[i] /= a[i, i]


def solve(a, b):
    """Solve ``a @ x = b`` (vector or matrix ``b``) by partial-pivoted elimination.

    Raises SingularMatrix when any pivot falls below 1e-14 times its row scale.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    b = np.array(b, dtype=float)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if b.shape[0] != a.shape[0]:
        raise ValueError("right-hand side does not match matrix dimension")
    _eliminate_with_rhs(a, b)
    return b[:, 0] if vector else b


def det(a):
    """Determinant via the pivoted factorization; exactly 0.0 on singular input."""
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        return 1.0
    sign, singular = _eliminate(a)
    if singular:
        return 0.0
    return float(sign * np.prod(np.diag(a)))


def adjugate(a):
    """Adjugate via cofactors of minors.

    Satisfies ``a @ adjugate(a) = det(a) * I`` even when ``a`` is singular,
    which the resolvent-numerator evaluations rely on.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if n == 1:
        return np.ones((1, 1))
    rows = np.arange(n)
    adj = np.empty((n, n))
    for i in range(n):
        keep_i = rows != i
        for j in range(n):
            minor = a[np.ix_(keep_i, rows != j)]
            adj[j, i] = (-1.0) ** (i + j) * det(minor)
    return adj


def null_space(a, tol=1e-10):
    """Orthonormal basis (columns) of the kernel, via SVD.

    A right singular vector belongs to the kernel when its singular value is
    at most ``tol`` times the largest one.
    """
    a = np.asarray(a, dtype=float)
    _, s, vt = np.linalg.svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(a.shape[1])
    mask = s <= tol * s[0]
    basis = vt[len(s) :].tolist()  # rows beyond min(m,n) (wide matrices)
    kernel = np.vstack([vt[: len(s)][mask], np.array(basis).reshape(-1, a.shape[1])])
    return kernel.T


def fit_line(ts, vs):
    """Least-squares line fit; returns (slope, intercept).

    Raises DegenerateFit when fewer than two distinct abscissae are given.
    """
    ts = np.asarray(ts, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if ts.size < 2 or np.ptp(ts) == 0.0:
        raise DegenerateFit("need at least two distinct abscissae")
    design = np.vstack([ts, np.ones_like(ts)]).T
    coef, *_ = np.linalg.lstsq(design, vs, rcond=None)
    return float(coef[0]), float(coef[1])


def chebyshev_points(m):
    """m Chebyshev sample points on [-1, 1] (well-conditioned for degree fits)."""
    if m < 1:
        raise ValueError("need at least one point")
    k = np.arange(m)
    return np.cos((2.0 * k + 1.0) * np.pi / (2.0 * m))


def poly_degree_estimate(ts, vs, dmax, rel_tol=1e-6):
    """Smallest degree d <= dmax whose fit reproduces all samples.

    The residual is measured relative to the largest sample magnitude; the
    sentinel ``dmax + 1`` means no degree up to dmax fits. Callers should
    sample at Chebyshev points (``chebyshev_points``) so the fit matrix stays
    well conditioned. Raises InsufficientSamples unless there are at least
    ``dmax + 2`` distinct abscissae, the minimum that makes degree dmax
    falsifiable.
    """
    ts = np.asarray(ts, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if ts.shape != vs.shape or ts.ndim != 1:
        raise ValueError("samples must be two equal-length 1-d arrays")
    if np.unique(ts).size < dmax + 2:
        raise InsufficientSamples(f"need at least {dmax + 2} distinct samples for dmax={dmax}")
    scale = float(np.max(np.abs(vs)))
    if scale == 0.0:
        return 0
    for d in range(dmax + 1):
        coef = np.polynomial.chebyshev.chebfit(ts, vs, d)
        resid = np.max(np.abs(np.polynomial.chebyshev.chebval(ts, coef) - vs))
        if resid <= rel_tol * scale:
            return d
    return dmax + 1
