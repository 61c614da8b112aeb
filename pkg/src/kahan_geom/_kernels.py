"""Compiled trajectory loops.

These repeat the one-step maps from the integrators module in a form the
JIT compiler digests: explicit index loops, preallocated buffers, no Python
objects. The compiled code is cached on disk, so the compilation cost is
paid once per machine, not once per process.

Shared status codes: 0 completed, 1 singular linear system, 2 state norm
crossed the divergence bound (or went non-finite), 3 stage iteration
stalled before reaching its tolerance.
"""

import numpy as np
from numba import njit

DIVERGENCE_BOUND = 1e12
PIVOT_RTOL = 1e-14
RESIDUAL_FLOOR = 2.5e-16
RESIDUAL_TARGET = 1e-13
GAMMA1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
GAMMA2 = 1.0 - 2.0 * GAMMA1


@njit(cache=True, nogil=True)
def _solve_inplace(a, b):
    """Partial-pivoted elimination; overwrites a and b, solution lands in b."""
    n = a.shape[0]
    scale = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            v = abs(a[i, j])
            if v > s:
                s = v
        scale[i] = s
    for k in range(n):
        p = k
        best = abs(a[k, k])
        for r in range(k + 1, n):
            v = abs(a[r, k])
            if v > best:
                best = v
                p = r
        if best <= PIVOT_RTOL * scale[p]:
            return 1
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
            tmp = scale[k]
            scale[k] = scale[p]
            scale[p] = tmp
        piv = a[k, k]
        for r in range(k + 1, n):
            m = a[r, k] / piv
            if m != 0.0:
                for j in range(k + 1, n):
                    a[r, j] -= m * a[k, j]
                b[r] -= m * b[k]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for j in range(i + 1, n):
            s -= a[i, j] * b[j]
        b[i] = s / a[i, i]
    return 0


@njit(cache=True, nogil=True)
def _eval_field(T, B, c, x, out):
    n = x.shape[0]
    for i in range(n):
        acc = c[i]
        for j in range(n):
            acc += B[i, j] * x[j]
            tj = 0.0
            for k in range(n):
                tj += T[i, j, k] * x[k]
            acc += tj * x[j]
        out[i] = acc


@njit(cache=True, nogil=True)
def _kahan_advance(T, B, c, x, h, amat, rhs):
    """One linearly implicit step in place; returns 0 or 1 (singular)."""
    n = x.shape[0]
    _eval_field(T, B, c, x, rhs)
    for i in range(n):
        rhs[i] *= h
    for i in range(n):
        for m in range(n):
            tm = 0.0
            for k in range(n):
                tm += T[i, m, k] * x[k]
            amat[i, m] = -0.5 * h * (2.0 * tm + B[i, m])
        amat[i, i] += 1.0
    if _solve_inplace(amat, rhs) != 0:
        return 1
    for i in range(n):
        x[i] += rhs[i]
    return 0


@njit(cache=True, nogil=True)
def _too_big(x):
    for i in range(x.shape[0]):
        v = abs(x[i])
        if v > DIVERGENCE_BOUND or v != v:
            return True
    return False


@njit(cache=True, nogil=True)
def _record(states, rec_steps, nrec, x, done):
    if rec_steps[nrec - 1] != done:
        states[nrec] = x
        rec_steps[nrec] = done
        return nrec + 1
    return nrec


@njit(cache=True, nogil=True)
def run_kahan(T, B, c, x0, h, n_steps, stride, states, rec_steps):
    n = x0.shape[0]
    x = x0.copy()
    amat = np.empty((n, n))
    rhs = np.empty(n)
    states[0] = x
    rec_steps[0] = 0
    nrec = 1
    for s in range(n_steps):
        if _kahan_advance(T, B, c, x, h, amat, rhs) != 0:
            nrec = _record(states, rec_steps, nrec, x, s)
            return 1, s, nrec
        done = s + 1
        big = _too_big(x)
        if done % stride == 0 or done == n_steps or big:
            nrec = _record(states, rec_steps, nrec, x, done)
        if big:
            return 2, done, nrec
    return 0, n_steps, nrec


@njit(cache=True, nogil=True)
def run_suzuki(T, B, c, x0, h, n_steps, stride, states, rec_steps):
    n = x0.shape[0]
    x = x0.copy()
    amat = np.empty((n, n))
    rhs = np.empty(n)
    states[0] = x
    rec_steps[0] = 0
    nrec = 1
    h1 = GAMMA1 * h
    h2 = GAMMA2 * h
    for s in range(n_steps):
        bad = _kahan_advance(T, B, c, x, h1, amat, rhs)
        if bad == 0:
            bad = _kahan_advance(T, B, c, x, h2, amat, rhs)
        if bad == 0:
            bad = _kahan_advance(T, B, c, x, h1, amat, rhs)
        if bad != 0:
            nrec = _record(states, rec_steps, nrec, x, s)
            return 1, s, nrec
        done = s + 1
        big = _too_big(x)
        if done % stride == 0 or done == n_steps or big:
            nrec = _record(states, rec_steps, nrec, x, done)
        if big:
            return 2, done, nrec
    return 0, n_steps, nrec


@njit(cache=True, nogil=True)
def run_family(T, B, c, a, x0, h, n_steps, stride, states, rec_steps):
    n = x0.shape[0]
    x = x0.copy()
    fx = np.empty(n)
    fm = np.empty(n)
    fp = np.empty(n)
    r = np.empty(n)
    jmat = np.empty((n, n))
    xp = np.empty(n)
    mid = np.empty(n)
    states[0] = x
    rec_steps[0] = 0
    nrec = 1
    w_mid = 1.0 - 2.0 * a
    for s in range(n_steps):
        _eval_field(T, B, c, x, fx)
        for i in range(n):
            xp[i] = x[i] + h * fx[i]
        ok = False
        prev = np.inf
        for _ in range(50):
            for i in range(n):
                mid[i] = 0.5 * (x[i] + xp[i])
            _eval_field(T, B, c, mid, fm)
            _eval_field(T, B, c, xp, fp)
            rn = 0.0
            xn = 0.0
            for i in range(n):
                r[i] = xp[i] - x[i] - h * (a * fx[i] + w_mid * fm[i] + a * fp[i])
                v = abs(r[i])
                if v > rn or v != v:
                    rn = v
                w = abs(xp[i])
                if w > xn:
                    xn = w
            if rn != rn:
                break
            if rn <= RESIDUAL_FLOOR * (1.0 + xn):
                ok = True
                break
            if rn >= prev:
                ok = prev <= RESIDUAL_TARGET * (1.0 + xn)
                break
            prev = rn
            for i in range(n):
                for m in range(n):
                    tm = 0.0
                    tp = 0.0
                    for k in range(n):
                        tm += T[i, m, k] * mid[k]
                        tp += T[i, m, k] * xp[k]
                    jmat[i, m] = -h * (
                        0.5 * w_mid * (2.0 * tm + B[i, m]) + a * (2.0 * tp + B[i, m])
                    )
                jmat[i, i] += 1.0
            if _solve_inplace(jmat, r) != 0:
                nrec = _record(states, rec_steps, nrec, x, s)
                return 1, s, nrec
            for i in range(n):
                xp[i] -= r[i]
        if not ok:
            nrec = _record(states, rec_steps, nrec, x, s)
            return 3, s, nrec
        for i in range(n):
            x[i] = xp[i]
        done = s + 1
        big = _too_big(x)
        if done % stride == 0 or done == n_steps or big:
            nrec = _record(states, rec_steps, nrec, x, done)
        if big:
            return 2, done, nrec
    return 0, n_steps, nrec
