"""Self-contained Hermitian eigensolver: Householder tridiagonalization
followed by implicit-shift QL on the real symmetric tridiagonal matrix.

Only eigenvalues are computed; that is all the trace-norm and positivity
diagnostics need, and it keeps the inner loop allocation-free.
"""

from __future__ import annotations

import numpy as np

QL_MAX_SWEEPS = 50


class EigensolverError(RuntimeError):
    """Implicit QL failed to converge within the iteration cap."""


def _tridiagonalize(a: np.ndarray):
    """Reduce a Hermitian matrix to real symmetric tridiagonal form.

    Returns (d, e): diagonal and subdiagonal (length m-1), both real.  Uses
    complex Householder reflections; off-diagonal phases are dropped at the
    end (a diagonal unitary similarity, eigenvalues unchanged).
    """
    a = np.array(a, dtype=np.complex128, copy=True)
    m = a.shape[0]
    for k in range(m - 2):
        x = a[k + 1:, k].copy()
        nx = np.linalg.norm(x)
        if nx == 0.0:
            continue
        # reflect x onto alpha * e1 with a cancellation-free phase choice
        x0 = x[0]
        phase = x0 / abs(x0) if abs(x0) > 0.0 else 1.0
        alpha = -phase * nx
        v = x
        v[0] = v[0] - alpha
        nv = np.linalg.norm(v)
        if nv < 1e-300:
            continue
        v = v / nv
        sub = a[k + 1:, k + 1:]
        w = sub @ v
        vw = np.vdot(v, w)
        # H sub H with H = I - 2 v v^dagger (sub Hermitian)
        sub -= 2.0 * np.outer(v, w.conj())
        sub -= 2.0 * np.outer(w, v.conj())
        sub += (4.0 * vw) * np.outer(v, v.conj())
        a[k + 1:, k + 1:] = sub
        a[k + 1, k] = alpha
        a[k + 2:, k] = 0.0
        a[k, k + 1:] = np.conj(a[k + 1:, k])
    d = np.real(np.diag(a)).copy()
    e = np.abs(np.diag(a, -1)).astype(np.float64)
    return d, e


def _ql_implicit(d: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Eigenvalues of a real symmetric tridiagonal matrix (implicit-shift QL)."""
    m = d.size
    d = d.copy()
    e = np.append(e.copy(), 0.0)
    eps = np.finfo(float).eps
    # absolute deflation floor: zeroing such an element perturbs eigenvalues
    # by at most eps * ||A||, and keeps noise-level degenerate blocks
    # (e.g. the null space of a rank-two difference) from cycling forever
    anorm = float(np.max(np.abs(d)) + (np.max(np.abs(e)) if m > 1 else 0.0))
    if anorm == 0.0:
        return d
    floor = eps * anorm
    for l in range(m):
        sweeps = 0
        while True:
            # find a negligible subdiagonal element splitting the matrix
            for mm in range(l, m - 1):
                dd = abs(d[mm]) + abs(d[mm + 1])
                if abs(e[mm]) <= eps * dd + floor:
                    break
            else:
                mm = m - 1
            if mm == l:
                break
            sweeps += 1
            if sweeps > QL_MAX_SWEEPS:
                raise EigensolverError(
                    f"implicit QL did not converge for index {l} after {QL_MAX_SWEEPS} sweeps"
                )
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            g = d[mm] - d[l] + e[l] / (g + (r if g >= 0 else -r))
            s, c = 1.0, 1.0
            p = 0.0
            for i in range(mm - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[mm] = 0.0
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
            else:
                d[l] -= p
                e[l] = g
                e[mm] = 0.0
                continue
            # loop exited through the r == 0 recovery branch
            continue
    return np.sort(d)


def hermitian_eigenvalues(matrix: np.ndarray, hermitian_tol: float = 1e-10) -> np.ndarray:
    """Eigenvalues (ascending) of a Hermitian matrix.

    Raises ValueError if the input is visibly non-Hermitian and
    EigensolverError on QL non-convergence.
    """
    a = np.asarray(matrix, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.conj().T)) > hermitian_tol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    m = a.shape[0]
    if m == 1:
        return np.array([float(np.real(a[0, 0]))])
    d, e = _tridiagonalize(a)
    return _ql_implicit(d, e)
