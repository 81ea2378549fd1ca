"""Cyclic Jacobi diagonalization of small dense Hermitian matrices.

Each (p, q) rotation is a phase rotation that makes ``a[p, q]`` real followed
by an ordinary real Jacobi rotation, so the accumulated transform stays
unitary.  Compiled with numba; the pure-Python fallback is only used when
numba is unavailable.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

MAX_SWEEPS = 100
OFF_DIAGONAL_TOL = 1e-12


@njit(cache=True, nogil=True)
def _off_norm(a):
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += a[i, j].real ** 2 + a[i, j].imag ** 2
    return np.sqrt(acc)


@njit(cache=True, nogil=True)
def _jacobi(h, tol, max_sweeps):
    n = h.shape[0]
    a = h.copy()
    v = np.eye(n, dtype=np.complex128)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += a[i, j].real ** 2 + a[i, j].imag ** 2
    total = np.sqrt(total)
    if total == 0.0:
        return np.zeros(n), v, 0, True

    threshold = tol * total
    for sweep in range(max_sweeps):
        if _off_norm(a) < threshold:
            return np.real(np.diag(a)).copy(), v, sweep, True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = np.abs(apq)
                if mag <= 1e-300:
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                phase = np.conj(apq / mag)
                g_pp = c
                g_pq = s
                g_qp = -s * phase
                g_qq = c * phase
                # columns: A <- A G
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp * g_pp + akq * g_qp
                    a[k, q] = akp * g_pq + akq * g_qq
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = vkp * g_pp + vkq * g_qp
                    v[k, q] = vkp * g_pq + vkq * g_qq
                # rows: A <- G^H A
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = np.conj(g_pp) * apk + np.conj(g_qp) * aqk
                    a[q, k] = np.conj(g_pq) * apk + np.conj(g_qq) * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
    converged = _off_norm(a) < threshold
    return np.real(np.diag(a)).copy(), v, max_sweeps, converged


def jacobi_eigh(h, tol=OFF_DIAGONAL_TOL, max_sweeps=MAX_SWEEPS):
    """Eigen-decompose a Hermitian matrix by cyclic Jacobi sweeps.

    Parameters
    ----------
    h : (n, n) array_like
        Hermitian matrix. Not checked here.
    tol : float
        Stop once the off-diagonal Frobenius norm falls below
        ``tol * ||h||_F``.
    max_sweeps : int
        Iteration cap.

    Returns
    -------
    w : (n,) ndarray
        Eigenvalues sorted ascending.
    v : (n, n) ndarray
        Unitary matrix whose columns are the eigenvectors.
    sweeps : int
    converged : bool
    """
    a = np.ascontiguousarray(h, dtype=np.complex128)
    w, v, sweeps, converged = _jacobi(a, float(tol), int(max_sweeps))
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order], int(sweeps), bool(converged)
