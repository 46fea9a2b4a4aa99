# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: batched Hermitian eigensolver and Lorentzian sums.

Drop-in replacements for the routines in :mod:`nvesr._pykernels`; the
selection between the two happens in :mod:`nvesr.kernels`.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot

cnp.import_array()

DEF MAXN = 16
DEF MAX_SWEEPS = 60


cdef void _jacobi(const double complex* h, double complex* vout,
                  double* w, int n) noexcept nogil:
    # split real/imag storage keeps the rotation loops in plain C arithmetic
    cdef double ar[MAXN * MAXN]
    cdef double ai[MAXN * MAXN]
    cdef double vr[MAXN * MAXN]
    cdef double vi[MAXN * MAXN]
    cdef int perm[MAXN]
    cdef int p, q, k, sweep, i, j, ip, iq, tmpi
    cdef double off, fro, mag, theta, t, c, s, er, ei, tmpw, scale
    cdef double xr, xi, yr, yi

    fro = 0.0
    for i in range(n * n):
        ar[i] = h[i].real
        ai[i] = h[i].imag
        vr[i] = 0.0
        vi[i] = 0.0
        fro += ar[i] * ar[i] + ai[i] * ai[i]
    for i in range(n):
        vr[i * n + i] = 1.0

    for sweep in range(MAX_SWEEPS):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += ar[p * n + q] * ar[p * n + q] + ai[p * n + q] * ai[p * n + q]
        if off <= 1e-32 * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                xr = ar[p * n + q]
                xi = ai[p * n + q]
                mag = hypot(xr, xi)
                if mag == 0.0:
                    continue
                theta = (ar[q * n + q] - ar[p * n + p]) / (2.0 * mag)
                if fabs(theta) > 1e150:
                    # rotation angle underflows: the element is negligible
                    ar[p * n + q] = 0.0
                    ai[p * n + q] = 0.0
                    ar[q * n + p] = 0.0
                    ai[q * n + p] = 0.0
                    continue
                # phase from a rescaled copy so subnormal inputs stay unit modulus
                scale = fabs(xr) if fabs(xr) > fabs(xi) else fabs(xi)
                er = xr / scale
                ei = xi / scale
                tmpw = hypot(er, ei)
                er = er / tmpw
                ei = ei / tmpw
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                # columns: a[:,p] <- c a_p - s conj(e) a_q ; a[:,q] <- s a_p + c conj(e) a_q
                for k in range(n):
                    ip = k * n + p
                    iq = k * n + q
                    xr = ar[ip]; xi = ai[ip]
                    yr = ar[iq] * er + ai[iq] * ei
                    yi = ai[iq] * er - ar[iq] * ei
                    ar[ip] = c * xr - s * yr
                    ai[ip] = c * xi - s * yi
                    ar[iq] = s * xr + c * yr
                    ai[iq] = s * xi + c * yi
                    xr = vr[ip]; xi = vi[ip]
                    yr = vr[iq] * er + vi[iq] * ei
                    yi = vi[iq] * er - vr[iq] * ei
                    vr[ip] = c * xr - s * yr
                    vi[ip] = c * xi - s * yi
                    vr[iq] = s * xr + c * yr
                    vi[iq] = s * xi + c * yi
                # rows: conjugate of the column update
                for k in range(n):
                    ip = p * n + k
                    iq = q * n + k
                    xr = ar[ip]; xi = ai[ip]
                    yr = ar[iq] * er - ai[iq] * ei
                    yi = ai[iq] * er + ar[iq] * ei
                    ar[ip] = c * xr - s * yr
                    ai[ip] = c * xi - s * yi
                    ar[iq] = s * xr + c * yr
                    ai[iq] = s * xi + c * yi
                ar[p * n + q] = 0.0
                ai[p * n + q] = 0.0
                ar[q * n + p] = 0.0
                ai[q * n + p] = 0.0
                ai[p * n + p] = 0.0
                ai[q * n + q] = 0.0

    for i in range(n):
        w[i] = ar[i * n + i]
        perm[i] = i
    for i in range(1, n):
        j = i
        while j > 0 and w[j - 1] > w[j]:
            tmpw = w[j]; w[j] = w[j - 1]; w[j - 1] = tmpw
            tmpi = perm[j]; perm[j] = perm[j - 1]; perm[j - 1] = tmpi
            j -= 1
    for k in range(n):
        for j in range(n):
            vout[k * n + j].real = vr[k * n + perm[j]]
            vout[k * n + j].imag = vi[k * n + perm[j]]


def eigh_batch(hams):
    """Eigen-decompose a stack of small Hermitian matrices by cyclic Jacobi.

    Args:
        hams: array of shape ``(m, n, n)`` (or ``(n, n)``), complex.

    Returns:
        ``(w, v)`` with ascending eigenvalues ``w`` of shape ``(m, n)`` and
        eigenvectors stored column-wise in ``v`` of shape ``(m, n, n)``.
    """
    arr = np.asarray(hams, dtype=np.complex128)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError("expected a stack of square matrices")
    cdef int m = arr.shape[0]
    cdef int n = arr.shape[1]
    if n > MAXN:
        raise ValueError(f"matrix dimension {n} exceeds compiled limit {MAXN}")
    work = np.ascontiguousarray(arr, dtype=np.complex128)
    vecs = np.empty((m, n, n), dtype=np.complex128)
    vals = np.empty((m, n), dtype=np.float64)
    cdef const double complex[:, :, ::1] A = work
    cdef double complex[:, :, ::1] V = vecs
    cdef double[:, ::1] W = vals
    cdef int b
    if m == 0:
        return vals, vecs
    with nogil:
        for b in range(m):
            _jacobi(&A[b, 0, 0], &V[b, 0, 0], &W[b, 0], n)
    if single:
        return vals[0], vecs[0]
    return vals, vecs


def lorentzian_model(freqs, double baseline, centers, fwhms, amps):
    """Baseline minus a sum of Lorentzian dips evaluated on ``freqs``."""
    cdef double[::1] f = np.ascontiguousarray(freqs, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef double[::1] wd = np.ascontiguousarray(fwhms, dtype=np.float64)
    cdef double[::1] am = np.ascontiguousarray(amps, dtype=np.float64)
    cdef Py_ssize_t n = f.shape[0], k = c.shape[0], i, j
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc, u
    with nogil:
        for i in range(n):
            acc = baseline
            for j in range(k):
                u = 2.0 * (f[i] - c[j]) / wd[j]
                acc -= am[j] / (1.0 + u * u)
            o[i] = acc
    return out


def lorentzian_jacobian(freqs, centers, fwhms, amps):
    """Jacobian of :func:`lorentzian_model`.

    Column order is ``baseline`` then ``(center, fwhm, amplitude)`` per dip.
    """
    cdef double[::1] f = np.ascontiguousarray(freqs, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef double[::1] wd = np.ascontiguousarray(fwhms, dtype=np.float64)
    cdef double[::1] am = np.ascontiguousarray(amps, dtype=np.float64)
    cdef Py_ssize_t n = f.shape[0], k = c.shape[0], i, j
    out = np.empty((n, 1 + 3 * k), dtype=np.float64)
    cdef double[:, ::1] J = out
    cdef double u, L, L2
    with nogil:
        for i in range(n):
            J[i, 0] = 1.0
            for j in range(k):
                u = 2.0 * (f[i] - c[j]) / wd[j]
                L = 1.0 / (1.0 + u * u)
                L2 = L * L
                J[i, 1 + 3 * j] = -4.0 * am[j] * u * L2 / wd[j]
                J[i, 2 + 3 * j] = -2.0 * am[j] * u * u * L2 / wd[j]
                J[i, 3 + 3 * j] = -L
    return out
