# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate-descent sweeps.

Both kernels minimise

    0.5 * a * x' S x - c' x + sum_j pen[j] * |x[j]|

where ``S`` is a sample Gram matrix, either supplied dense (``cd_gram``) or
implicitly as ``X' X / n`` through the design (``cd_design``).  The iterate
and its auxiliary vector are updated in place so callers can resume a solve
in chunks.

Return value of both kernels: ``(sweeps, kkt, status)`` with status codes
0 converged, 1 sweep budget exhausted, 2 l1 cap exceeded, 3 unbounded
coordinate (zero curvature with ``|c_j| > pen_j``).
"""

from libc.math cimport fabs, sqrt

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef inline double _soft(double z, double t) noexcept nogil:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


cdef double _kkt_from_grad(const double[::1] c, const double[::1] pen,
                           const double[::1] x, const double[::1] grad,
                           Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t j
    cdef double viol, worst = 0.0, r
    for j in range(p):
        r = c[j] - grad[j]
        if x[j] == 0.0:
            viol = fabs(r) - pen[j]
            if viol < 0.0:
                viol = 0.0
        elif x[j] > 0.0:
            viol = fabs(r - pen[j])
        else:
            viol = fabs(r + pen[j])
        if viol > worst:
            worst = viol
    return worst


def cd_gram(const double[:, ::1] G, const double[::1] c, const double[::1] pen,
            double a, double[::1] x, double[::1] grad, double tol,
            Py_ssize_t max_sweeps, double cap):
    """Sweep with a dense Gram; ``grad`` must hold ``a * G @ x`` on entry."""
    cdef Py_ssize_t p = G.shape[0]
    cdef Py_ssize_t i, j, sweep = 0
    cdef double d, z, new, delta, kkt = 0.0, l1, ad
    cdef int status = 1
    with nogil:
        while sweep < max_sweeps:
            sweep += 1
            for j in range(p):
                d = a * G[j, j]
                if d <= 0.0:
                    if fabs(c[j]) > pen[j]:
                        status = 3
                        break
                    x[j] = 0.0
                    continue
                z = c[j] - grad[j] + d * x[j]
                new = _soft(z, pen[j]) / d
                delta = new - x[j]
                if delta != 0.0:
                    ad = a * delta
                    for i in range(p):
                        grad[i] += ad * G[j, i]
                    x[j] = new
            if status == 3:
                break
            kkt = _kkt_from_grad(c, pen, x, grad, p)
            if kkt <= tol:
                status = 0
                break
            l1 = 0.0
            for j in range(p):
                l1 += fabs(x[j])
            if l1 > cap:
                status = 2
                break
    return sweep, kkt, status


def cd_design(const double[::1, :] X, const double[::1] colsq,
              const double[::1] c, const double[::1] pen, double a,
              double[::1] x, double[::1] r, double tol,
              Py_ssize_t max_sweeps, double cap):
    """Sweep against the design; ``r`` must hold ``X @ x`` on entry.

    ``colsq[j]`` is ``||X[:, j]||^2 / n``.  The full KKT check costs a pass
    over the design, so it only runs after a sweep whose largest scaled
    coordinate move is below ``tol``.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t i, j, sweep = 0
    cdef double d, z, new, delta, kkt = 0.0, l1, g, move, viol, resid
    cdef double inv_n = 1.0 / n
    cdef int status = 1
    with nogil:
        while sweep < max_sweeps:
            sweep += 1
            move = 0.0
            for j in range(p):
                d = a * colsq[j]
                if d <= 0.0:
                    if fabs(c[j]) > pen[j]:
                        status = 3
                        break
                    x[j] = 0.0
                    continue
                g = 0.0
                for i in range(n):
                    g += X[i, j] * r[i]
                g = a * g * inv_n
                z = c[j] - g + d * x[j]
                new = _soft(z, pen[j]) / d
                delta = new - x[j]
                if delta != 0.0:
                    for i in range(n):
                        r[i] += delta * X[i, j]
                    x[j] = new
                    if fabs(delta) * d > move:
                        move = fabs(delta) * d
            if status == 3:
                break
            if move <= tol:
                kkt = 0.0
                for j in range(p):
                    g = 0.0
                    for i in range(n):
                        g += X[i, j] * r[i]
                    resid = c[j] - a * g * inv_n
                    if x[j] == 0.0:
                        viol = fabs(resid) - pen[j]
                        if viol < 0.0:
                            viol = 0.0
                    elif x[j] > 0.0:
                        viol = fabs(resid - pen[j])
                    else:
                        viol = fabs(resid + pen[j])
                    if viol > kkt:
                        kkt = viol
                if kkt <= tol:
                    status = 0
                    break
            else:
                kkt = move
            l1 = 0.0
            for j in range(p):
                l1 += fabs(x[j])
            if l1 > cap:
                status = 2
                break
    return sweep, kkt, status
