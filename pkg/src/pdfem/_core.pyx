# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bond kernels; same contracts as pdfem._pykernels."""

from libc.math cimport exp, expm1

ctypedef long long idx_t


cdef inline double _strain(const double[:, ::1] U, const idx_t[:, ::1] x_nodes,
                           const double[:, ::1] x_wts, const idx_t[:, ::1] y_nodes,
                           const double[:, ::1] y_wts, const double[:, ::1] e,
                           const double[::1] length, Py_ssize_t p, Py_ssize_t b,
                           Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t k, comp
    cdef double s = 0.0, du
    for comp in range(d):
        du = 0.0
        for k in range(d + 1):
            du += y_wts[b, k] * U[y_nodes[b, k], comp] - x_wts[p, k] * U[x_nodes[p, k], comp]
        s += du * e[b, comp]
    return s / length[b]


cdef inline double _g(double S, double ell, double c, double beta, bint linear) noexcept nogil:
    if linear:
        return c * beta * S
    return c * beta * exp(-beta * ell * S * S) * S


def point_force(const double[:, ::1] U, const idx_t[::1] ptr,
                const idx_t[:, ::1] x_nodes, const double[:, ::1] x_wts,
                const idx_t[:, ::1] y_nodes, const double[:, ::1] y_wts,
                const double[:, ::1] e, const double[::1] length, const double[::1] coef,
                double c, double beta, bint linear, double[:, ::1] out,
                Py_ssize_t start, Py_ssize_t end):
    cdef Py_ssize_t d = U.shape[1]
    cdef Py_ssize_t p, b, comp
    cdef double S, w
    with nogil:
        for p in range(start, end):
            for comp in range(d):
                out[p, comp] = 0.0
            for b in range(ptr[p], ptr[p + 1]):
                S = _strain(U, x_nodes, x_wts, y_nodes, y_wts, e, length, p, b, d)
                w = coef[b] * _g(S, length[b], c, beta, linear)
                for comp in range(d):
                    out[p, comp] += w * e[b, comp]


def energy_grad(const double[:, ::1] U, const idx_t[::1] ptr,
                const idx_t[:, ::1] x_nodes, const double[:, ::1] x_wts,
                const idx_t[:, ::1] y_nodes, const double[:, ::1] y_wts,
                const double[:, ::1] e, const double[::1] length, const double[::1] coef,
                const double[::1] pw, double c, double beta, bint linear,
                double[:, ::1] grad, Py_ssize_t start, Py_ssize_t end, bint want_grad=True):
    cdef Py_ssize_t d = U.shape[1]
    cdef Py_ssize_t p, b, k, comp
    cdef double S, q, ell, gb, ge, energy = 0.0
    with nogil:
        for p in range(start, end):
            for b in range(ptr[p], ptr[p + 1]):
                S = _strain(U, x_nodes, x_wts, y_nodes, y_wts, e, length, p, b, d)
                ell = length[b]
                q = 0.25 * coef[b] * pw[p]
                if linear:
                    energy += q * c * beta * ell * S * S
                else:
                    energy += -q * c * expm1(-beta * ell * S * S)
                if not want_grad:
                    continue
                gb = 2.0 * q * _g(S, ell, c, beta, linear)
                for comp in range(d):
                    ge = gb * e[b, comp]
                    for k in range(d + 1):
                        grad[y_nodes[b, k], comp] += y_wts[b, k] * ge
                        grad[x_nodes[p, k], comp] -= x_wts[p, k] * ge
    return energy


def bilinear(const double[:, ::1] U, const double[:, ::1] V, const idx_t[::1] ptr,
             const idx_t[:, ::1] x_nodes, const double[:, ::1] x_wts,
             const idx_t[:, ::1] y_nodes, const double[:, ::1] y_wts,
             const double[:, ::1] e, const double[::1] length, const double[::1] coef,
             const double[::1] pw, double c, double beta, bint linear,
             Py_ssize_t start, Py_ssize_t end):
    cdef Py_ssize_t d = U.shape[1]
    cdef Py_ssize_t p, b
    cdef double Su, Sv, total = 0.0
    with nogil:
        for p in range(start, end):
            for b in range(ptr[p], ptr[p + 1]):
                Su = _strain(U, x_nodes, x_wts, y_nodes, y_wts, e, length, p, b, d)
                Sv = _strain(V, x_nodes, x_wts, y_nodes, y_wts, e, length, p, b, d)
                total += 0.5 * coef[b] * pw[p] * _g(Su, length[b], c, beta, linear) * length[b] * Sv
    return total
