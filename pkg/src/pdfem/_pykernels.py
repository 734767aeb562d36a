"""Pure-numpy bond kernels (fallback backend).

All kernels act on a bond set in CSR layout: bonds ``ptr[p]:ptr[p+1]``
belong to evaluation point ``p``. The strain of bond ``b`` is

    S_b = (sum_k y_w[b,k] U[y_n[b,k]] - sum_k x_w[p,k] U[x_n[p,k]]) . e_b / len_b

and ``g(S) = f'(len S^2) S`` with ``f(r) = c (1 - exp(-beta r))``, or
``g(S) = c beta S`` for the linearized model.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 1 << 18


def _point_slices(ptr, start, end):
    # yield (p0, p1, b0, b1) blocks of consecutive points with bounded bond count
    p = start
    while p < end:
        b0 = ptr[p]
        p1 = int(np.searchsorted(ptr, b0 + _CHUNK, side="right")) - 1
        p1 = min(max(p1, p + 1), end)
        yield p, p1, b0, ptr[p1]
        p = p1


def _strains(U, ptr, x_nodes, x_wts, y_nodes, y_wts, e, length, p0, p1, b0, b1):
    owner = np.repeat(np.arange(p0, p1), np.diff(ptr[p0:p1 + 1]))
    ux = np.einsum("pk,pkc->pc", x_wts[p0:p1], U[x_nodes[p0:p1]])
    uy = np.einsum("bk,bkc->bc", y_wts[b0:b1], U[y_nodes[b0:b1]])
    du = uy - ux[owner - p0]
    S = np.einsum("bc,bc->b", du, e[b0:b1]) / length[b0:b1]
    return S, owner


def _g(S, ell, c, beta, linear):
    if linear:
        return c * beta * S
    return c * beta * np.exp(-beta * ell * S * S) * S


def point_force(U, ptr, x_nodes, x_wts, y_nodes, y_wts, e, length, coef,
                c, beta, linear, out, start, end):
    d = U.shape[1]
    for p0, p1, b0, b1 in _point_slices(ptr, start, end):
        S, owner = _strains(U, ptr, x_nodes, x_wts, y_nodes, y_wts, e, length, p0, p1, b0, b1)
        w = coef[b0:b1] * _g(S, length[b0:b1], c, beta, linear)
        for comp in range(d):
            out[p0:p1, comp] = np.bincount(owner - p0, weights=w * e[b0:b1, comp],
                                           minlength=p1 - p0)


def energy_grad(U, ptr, x_nodes, x_wts, y_nodes, y_wts, e, length, coef, pw,
                c, beta, linear, grad, start, end, want_grad=True):
    d = U.shape[1]
    n = U.shape[0]
    energy = 0.0
    for p0, p1, b0, b1 in _point_slices(ptr, start, end):
        S, owner = _strains(U, ptr, x_nodes, x_wts, y_nodes, y_wts, e, length, p0, p1, b0, b1)
        ell = length[b0:b1]
        q = 0.25 * coef[b0:b1] * pw[owner]
        if linear:
            energy += float(np.sum(q * c * beta * ell * S * S))
        else:
            energy += float(np.sum(-q * c * np.expm1(-beta * ell * S * S)))
        if not want_grad:
            continue
        gb = 2.0 * q * _g(S, ell, c, beta, linear)  # (coef/2) pw g
        yw = y_wts[b0:b1]
        yn = y_nodes[b0:b1]
        xw = x_wts[owner]
        xn = x_nodes[owner]
        for comp in range(d):
            ge = gb * e[b0:b1, comp]
            grad[:, comp] += np.bincount(yn.ravel(), weights=(yw * ge[:, None]).ravel(), minlength=n)
            grad[:, comp] -= np.bincount(xn.ravel(), weights=(xw * ge[:, None]).ravel(), minlength=n)
    return energy


def bilinear(U, V, ptr, x_nodes, x_wts, y_nodes, y_wts, e, length, coef, pw,
             c, beta, linear, start, end):
    total = 0.0
    for p0, p1, b0, b1 in _point_slices(ptr, start, end):
        Su, owner = _strains(U, ptr, x_nodes, x_wts, y_nodes, y_wts, e, length, p0, p1, b0, b1)
        Sv, _ = _strains(V, ptr, x_nodes, x_wts, y_nodes, y_wts, e, length, p0, p1, b0, b1)
        ell = length[b0:b1]
        q = 0.5 * coef[b0:b1] * pw[owner]
        total += float(np.sum(q * _g(Su, ell, c, beta, linear) * ell * Sv))
    return total
