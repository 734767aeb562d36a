"""Precomputed bond sets: every (evaluation point, horizon offset) pair that
carries a nonzero weight, with the P1 interpolation data needed to form
the bond strain from nodal values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import HorizonTable, Mesh, taper_omega
from .potential import unit_ball_volume

_POINT_CHUNK = 2048


@dataclass
class BondSet:
    n_points: int
    n_nodes: int
    d: int
    epsilon: float
    points: np.ndarray
    ptr: np.ndarray  # (P+1,)
    x_nodes: np.ndarray  # (P, d+1)
    x_wts: np.ndarray
    y_nodes: np.ndarray  # (B, d+1)
    y_wts: np.ndarray
    e: np.ndarray  # (B, d) unit bond directions
    length: np.ndarray  # (B,) bond lengths epsilon |xi|
    coef: np.ndarray  # (B,) 4/(eps^{d+1} omega_d) * w eps^d * omega(x) omega(y) J
    point_weights: np.ndarray  # (P,) integration weights over D

    @property
    def n_bonds(self) -> int:
        return len(self.coef)

    def kernel_args(self):
        return (self.ptr, self.x_nodes, self.x_wts, self.y_nodes, self.y_wts,
                self.e, self.length, self.coef)

    def strain_matrix(self):
        """Sparse (B, N*d) operator mapping flattened nodal values to bond strains."""
        from scipy import sparse
        d = self.d
        owner = np.repeat(np.arange(self.n_points), np.diff(self.ptr))
        rows, cols, vals = [], [], []
        B = self.n_bonds
        for comp in range(d):
            scale = self.e[:, comp] / self.length
            for k in range(d + 1):
                rows.append(np.arange(B))
                cols.append(self.y_nodes[:, k] * d + comp)
                vals.append(self.y_wts[:, k] * scale)
                rows.append(np.arange(B))
                cols.append(self.x_nodes[owner, k] * d + comp)
                vals.append(-self.x_wts[owner, k] * scale)
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(B, self.n_nodes * d))


def build_bonds(mesh: Mesh, table: HorizonTable, points: np.ndarray,
                point_weights: Optional[np.ndarray] = None,
                x_interp: Optional[tuple] = None) -> BondSet:
    """Collect bonds for ``points``; bonds with omega(x) omega(y) J = 0 are dropped.

    ``x_interp`` optionally supplies (node indices, weights) for the points
    themselves, e.g. the identity for mesh nodes.
    """
    if mesh.box is None:
        raise ValueError("bond construction needs the mesh's bounding box")
    d = mesh.d
    eps = table.epsilon
    points = np.asarray(points, float).reshape(-1, d)
    P = len(points)
    if x_interp is None:
        x_nodes, x_wts = mesh.interpolation_data(points)
    else:
        x_nodes, x_wts = (np.asarray(a) for a in x_interp)
    if point_weights is None:
        point_weights = np.ones(P)

    xi = table.offsets
    r = np.linalg.norm(xi, axis=1)
    base = (4.0 / (eps * unit_ball_volume(d))) * table.weights * table.j_values
    live = base > 0
    xi, r, base = xi[live], r[live], base[live]
    e_q = xi / r[:, None]
    om_x = taper_omega(points, eps, mesh.box)

    counts = np.zeros(P, np.int64)
    parts = []
    for p0 in range(0, P, _POINT_CHUNK):
        p1 = min(P, p0 + _POINT_CHUNK)
        Y = points[p0:p1, None, :] + eps * xi[None, :, :]
        om_y = taper_omega(Y.reshape(-1, d), eps, mesh.box).reshape(p1 - p0, -1)
        w = om_x[p0:p1, None] * om_y * base[None, :]
        pi, qi = np.nonzero(w > 0)
        counts[p0:p1] = np.bincount(pi, minlength=p1 - p0)
        yn, yw = mesh.interpolation_data(Y[pi, qi])
        parts.append((yn, yw, e_q[qi], eps * r[qi], w[pi, qi]))

    ptr = np.zeros(P + 1, np.int64)
    np.cumsum(counts, out=ptr[1:])
    cat = lambda i, shape: (np.concatenate([p[i] for p in parts]) if parts else np.zeros(shape))  # noqa: E731
    return BondSet(
        n_points=P, n_nodes=mesh.n_nodes, d=d, epsilon=eps, points=points, ptr=ptr,
        x_nodes=np.ascontiguousarray(x_nodes, np.int64), x_wts=np.ascontiguousarray(x_wts, float),
        y_nodes=np.ascontiguousarray(cat(0, (0, d + 1)), np.int64),
        y_wts=np.ascontiguousarray(cat(1, (0, d + 1)), float),
        e=np.ascontiguousarray(cat(2, (0, d)), float),
        length=np.ascontiguousarray(cat(3, (0,)), float),
        coef=np.ascontiguousarray(cat(4, (0,)), float),
        point_weights=np.ascontiguousarray(point_weights, float),
    )


def node_bonds(mesh: Mesh, table: HorizonTable, point_weights=None) -> BondSet:
    N = mesh.n_nodes
    xn = np.zeros((N, mesh.d + 1), np.int64)
    xn[:, 0] = np.arange(N)
    xw = np.zeros((N, mesh.d + 1))
    xw[:, 0] = 1.0
    return build_bonds(mesh, table, mesh.nodes, point_weights, x_interp=(xn, xw))
