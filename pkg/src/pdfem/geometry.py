"""Structured simplex meshes on boxes, P1 interpolation, boundary taper and
horizon quadrature tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .potential import influence, unit_ball_volume


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or len(self.lower) not in (1, 2):
            raise MeshError("box must be 1D or 2D")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise MeshError("degenerate box")

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.upper, float) - np.asarray(self.lower, float)

    @classmethod
    def unit(cls, d: int) -> "Box":
        return cls((0.0,) * d, (1.0,) * d)

    def distance_to_boundary(self, x) -> np.ndarray:
        """Signed distance to the box boundary (negative outside)."""
        x = np.atleast_2d(np.asarray(x, float))
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.min(np.minimum(x - lo, hi - x), axis=1)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        lo = np.asarray(self.lower) - tol
        hi = np.asarray(self.upper) + tol
        return np.all((x >= lo) & (x <= hi), axis=1)


@dataclass
class Mesh:
    """Conforming simplex mesh (segments in 1D, triangles in 2D).

    ``h`` is the grid spacing of the structured construction; ``diameter``
    is the largest element diameter.
    """

    d: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_node: np.ndarray
    h: float
    box: Optional[Box] = None
    shape: Optional[tuple] = None  # cells per axis for structured meshes
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elems(self) -> int:
        return len(self.elements)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_node)

    @property
    def volumes(self) -> np.ndarray:
        if "vol" not in self._cache:
            self._cache["vol"] = element_volumes(self)
        return self._cache["vol"]

    @property
    def diameter(self) -> float:
        p = self.nodes[self.elements]
        diam = 0.0
        for a in range(self.d + 1):
            for b in range(a + 1, self.d + 1):
                diam = max(diam, float(np.max(np.linalg.norm(p[:, a] - p[:, b], axis=1))))
        return diam

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Containing element and barycentric weights for each point.

        Points outside the closed domain get element -1 and zero weights.
        """
        x = np.atleast_2d(np.asarray(x, float))
        if self.shape is not None and self.box is not None:
            return _locate_structured(self, x)
        return _locate_walk(self, x)

    def interpolation_data(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Node indices (P, d+1) and weights (P, d+1) of the P1 interpolant at x."""
        elem, bary = self.locate(x)
        nodes = np.where(elem[:, None] >= 0, self.elements[np.maximum(elem, 0)], 0)
        return nodes.astype(np.int64), bary


def element_volumes(mesh: Mesh) -> np.ndarray:
    p = mesh.nodes[mesh.elements]
    if mesh.d == 1:
        vol = p[:, 1, 0] - p[:, 0, 0]
    else:
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        vol = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return vol


def build_uniform_mesh(box: Box, h: float) -> Mesh:
    """Uniform segments (1D) or a structured grid split into triangles (2D).

    The realized spacing is the largest value <= h that divides each extent.
    """
    if not h > 0:
        raise MeshError("h must be positive")
    ext = box.extent
    if np.any(h > ext * (1 + 1e-12)):
        raise MeshError(f"h={h} larger than box extent {ext}")
    n = [max(1, int(math.ceil(L / h - 1e-9))) for L in ext]
    lo = np.asarray(box.lower, float)
    spacing = ext / np.asarray(n)
    if box.d == 1:
        nodes = (lo[0] + spacing[0] * np.arange(n[0] + 1))[:, None]
        nodes[-1, 0] = box.upper[0]
        elements = np.column_stack([np.arange(n[0]), np.arange(1, n[0] + 1)])
        boundary = np.zeros(n[0] + 1, bool)
        boundary[[0, -1]] = True
    else:
        nx, ny = n
        xs = lo[0] + spacing[0] * np.arange(nx + 1)
        ys = lo[1] + spacing[1] * np.arange(ny + 1)
        xs[-1], ys[-1] = box.upper
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        idx = lambda i, j: j * (nx + 1) + i  # noqa: E731
        I, Jc = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        I, Jc = I.ravel(), Jc.ravel()
        n00, n10 = idx(I, Jc), idx(I + 1, Jc)
        n01, n11 = idx(I, Jc + 1), idx(I + 1, Jc + 1)
        # cell c -> triangles 2c (below the diagonal) and 2c+1 (above)
        lower_tri = np.column_stack([n00, n10, n11])
        upper_tri = np.column_stack([n00, n11, n01])
        elements = np.empty((2 * nx * ny, 3), np.int64)
        elements[0::2] = lower_tri
        elements[1::2] = upper_tri
        ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
        boundary = ((ii == 0) | (ii == nx) | (jj == 0) | (jj == ny)).ravel()
    return Mesh(d=box.d, nodes=nodes, elements=elements.astype(np.int64),
                boundary_node=boundary, h=float(np.max(spacing)), box=box, shape=tuple(n))


def _locate_structured(mesh: Mesh, x: np.ndarray):
    box = mesh.box
    lo = np.asarray(box.lower)
    ext = box.extent
    n = np.asarray(mesh.shape)
    P = len(x)
    inside = box.contains(x, tol=1e-13 * float(np.max(ext)))
    t = (x - lo) / ext * n  # cell coordinates
    cell = np.clip(np.floor(t).astype(np.int64), 0, n - 1)
    s = np.clip(t - cell, 0.0, 1.0)
    elem = np.full(P, -1, np.int64)
    bary = np.zeros((P, mesh.d + 1))
    if mesh.d == 1:
        elem = np.where(inside, cell[:, 0], -1)
        bary[:, 0] = 1.0 - s[:, 0]
        bary[:, 1] = s[:, 0]
    else:
        c = cell[:, 1] * n[0] + cell[:, 0]
        sx, sy = s[:, 0], s[:, 1]
        below = sx >= sy
        elem = np.where(below, 2 * c, 2 * c + 1)
        # lower (n00, n10, n11): weights (1-sx, sx-sy, sy); upper (n00, n11, n01): (1-sy, sx, sy-sx)
        bary[:, 0] = np.where(below, 1.0 - sx, 1.0 - sy)
        bary[:, 1] = np.where(below, sx - sy, sx)
        bary[:, 2] = np.where(below, sy, sy - sx)
        elem = np.where(inside, elem, -1)
    bary[elem < 0] = 0.0
    return elem, bary


def _barycentric(mesh: Mesh, e: int, x: np.ndarray) -> np.ndarray:
    p = mesh.nodes[mesh.elements[e]]
    T = (p[1:] - p[0]).T
    lam = np.linalg.solve(T, x - p[0])
    return np.concatenate(([1.0 - lam.sum()], lam))


def _locate_walk(mesh: Mesh, x: np.ndarray):
    """Brute-force location for meshes without structure (small meshes only)."""
    P = len(x)
    elem = np.full(P, -1, np.int64)
    bary = np.zeros((P, mesh.d + 1))
    for i in range(P):
        for e in range(mesh.n_elems):
            b = _barycentric(mesh, e, x[i])
            if np.all(b >= -1e-12):
                elem[i] = e
                bary[i] = np.clip(b, 0.0, None) / np.clip(b, 0.0, None).sum()
                break
    return elem, bary


@dataclass
class FeField:
    """Piecewise-linear vector field given by nodal values of shape (N, d)."""

    mesh: Mesh
    nodal_values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.nodal_values, float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.mesh.n_nodes:
            raise ValueError("nodal values do not match the mesh")
        self.nodal_values = v

    def __call__(self, x) -> np.ndarray:
        return interpolate(self, x)


def interpolate(field: FeField, x) -> np.ndarray:
    """Evaluate the P1 interpolant; zero outside the domain."""
    x = np.asarray(x, float)
    d = field.mesh.d
    single = x.ndim == 0 or (x.ndim == 1 and (d > 1 or x.shape == (1,)))
    pts = x.reshape(-1, d)
    nodes, w = field.mesh.interpolation_data(pts)
    val = np.einsum("pk,pkc->pc", w, field.nodal_values[nodes])
    return val[0] if single else val


def nodal_interpolant(mesh: Mesh, fun, zero_boundary: bool = True) -> np.ndarray:
    """Nodal values of I_h(fun); ``fun`` maps (P, d) points to (P, d) values."""
    vals = np.asarray(fun(mesh.nodes), float).reshape(mesh.n_nodes, -1)
    if zero_boundary:
        vals[mesh.boundary_node] = 0.0
    return vals


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def taper_omega(x, epsilon: float, domain: Box) -> np.ndarray:
    """1 at distance >= epsilon from the boundary, 0 on and outside it."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    dist = domain.distance_to_boundary(x)
    return smoothstep(np.minimum(1.0, np.maximum(dist, 0.0) / epsilon))


@dataclass(frozen=True)
class HorizonTable:
    epsilon: float
    offsets: np.ndarray  # (Q, d), inside the unit ball
    weights: np.ndarray  # (Q,), sum -> omega_d
    j_values: np.ndarray
    m: int
    d: int
    j_kind: str

    @property
    def size(self) -> int:
        return len(self.weights)


def build_horizon_quadrature(epsilon: float, m: int, j_kind: str, d: int,
                             subsamples: int = 4) -> HorizonTable:
    """Partial-volume Cartesian lattice over the unit ball.

    Cells of side 1/m tile [-1, 1]^d. Cells fully inside the ball keep
    their full volume and centre; cut cells are sampled on a
    ``subsamples**d`` grid, weighted by the inside fraction and placed at
    the centroid of the inside samples.
    """
    if m < 2:
        raise ValueError("lattice refinement m must be >= 2")
    if d not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    a = 1.0 / m
    centres_1d = (np.arange(-m, m) + 0.5) * a
    grids = np.meshgrid(*([centres_1d] * d), indexing="ij")
    centres = np.column_stack([g.ravel() for g in grids])
    # nearest / farthest point of each cell from the origin
    near = np.linalg.norm(np.maximum(np.abs(centres) - 0.5 * a, 0.0), axis=1)
    far = np.linalg.norm(np.abs(centres) + 0.5 * a, axis=1)
    full = far <= 1.0 + 1e-14
    cut = (~full) & (near < 1.0)

    sub_1d = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    sgrids = np.meshgrid(*([sub_1d] * d), indexing="ij")
    sub = np.column_stack([g.ravel() for g in sgrids]) * a  # (S, d)

    cut_centres = centres[cut]
    pts = cut_centres[:, None, :] + sub[None, :, :]
    inside = np.linalg.norm(pts, axis=2) < 1.0
    count = inside.sum(axis=1)
    keep = count > 0
    frac = count[keep] / sub.shape[0]
    centroid = (pts[keep] * inside[keep][:, :, None]).sum(axis=1) / count[keep][:, None]

    offsets = np.vstack([centres[full], centroid])
    weights = np.concatenate([np.full(int(full.sum()), a ** d), frac * a ** d])
    order = np.lexsort(offsets.T[::-1])
    offsets, weights = offsets[order], weights[order]
    j_values = influence(j_kind)(np.linalg.norm(offsets, axis=1))
    return HorizonTable(epsilon=float(epsilon), offsets=offsets, weights=weights,
                        j_values=j_values, m=int(m), d=d, j_kind=j_kind)


def default_lattice(epsilon: float, h: float) -> int:
    """Lattice refinement with cell size epsilon/m close to h/2."""
    return max(2, int(math.ceil(2.0 * epsilon / h - 1e-9)))


def strain(field: FeField, x, xi, epsilon: float) -> float:
    """S = (u(y) - u(x)) . e / |y - x| with y = x + epsilon * xi."""
    x = np.asarray(x, float).reshape(-1)
    xi = np.asarray(xi, float).reshape(-1)
    r = float(np.linalg.norm(xi))
    if r == 0.0:
        raise ValueError("bond offset must be nonzero")
    e = xi / r
    y = x + epsilon * xi
    uy = interpolate(field, y[None, :])[0]
    ux = interpolate(field, x[None, :])[0]
    return float(np.dot(uy - ux, e) / (epsilon * r))


# --- element quadrature ---------------------------------------------------

def gauss_rule(d: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference-simplex rule: barycentric points (G, d+1) and weights summing to 1."""
    if d == 1:
        n = max(1, int(math.ceil((order + 1) / 2)))
        s, w = np.polynomial.legendre.leggauss(n)
        t = 0.5 * (s + 1.0)
        return np.column_stack([1.0 - t, t]), 0.5 * w
    if order <= 1:
        return np.full((1, 3), 1.0 / 3.0), np.array([1.0])
    if order == 2:
        a, b = 2.0 / 3.0, 1.0 / 6.0
        pts = np.array([[a, b, b], [b, a, b], [b, b, a]])
        return pts, np.full(3, 1.0 / 3.0)
    # collapsed (Duffy) tensor rule for higher orders
    n = int(math.ceil((order + 2) / 2))
    s, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (s + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(t, t, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    l1 = U.ravel()
    l2 = (V * (1.0 - U)).ravel()
    wt = (WU * WV * (1.0 - U)).ravel() * 2.0
    return np.column_stack([1.0 - l1 - l2, l1, l2]), wt


def quadrature_points(mesh: Mesh, order: int):
    """Physical points (P, d), weights (P,), element ids and barycentric coords."""
    bary, w = gauss_rule(mesh.d, order)
    p = mesh.nodes[mesh.elements]  # (E, d+1, d)
    pts = np.einsum("gk,ekc->egc", bary, p).reshape(-1, mesh.d)
    wts = (mesh.volumes[:, None] * w[None, :]).ravel()
    elem = np.repeat(np.arange(mesh.n_elems), len(w))
    bc = np.tile(bary, (mesh.n_elems, 1))
    return pts, wts, elem, bc


# --- mesh text format -----------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"pdm {mesh.d} {mesh.n_nodes} {mesh.n_elems}"]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.nodes]
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.elements]
    lines.append(" ".join(str(int(i)) for i in np.flatnonzero(mesh.boundary_node)))
    from .io import atomic_write_text
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        rows = [ln.split() for ln in fh.read().splitlines()]
    head = rows[0]
    if len(head) != 4 or head[0] != "pdm":
        raise MeshError("not a pdm mesh file")
    d, nn, ne = int(head[1]), int(head[2]), int(head[3])
    nodes = np.array([[float(v) for v in r] for r in rows[1:1 + nn]], float).reshape(nn, d)
    elements = np.array([[int(v) for v in r] for r in rows[1 + nn:1 + nn + ne]], np.int64)
    bnd_row = rows[1 + nn + ne] if len(rows) > 1 + nn + ne else []
    boundary = np.zeros(nn, bool)
    boundary[[int(v) for v in bnd_row]] = True
    mesh = Mesh(d=d, nodes=nodes, elements=elements, boundary_node=boundary, h=0.0)
    if np.any(mesh.volumes <= 0):
        raise MeshError("degenerate or inverted element")
    mesh.h = mesh.diameter
    return mesh
