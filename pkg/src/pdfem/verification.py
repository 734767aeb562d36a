"""Manufactured-solution harness: exact forcing, error norms, truncation
terms, convergence sweeps with log-log rate fits, and the a-priori error
estimate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .assembly import Discretization, l2_project, pd_force_at_point
from .dynamics import InstabilityError, RunConfig, run
from .geometry import (Box, FeField, HorizonTable, Mesh, build_horizon_quadrature, build_uniform_mesh,
                       default_lattice, quadrature_points, taper_omega)
from .potential import PotentialSpec, unit_ball_volume

_BOND_BUDGET = 1 << 21  # bonds per evaluation chunk


class SweepError(RuntimeError):
    pass


# --- manufactured cases ----------------------------------------------------

@dataclass
class ManufacturedCase:
    """Separable exact solution u(t, x) = theta(t) * profile(x).

    ``profile`` maps (P, d) points to (P, d) values and must vanish on the
    boundary of ``box``.
    """

    name: str
    box: Box
    epsilon: float
    spec: PotentialSpec
    profile: Callable[[np.ndarray], np.ndarray]
    theta: Callable[[float], float]
    dtheta: Callable[[float], float]
    ddtheta: Callable[[float], float]
    theta_bound: float = 1.0  # sup_t |theta(t)| over the runs of interest
    ddtheta_bound: float = 1.0

    @property
    def d(self) -> int:
        return self.box.d

    def u(self, t, X):
        return self.theta(t) * self.profile(np.asarray(X, float).reshape(-1, self.d))

    def v(self, t, X):
        return self.dtheta(t) * self.profile(np.asarray(X, float).reshape(-1, self.d))

    def a(self, t, X):
        return self.ddtheta(t) * self.profile(np.asarray(X, float).reshape(-1, self.d))

    def u0(self, X):
        return self.u(0.0, X)

    def v0(self, X):
        return self.v(0.0, X)


def sine_case(d: int, epsilon: float, spec: PotentialSpec, amplitude: float = 0.1,
              omega: float = 1.0) -> ManufacturedCase:
    """sin(pi x) cos(omega t) in 1D; sin(pi x1) sin(pi x2) cos(omega t) (1, 1)/sqrt(2) in 2D."""
    box = Box.unit(d)
    if d == 1:
        def profile(X):
            return amplitude * np.sin(np.pi * X[:, :1])
    elif d == 2:
        direction = np.array([1.0, 1.0]) / math.sqrt(2.0)

        def profile(X):
            return amplitude * (np.sin(np.pi * X[:, 0]) * np.sin(np.pi * X[:, 1]))[:, None] * direction
    else:
        raise ValueError("sine case defined for d = 1, 2")
    return ManufacturedCase(
        name=f"sine{d}d", box=box, epsilon=epsilon, spec=spec, profile=profile,
        theta=lambda t: math.cos(omega * t), dtheta=lambda t: -omega * math.sin(omega * t),
        ddtheta=lambda t: -omega * omega * math.cos(omega * t),
        theta_bound=1.0, ddtheta_bound=omega * omega,
    )


def _bond_chunks(n_points: int, n_table: int):
    step = max(1, _BOND_BUDGET // max(n_table, 1))
    for p0 in range(0, n_points, step):
        yield p0, min(n_points, p0 + step)


def _table_base(table: HorizonTable):
    xi = table.offsets
    r = np.linalg.norm(xi, axis=1)
    base = (4.0 / (table.epsilon * unit_ball_volume(table.d))) * table.weights * table.j_values
    live = base > 0
    return xi[live], r[live], base[live]


def _exact_bonds(fun, X, table: HorizonTable, box: Box):
    """Yield (p0, p1, S, ell, coef, e) for the exact field ``fun`` on chunks of X."""
    eps, d = table.epsilon, table.d
    xi, r, base = _table_base(table)
    e = xi / r[:, None]
    ell = eps * r
    om_x = taper_omega(X, eps, box)
    for p0, p1 in _bond_chunks(len(X), len(xi)):
        n = p1 - p0
        Y = (X[p0:p1, None, :] + eps * xi[None]).reshape(-1, d)
        om_y = taper_omega(Y, eps, box).reshape(n, -1)
        coef = om_x[p0:p1, None] * om_y * base[None]
        inside = om_y > 0
        uy = np.zeros((n * len(xi), d))
        flat = inside.ravel()
        uy[flat] = np.asarray(fun(Y[flat]), float).reshape(-1, d)
        ux = np.asarray(fun(X[p0:p1]), float).reshape(n, d)
        du = uy.reshape(n, -1, d) - ux[:, None, :]
        S = np.einsum("pqc,qc->pq", du, e) / ell[None]
        yield p0, p1, S, ell, coef, e


def exact_force(fun, X, table: HorizonTable, box: Box, spec: PotentialSpec,
                linear: bool = False) -> np.ndarray:
    """Peridynamic force density of a closed-form field at points X, by table quadrature."""
    X = np.asarray(X, float).reshape(-1, table.d)
    out = np.zeros((len(X), table.d))
    cb = spec.c * spec.beta
    for p0, p1, S, ell, coef, e in _exact_bonds(fun, X, table, box):
        g = cb * S if linear else cb * np.exp(-spec.beta * ell[None] * S * S) * S
        out[p0:p1] = (coef * g) @ e
    return out


def oracle_table(case: ManufacturedCase, m: int) -> HorizonTable:
    return build_horizon_quadrature(case.epsilon, m, case.spec.j_kind, case.d)


def manufactured_rhs(case: ManufacturedCase, t: float, x, m: int, linear: bool = False) -> np.ndarray:
    """b = u_tt - P(u) at points x, with P evaluated on a lattice of resolution m."""
    X = np.asarray(x, float).reshape(-1, case.d)
    table = oracle_table(case, m)
    force = exact_force(lambda Y: case.u(t, Y), X, table, case.box, case.spec, linear)
    return case.a(t, X) - force


class MmsForcing:
    """Body force for a separable manufactured case, precomputed per point set.

    With u = theta(t) g(x) the nonlinear force expands as
    P(theta g) = c beta sum_n (-beta)^n / n! theta^(2n+1) K_n,
    K_n(x) = sum_b coef ell^n S_b^(2n+1) e_b, so each evaluation is a short
    polynomial in theta. Falls back to direct quadrature when the series
    would need too many terms.
    """

    def __init__(self, case: ManufacturedCase, m: int, linear: bool = False, max_terms: int = 60):
        self.case = case
        self.m = m
        self.linear = linear
        self.max_terms = max_terms
        self.table = oracle_table(case, m)

    def __call__(self, t, X):
        return manufactured_rhs(self.case, t, X, self.m, self.linear)

    def moments(self, X) -> np.ndarray:
        case = self.case
        beta = case.spec.beta
        X = np.asarray(X, float).reshape(-1, case.d)
        chunks = list(_exact_bonds(case.profile, X, self.table, case.box))
        x_max = 0.0
        for _, _, S, ell, coef, _ in chunks:
            if S.size:
                x_max = max(x_max, float(np.max(beta * ell[None] * S * S)) * case.theta_bound ** 2)
        n_terms = 1
        if not self.linear:
            term = 1.0
            while n_terms < self.max_terms:
                term *= x_max / n_terms
                if term < 1e-17:
                    break
                n_terms += 1
            else:
                return None
        K = np.zeros((n_terms, len(X), case.d))
        for p0, p1, S, ell, coef, e in chunks:
            w = coef * S
            S2l = (S * S) * ell[None]
            for n in range(n_terms):
                K[n, p0:p1] = w @ e
                w = w * S2l
        return K

    def bind(self, X):
        case = self.case
        X = np.asarray(X, float).reshape(-1, case.d)
        K = self.moments(X)
        if K is None:
            return lambda t: manufactured_rhs(case, t, X, self.m, self.linear)
        g = case.profile(X)
        cb, beta = case.spec.c * case.spec.beta, case.spec.beta
        coeffs = np.array([cb * (-beta) ** n / math.factorial(n) for n in range(len(K))])

        def at(t):
            th = case.theta(t)
            powers = coeffs * th ** (2 * np.arange(len(K)) + 1)
            return case.ddtheta(t) * g - np.tensordot(powers, K, axes=1)
        return at


# --- error measures --------------------------------------------------------

def _l2(mesh: Mesh, values_fn, order: int = 4) -> float:
    pts, wts, elem, bc = quadrature_points(mesh, order)
    vals = values_fn(pts, elem, bc)
    return float(np.sqrt(np.sum(wts[:, None] * vals * vals)))


def _fe_at(mesh: Mesh, U, elem, bc):
    return np.einsum("pk,pkc->pc", bc, U[mesh.elements[elem]])


def l2_error(mesh: Mesh, U: np.ndarray, exact: Callable, order: int = 4) -> float:
    return _l2(mesh, lambda pts, elem, bc: _fe_at(mesh, U, elem, bc) - exact(pts), order)


def error_Ek(mesh: Mesh, U: np.ndarray, V: np.ndarray, case: ManufacturedCase, t: float,
             order: int = 4) -> float:
    """||u_h - u(t)|| + ||v_h - v(t)|| in L2 by element Gauss quadrature."""
    return (l2_error(mesh, U, lambda X: case.u(t, X), order)
            + l2_error(mesh, V, lambda X: case.v(t, X), order))


@dataclass
class TruncationErrors:
    tau_u: float
    tau_v: float
    sigma: Optional[float]


def profile_norm(case: ManufacturedCase, mesh: Mesh, order: int = 4) -> float:
    return _l2(mesh, lambda pts, elem, bc: case.profile(pts), order)


def sigma_per(case: ManufacturedCase, mesh: Mesh, t: float, table: HorizonTable,
              eval_mesh: Optional[Mesh] = None, linear: bool = False, order: int = 4) -> float:
    """|| P(r_h u(t)) - P(u(t)) ||, both forces on the same horizon table.

    The norm uses element Gauss points of ``eval_mesh`` (default ``mesh``).
    """
    proj = l2_project(lambda X: case.u(t, X), mesh, zero_boundary=True)
    eval_mesh = eval_mesh or mesh
    pts, wts, _, _ = quadrature_points(eval_mesh, order)
    discrete = pd_force_at_point(proj, pts, table, case.spec, linear)
    exact = exact_force(lambda Y: case.u(t, Y), pts, table, case.box, case.spec, linear)
    diff = discrete - exact
    return float(np.sqrt(np.sum(wts[:, None] * diff * diff)))


def truncation_errors(case: ManufacturedCase, mesh: Mesh, dt: float, k: int,
                      table: Optional[HorizonTable] = None, eval_mesh: Optional[Mesh] = None,
                      linear: bool = False, order: int = 4) -> TruncationErrors:
    """tau(u), tau(v) at step k; sigma when a horizon table is given."""
    t0, t1 = k * dt, (k + 1) * dt
    g = profile_norm(case, eval_mesh or mesh)
    tau_u = abs(case.dtheta(t1) - (case.theta(t1) - case.theta(t0)) / dt) * g
    tau_v = abs(case.ddtheta(t1) - (case.dtheta(t1) - case.dtheta(t0)) / dt) * g
    sigma = None if table is None else sigma_per(case, mesh, t0, table, eval_mesh, linear, order)
    return TruncationErrors(tau_u, tau_v, sigma)


# --- convergence sweeps ----------------------------------------------------

def fit_rate(resolutions: Sequence[float], errors: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares fit log(err) = slope log(res) + intercept; returns (slope, intercept, r2)."""
    x = np.log(np.asarray(resolutions, float))
    y = np.log(np.asarray(errors, float))
    if len(x) < 2:
        raise ValueError("need at least two points for a rate fit")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


@dataclass
class RateReport:
    resolutions: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    r2: float
    parameter: str = "h"
    min_r2: float = 0.99
    details: list = field(default_factory=list)

    def __post_init__(self):
        self.resolutions = np.asarray(self.resolutions, float)
        self.errors = np.asarray(self.errors, float)
        if np.any(np.diff(self.resolutions) >= 0):
            raise ValueError("resolutions must be strictly decreasing")

    @property
    def pre_asymptotic(self) -> bool:
        return self.r2 < self.min_r2

    def rows(self):
        return [(float(r), float(e)) for r, e in zip(self.resolutions, self.errors)]


@dataclass
class SweepSettings:
    T: float
    dt: float
    h: float
    form: str = "weak"
    model: str = "nonlinear"
    stride: int = 1
    m: Optional[int] = None  # solver lattice; default from h
    oracle_factor: int = 4


def run_case(case: ManufacturedCase, s: SweepSettings):
    """Run one manufactured case; returns (sup_k E^k, run result)."""
    mesh = build_uniform_mesh(case.box, s.h)
    disc = Discretization.build(mesh, case.spec, case.epsilon, s.m)
    forcing = MmsForcing(case, s.oracle_factor * disc.table.m, linear=s.model == "linear")
    cfg = RunConfig(T=s.T, dt=s.dt, form=s.form, model=s.model, u0=case.u0, v0=case.v0,
                    body=forcing, stride=s.stride, record_energy=False)
    res = run(disc, cfg)
    errs = [error_Ek(mesh, snap.u, snap.v, case, snap.time) for snap in res.snapshots]
    return max(errs), res


def converge_sweep(case: ManufacturedCase, base: SweepSettings, vary: str,
                   values: Sequence[float]) -> RateReport:
    """Vary h or dt over ``values`` (other settings fixed) and fit the rate of sup_k E^k."""
    if vary not in ("h", "dt"):
        raise ValueError("vary must be 'h' or 'dt'")
    values = sorted((float(v) for v in values), reverse=True)
    errors, details = [], []
    for v in values:
        s = SweepSettings(**{**base.__dict__, vary: v})
        if vary == "h":
            s.m = None if base.m is None else base.m
        try:
            err, res = run_case(case, s)
        except InstabilityError as exc:
            raise SweepError(f"run with {vary}={v!r} became unstable: {exc}") from exc
        errors.append(err)
        details.append({"resolution": v, "sup_Ek": err, "wall_time": res.wall_time})
    slope, intercept, r2 = fit_rate(values, errors)
    return RateReport(values, errors, slope, intercept, r2, vary, details=details)


# --- a-priori estimate -----------------------------------------------------

@dataclass
class AprioriBound:
    total: float
    temporal_term: float
    spatial_term: float
    exponent: float  # T (1 + L1) / eps^2
    growth: float  # exp(exponent)
    L1: float


def apriori_bound(T: float, epsilon: float, h: float, dt: float, C_t: float, sup_u_H2: float,
                  L1: float = 4.0) -> AprioriBound:
    """exp[F] (C_t T dt + F h^2 sup||u||_2) / (1 - dt)^2 with F = T (1 + L1) / eps^2.

    The initial-data error is ignored. ``dt = 0`` isolates the spatial term.
    """
    if not (0.0 <= dt < 1.0):
        raise ValueError("dt must lie in [0, 1)")
    F = T * (1.0 + L1) / epsilon ** 2
    growth = math.exp(F)
    denom = (1.0 - dt) ** 2
    temporal = growth * C_t * T * dt / denom
    spatial = growth * F * h * h * sup_u_H2 / denom
    return AprioriBound(temporal + spatial, temporal, spatial, F, growth, L1)


def time_for_exponent(exponent: float, epsilon: float, L1: float = 4.0) -> float:
    """Simulation time T at which T (1 + L1) / eps^2 equals ``exponent``."""
    return exponent * epsilon ** 2 / (1.0 + L1)
