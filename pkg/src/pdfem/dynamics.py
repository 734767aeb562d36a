"""Central-difference time stepping in strong (nodal) and weak (Galerkin)
form, run orchestration, and the energy-stability monitor."""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .assembly import Discretization, l2_project
from .geometry import FeField, nodal_interpolant

FORMS = ("strong", "weak")
MODELS = ("nonlinear", "linear")
MASS_MODES = ("consistent", "lumped")


class InstabilityError(RuntimeError):
    """Raised when the trajectory blows up; carries the partial result."""

    def __init__(self, step: int, time: float, max_abs: float, result=None):
        super().__init__(f"instability at step {step} (t={time!r}): max|u| = {max_abs!r}")
        self.step = step
        self.time = time
        self.max_abs = max_abs
        self.result = result


@dataclass
class RunConfig:
    """Time-stepping parameters.

    ``u0``, ``v0`` map (P, d) points to (P, d) values. ``body`` is either a
    callable ``b(t, X)`` or an object with ``bind(X)`` returning ``t -> b``
    (lets expensive forcings precompute on a fixed point set).
    """

    T: float
    dt: float
    form: str = "weak"
    model: str = "nonlinear"
    u0: Optional[Callable] = None
    v0: Optional[Callable] = None
    body: Optional[object] = None
    stride: int = 1
    mass_mode: str = "consistent"
    weak_variant: str = "variational"
    record_energy: bool = True
    blowup_factor: float = 1e6
    solver_rtol: float = 1e-12

    def __post_init__(self):
        if not (0.0 < self.dt < 1.0):
            raise ValueError(f"dt must lie in (0, 1), got {self.dt!r}")
        if self.T <= 0:
            raise ValueError("T must be positive")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-8 * max(1.0, ratio):
            raise ValueError(f"T/dt = {ratio!r} is not an integer")
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.mass_mode not in MASS_MODES:
            raise ValueError(f"mass_mode must be one of {MASS_MODES}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def linear(self) -> bool:
        return self.model == "linear"

    @property
    def lumped(self) -> bool:
        # the strong form has no mass matrix; its natural inner product is lumped
        return self.form == "strong" or self.mass_mode == "lumped"


@dataclass
class SimState:
    u_prev: Optional[np.ndarray]
    u_curr: np.ndarray
    v_curr: np.ndarray
    k: int
    dt: float
    rho: float = 1.0

    @property
    def t(self) -> float:
        return self.k * self.dt

    def field(self, mesh) -> FeField:
        return FeField(mesh, self.u_curr)


def _bind(body, points: np.ndarray, d: int):
    if body is None:
        zero = np.zeros((len(points), d))
        return lambda t: zero
    if hasattr(body, "bind"):
        return body.bind(points)
    return lambda t: np.asarray(body(t, points), float).reshape(len(points), d)


class Integrator:
    """Acceleration evaluation and the central-difference updates."""

    def __init__(self, disc: Discretization, cfg: RunConfig):
        self.disc = disc
        self.cfg = cfg
        self.interior = disc.interior
        self.boundary = disc.mesh.boundary_node
        if cfg.form == "weak":
            self.body_at = _bind(cfg.body, disc.quad[0], disc.d)
        else:
            self.body_at = _bind(cfg.body, disc.mesh.nodes, disc.d)

    def body_norm(self, t: float) -> float:
        b = self.body_at(t)
        if self.cfg.form == "weak":
            return float(np.sqrt(np.sum(self.disc.quad[1][:, None] * b * b)))
        return float(np.sqrt(np.sum(self.disc.mass.lumped[:, None] * b * b)))

    def acceleration(self, U: np.ndarray, t: float) -> tuple[np.ndarray, Optional[float]]:
        """(acceleration, potential energy of U if computed on the way)."""
        disc, cfg = self.disc, self.cfg
        if cfg.form == "strong":
            acc = disc.nodal_force(U, cfg.linear) + self.body_at(t)
            acc[self.boundary] = 0.0
            return acc, None
        energy = None
        if cfg.weak_variant == "variational":
            energy, grad = kernels.energy_grad(disc.gauss_bonds, U, disc.spec.c, disc.spec.beta, cfg.linear)
            F = -grad
        else:
            F = disc.weak_force(U, cfg.linear, cfg.weak_variant)
        if cfg.body is not None:
            F = F + disc.gauss_matrix @ self.body_at(t)
        return disc.solve_mass(F, lumped=cfg.mass_mode == "lumped", rtol=cfg.solver_rtol), energy

    def initial_state(self) -> SimState:
        cfg, mesh = self.cfg, self.disc.mesh
        d = mesh.d
        zero = lambda X: np.zeros((len(X), d))  # noqa: E731
        u0, v0 = cfg.u0 or zero, cfg.v0 or zero
        if cfg.form == "weak":
            U0 = l2_project(u0, mesh, zero_boundary=True).nodal_values
            V0 = l2_project(v0, mesh, zero_boundary=True).nodal_values
        else:
            U0 = nodal_interpolant(mesh, u0, zero_boundary=True)
            V0 = nodal_interpolant(mesh, v0, zero_boundary=True)
        return SimState(None, U0, V0, 0, cfg.dt)

    def first_step(self, state: SimState, acc0: Optional[np.ndarray] = None) -> SimState:
        dt = state.dt
        if acc0 is None:
            acc0, _ = self.acceleration(state.u_curr, state.t)
        U1 = state.u_curr + dt * state.v_curr + 0.5 * dt * dt * acc0
        U1[self.boundary] = 0.0
        return SimState(state.u_curr, U1, (U1 - state.u_curr) / dt, 1, dt, state.rho)

    def step(self, state: SimState, acc: Optional[np.ndarray] = None) -> SimState:
        if state.k < 1 or state.u_prev is None:
            raise ValueError("central-difference step needs k >= 1; use first_step")
        dt = state.dt
        if acc is None:
            acc, _ = self.acceleration(state.u_curr, state.t)
        U = 2.0 * state.u_curr - state.u_prev + dt * dt * acc
        U[self.boundary] = 0.0
        return SimState(state.u_curr, U, (U - state.u_curr) / dt, state.k + 1, dt, state.rho)


def first_step(state: SimState, integrator: Integrator) -> SimState:
    return integrator.first_step(state)


def step_strong(state: SimState, integrator: Integrator) -> SimState:
    if integrator.cfg.form != "strong":
        raise ValueError("integrator is configured for the weak form")
    return integrator.step(state)


def step_weak(state: SimState, integrator: Integrator) -> SimState:
    if integrator.cfg.form != "weak":
        raise ValueError("integrator is configured for the strong form")
    return integrator.step(state)


def reversed_state(state: SimState) -> SimState:
    """Swap the two stored levels so stepping runs the trajectory backwards."""
    return SimState(state.u_curr, state.u_prev, -state.v_curr, state.k, state.dt, state.rho)


@dataclass
class EnergyReport:
    step: np.ndarray
    time: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    work: np.ndarray  # cumulative sum_{j<=k} ||b^j|| dt

    @property
    def total(self) -> np.ndarray:
        return self.kinetic + self.potential

    @property
    def work_bound(self) -> np.ndarray:
        return (math.sqrt(max(self.total[0], 0.0)) + self.work) ** 2

    def rows(self):
        total, bound = self.total, self.work_bound
        for i in range(len(self.step)):
            yield (int(self.step[i]), float(self.time[i]), float(self.kinetic[i]),
                   float(self.potential[i]), float(total[i]), float(bound[i]))


@dataclass
class Snapshot:
    step: int
    time: float
    u: np.ndarray
    v: np.ndarray


@dataclass
class RunResult:
    disc: Discretization
    config: RunConfig
    snapshots: list
    energy: Optional[EnergyReport]
    steps_done: int
    status: str = "ok"
    max_abs: float = 0.0
    wall_time: float = 0.0
    final: Optional[SimState] = None
    extra: dict = field(default_factory=dict)


def _initial_scale(integ: Integrator, state: SimState, cfg: RunConfig) -> float:
    b0 = integ.body_at(0.0)
    scale = max(np.max(np.abs(state.u_curr), initial=0.0),
                cfg.T * np.max(np.abs(state.v_curr), initial=0.0),
                0.5 * cfg.T ** 2 * np.max(np.abs(b0), initial=0.0))
    return scale if scale > 0 else 1e-300


def run(disc: Discretization, cfg: RunConfig, observer: Optional[Callable] = None) -> RunResult:
    """Integrate to T; record snapshots every ``stride`` steps and energies every step.

    ``observer(state)`` is called on every state including k = 0.
    """
    t0 = _time.perf_counter()
    integ = Integrator(disc, cfg)
    n = cfg.n_steps
    state = integ.initial_state()
    limit = cfg.blowup_factor * _initial_scale(integ, state, cfg)

    rec = cfg.record_energy
    kin = np.zeros(n + 1)
    pot = np.zeros(n + 1)
    bnorm = np.zeros(n + 1)
    snaps = []
    lumped = cfg.lumped

    def potential(U, known):
        if known is not None:
            return known
        return disc.potential(U, cfg.linear, nodal=cfg.form == "strong")

    def record(st: SimState, known_pot):
        k = st.k
        if rec:
            kin[k] = 0.5 * float(np.sum(st.v_curr * disc.mass.apply(st.v_curr, lumped)))
            pot[k] = potential(st.u_curr, known_pot)
            bnorm[k] = integ.body_norm(st.t) if cfg.body is not None else 0.0
        if k % cfg.stride == 0 or k == n:
            snaps.append(Snapshot(k, st.t, st.u_curr.copy(), st.v_curr.copy()))
        if observer is not None:
            observer(st)

    def result(status, steps, max_abs, st):
        m = steps + 1
        energy = None
        if rec:
            steps_arr = np.arange(m)
            work = np.cumsum(bnorm[:m]) * cfg.dt
            energy = EnergyReport(steps_arr, steps_arr * cfg.dt, kin[:m].copy(), pot[:m].copy(), work)
        return RunResult(disc, cfg, snaps, energy, steps, status, max_abs,
                         _time.perf_counter() - t0, st)

    def check(st: SimState):
        peak = float(np.max(np.abs(st.u_curr), initial=0.0))
        if not np.all(np.isfinite(st.u_curr)) or peak > limit:
            raise InstabilityError(st.k, st.t, peak, result("unstable", st.k - 1, peak, st))
        return peak

    acc, e_known = integ.acceleration(state.u_curr, 0.0)
    record(state, e_known)
    peak = 0.0
    for k in range(n):
        state = integ.first_step(state, acc) if k == 0 else integ.step(state, acc)
        peak = max(peak, check(state))
        if k + 1 < n:
            acc, e_known = integ.acceleration(state.u_curr, state.t)
        else:
            e_known = None
        record(state, e_known)
    return result("ok", n, peak, state)


@dataclass
class StabilityCheck:
    passed: bool
    worst_margin: float
    worst_step: int
    margins: np.ndarray


def energy_stability_check(report: EnergyReport, rel_tol: float = 1e-3, slack: float = 0.0,
                           scale: Optional[float] = None) -> StabilityCheck:
    """Check E^k <= (sqrt(E^0) + sum_{j<=k} ||b^j|| dt)^2 (1 + rel_tol) + slack k dt^2 scale.

    Margins are normalized by max(bound, tiny); a negative margin is a violation.
    """
    bound = report.work_bound
    total = report.total
    if scale is None:
        scale = float(np.max(np.abs(bound), initial=0.0)) or 1.0
    dt = float(report.time[1] - report.time[0]) if len(report.time) > 1 else 0.0
    allowance = bound * (1.0 + rel_tol) + slack * report.step * dt * dt * scale
    tiny = 1e-300
    margins = (allowance - total) / np.maximum(np.abs(bound), tiny)
    margins[(allowance == 0) & (total <= 0)] = 0.0
    i = int(np.argmin(margins)) if len(margins) else 0
    worst = float(margins[i]) if len(margins) else 0.0
    return StabilityCheck(worst >= 0.0, worst, int(report.step[i]) if len(margins) else 0, margins)
