"""Stability analysis of the linearized scheme: the largest generalized
eigenvalue of (A_l, M), the maximal stable time step, the conserved discrete
energy, and an empirical instability probe."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg as sla
from scipy import sparse

from .assembly import Discretization, solve_spd
from .dynamics import InstabilityError, RunConfig, run
from .geometry import FeField

SAFETY = 1e-6


class EstimateError(RuntimeError):
    def __init__(self, message: str, last_quotient: float):
        super().__init__(message)
        self.last_quotient = last_quotient


@dataclass
class SpectralEstimate:
    mu_max: float  # inflated by the safety factor
    mu_raw: float
    dt_max: float
    iterations: int
    residual: float
    mass_mode: str
    method: str
    vector: Optional[np.ndarray] = None  # M-normalized top eigenvector, nodal (N, d)


@dataclass
class GeneralizedProblem:
    """Matrix-free symmetric pencil (A, M) on a flat vector space."""

    n: int
    apply_A: Callable[[np.ndarray], np.ndarray]
    apply_M: Callable[[np.ndarray], np.ndarray]
    solve_M: Callable[[np.ndarray], np.ndarray]


def linearized_problem(disc: Discretization, mass_mode: str = "consistent") -> GeneralizedProblem:
    """The pencil (A_l, M) restricted to interior degrees of freedom."""
    if mass_mode not in ("consistent", "lumped"):
        raise ValueError(f"unknown mass mode {mass_mode!r}")
    I = disc.interior
    N, d = disc.mesh.n_nodes, disc.d
    n_int = len(I)

    def embed(x):
        U = np.zeros((N, d))
        U[I] = x.reshape(n_int, d)
        return U

    def apply_A(x):
        return disc.stiffness_apply(embed(x))[I].ravel()

    if mass_mode == "lumped":
        m = np.repeat(disc.mass.lumped[I], d)
        return GeneralizedProblem(n_int * d, apply_A, lambda x: m * x, lambda x: x / m)
    M_II = disc.mass_interior()
    return GeneralizedProblem(
        n_int * d, apply_A,
        lambda x: (M_II @ x.reshape(n_int, d)).ravel(),
        lambda x: solve_spd(M_II, x.reshape(n_int, d), rtol=1e-14).ravel(),
    )


def _m_normalize(x, prob):
    nrm = np.sqrt(max(float(x @ prob.apply_M(x)), 0.0))
    return x / nrm if nrm > 0 else x


def _power(prob: GeneralizedProblem, x, tol, max_iter):
    x = _m_normalize(x, prob)
    Ax = prob.apply_A(x)
    mu = float(x @ Ax)
    for it in range(1, max_iter + 1):
        x = _m_normalize(prob.solve_M(Ax), prob)
        Ax = prob.apply_A(x)
        new = float(x @ Ax)
        change = abs(new - mu) / max(abs(new), 1e-300)
        mu = new
        if change < tol:
            return mu, x, it, change
    raise EstimateError(f"power iteration did not converge in {max_iter} iterations", mu)


def _lanczos(prob: GeneralizedProblem, x, tol, max_iter):
    # Lanczos for M^{-1} A in the M inner product, full reorthogonalization
    n = prob.n
    q = _m_normalize(x, prob)
    Q = [q]
    MQ = [prob.apply_M(q)]
    alphas, betas = [], []
    theta_old = None
    change = np.inf
    s = np.ones(1)
    for it in range(1, min(max_iter, n) + 1):
        z = prob.apply_A(Q[-1])
        alphas.append(float(Q[-1] @ z))
        w = prob.solve_M(z)
        Qm, MQm = np.array(Q), np.array(MQ)
        for _ in range(2):
            w = w - Qm.T @ (MQm @ w)
        Mw = prob.apply_M(w)
        beta = np.sqrt(max(float(w @ Mw), 0.0))
        vals, vecs = sla.eigh_tridiagonal(np.array(alphas), np.array(betas)) if betas else \
            (np.array(alphas), np.ones((1, 1)))
        theta = float(vals[-1])
        s = vecs[:, -1]
        if theta_old is not None:
            change = abs(theta - theta_old) / max(abs(theta), 1e-300)
        theta_old = theta
        exhausted = beta <= 1e-13 * max(abs(theta), 1e-300) or it == n
        resid = beta * abs(s[-1]) / max(abs(theta), 1e-300)
        if exhausted or (change < tol and resid < np.sqrt(tol)):
            vec = np.array(Q).T @ s
            return theta, vec, it, (0.0 if exhausted else change)
        betas.append(beta)
        Q.append(w / beta)
        MQ.append(Mw / beta)
    raise EstimateError(f"Lanczos did not converge in {max_iter} iterations", theta_old or 0.0)


def generalized_sup(prob: GeneralizedProblem, method: str = "lanczos", tol: float = 1e-8,
                    max_iter: int = 10_000, restarts: int = 3, seed: int = 0):
    """(mu, vector, iterations, residual): best of ``restarts`` random starts."""
    if method not in ("lanczos", "power"):
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    solver = _lanczos if method == "lanczos" else _power
    best = None
    total_it = 0
    for _ in range(max(1, restarts)):
        mu, vec, it, res = solver(prob, rng.standard_normal(prob.n), tol, max_iter)
        total_it += it
        if best is None or mu > best[0]:
            best = (mu, vec, res)
    return best[0], best[1], total_it, best[2]


def rayleigh_sup(disc: Discretization, mass_mode: str = "consistent", method: str = "lanczos",
                 tol: float = 1e-8, max_iter: int = 10_000, restarts: int = 3, seed: int = 0,
                 safety: float = SAFETY) -> SpectralEstimate:
    """sup a_l(u, u) / (u, u) over the interior finite element space."""
    prob = linearized_problem(disc, mass_mode)
    mu, vec, its, res = generalized_sup(prob, method, tol, max_iter, restarts, seed)
    if not mu > 0:
        raise EstimateError("non-positive Rayleigh quotient supremum", mu)
    U = np.zeros((disc.mesh.n_nodes, disc.d))
    U[disc.interior] = _m_normalize(vec, prob).reshape(-1, disc.d)
    return estimate_from_mu(mu, its, res, mass_mode, method, U, safety)


def estimate_from_mu(mu_raw: float, iterations: int = 0, residual: float = 0.0,
                     mass_mode: str = "consistent", method: str = "lanczos",
                     vector=None, safety: float = SAFETY) -> SpectralEstimate:
    mu = mu_raw * (1.0 + safety)
    return SpectralEstimate(mu, mu_raw, 2.0 / np.sqrt(mu), iterations, residual, mass_mode, method, vector)


def assembled_pencil(disc: Discretization, mass_mode: str = "consistent"):
    """Explicit (A_l, M) on interior DOFs, for dense cross-checks."""
    bonds = disc.gauss_bonds
    D = bonds.strain_matrix()
    owner = np.repeat(np.arange(bonds.n_points), np.diff(bonds.ptr))
    w = 0.5 * bonds.coef * bonds.point_weights[owner] * disc.spec.f_prime_0 * bonds.length
    A = (D.T @ sparse.diags(w) @ D).tocsr()
    d = disc.d
    dofs = (disc.interior[:, None] * d + np.arange(d)[None, :]).ravel()
    if mass_mode == "lumped":
        M = sparse.diags(np.repeat(disc.mass.lumped, d)).tocsr()
    else:
        M = disc.mass.full()
    return A[dofs][:, dofs], M[dofs][:, dofs]


def dense_sup(disc: Discretization, mass_mode: str = "consistent") -> float:
    A, M = assembled_pencil(disc, mass_mode)
    n = A.shape[0]
    vals = sla.eigh(A.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[n - 1, n - 1])
    return float(vals[-1])


# --- discrete energy -------------------------------------------------------

@dataclass
class DiscreteEnergy:
    value: float
    parts: tuple  # (kinetic, correction, stiffness); value = sum(parts)


def discrete_energy(disc: Discretization, u_k: np.ndarray, u_k1: np.ndarray, dt: float,
                    mass_mode: str = "consistent") -> DiscreteEnergy:
    """1/2 [ |D|^2 - dt^2/4 a_l(D, D) + a_l(m, m) ], D = (u_k1 - u_k)/dt, m = (u_k1 + u_k)/2."""
    D = (u_k1 - u_k) / dt
    mid = 0.5 * (u_k1 + u_k)
    lumped = mass_mode == "lumped"
    kinetic = 0.5 * float(np.sum(D * disc.mass.apply(D, lumped)))
    correction = -0.125 * dt * dt * disc.bilinear(D, D, linear=True)
    stiffness = 0.5 * disc.bilinear(mid, mid, linear=True)
    return DiscreteEnergy(kinetic + correction + stiffness, (kinetic, correction, stiffness))


@dataclass
class ConservationReport:
    max_drift: float
    energies: np.ndarray
    steps: int


def drift_of(energies: np.ndarray) -> float:
    e0 = energies[0]
    if e0 == 0:
        return 0.0
    return float(np.max(np.abs(energies - e0)) / abs(e0))


def conservation_check(disc: Discretization, cfg: RunConfig) -> ConservationReport:
    """Run the linear, unforced scheme and track the discrete energy of consecutive states."""
    if not cfg.linear:
        raise ValueError("conservation holds for the linearized model only")
    if cfg.body is not None:
        raise ValueError("conservation check requires zero body force")
    if cfg.form != "weak":
        raise ValueError("conservation check needs the weak form")
    values = []

    def observe(st):
        if st.k >= 1:
            values.append(discrete_energy(disc, st.u_prev, st.u_curr, cfg.dt, cfg.mass_mode).value)

    cfg = RunConfig(**{**cfg.__dict__, "record_energy": False, "stride": cfg.n_steps})
    run(disc, cfg, observer=observe)
    energies = np.array(values)
    return ConservationReport(drift_of(energies), energies, cfg.n_steps)


@dataclass
class ProbeResult:
    blew_up: bool
    step: int
    growth: float


def instability_probe(disc: Discretization, dt: float, n_steps: int, mode: np.ndarray,
                      mass_mode: str = "consistent", threshold: float = 1e6) -> ProbeResult:
    """Excite ``mode`` (nodal values) in the unforced linear model and watch for blow-up."""
    field = FeField(disc.mesh, mode)
    scale = float(np.max(np.abs(mode)))
    cfg = RunConfig(T=n_steps * dt, dt=dt, form="weak", model="linear", u0=field,
                    mass_mode=mass_mode, record_energy=False, stride=n_steps,
                    blowup_factor=threshold)
    try:
        res = run(disc, cfg)
    except InstabilityError as err:
        return ProbeResult(True, err.step, err.max_abs / scale if np.isfinite(err.max_abs) else np.inf)
    return ProbeResult(False, n_steps, res.max_abs / scale)
