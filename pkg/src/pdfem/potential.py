"""Bond potential, influence functions and material calibration.

The bond potential is ``f(r) = c * (1 - exp(-beta * r))``. It is positive,
increasing and concave on ``[0, inf)`` with ``f'(0) = c * beta`` and
``f(inf) = c``. The profile ``F1(r) = f(r**2)`` has an inflection point at
``r_bar = 1 / sqrt(2 * beta)``, which fixes the critical strain of a bond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

J_KINDS = ("constant", "linear_decay", "quartic")

# Lame prefactor and unit-ball volumes, indexed by dimension.
C_D = {1: 2.0 / 3.0, 2: 1.0 / 4.0, 3: 1.0 / 5.0}
OMEGA = {0: 1.0, 1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


class CalibrationError(ValueError):
    pass


def unit_ball_volume(d: int) -> float:
    return OMEGA[d]


def influence(j_kind: str) -> Callable[[np.ndarray], np.ndarray]:
    """Return J(r) for ``j_kind``; J vanishes for r >= 1."""
    if j_kind == "constant":
        def J(r):
            r = np.asarray(r, dtype=float)
            return np.where(r < 1.0, 1.0, 0.0)
    elif j_kind == "linear_decay":
        def J(r):
            r = np.asarray(r, dtype=float)
            return np.where(r < 1.0, 1.0 - r, 0.0)
    elif j_kind == "quartic":
        def J(r):
            r = np.asarray(r, dtype=float)
            return np.where(r < 1.0, (1.0 - r * r) ** 4, 0.0)
    else:
        raise ValueError(f"unknown influence function {j_kind!r}")
    return J


def influence_max(j_kind: str) -> float:
    influence(j_kind)  # validates the name
    return 1.0


def moment_M(j_kind: str, d: int) -> float:
    """M_d = int_0^1 J(r) r^d dr, in closed form."""
    if j_kind == "constant":
        return 1.0 / (d + 1)
    if j_kind == "linear_decay":
        return 1.0 / ((d + 1) * (d + 2))
    if j_kind == "quartic":
        # 1/2 * B((d+1)/2, 5)
        a = 0.5 * (d + 1)
        return 0.5 * math.gamma(a) * math.gamma(5.0) / math.gamma(a + 5.0)
    raise ValueError(f"unknown influence function {j_kind!r}")


def moment_J1(j_kind: str, d: int) -> Optional[float]:
    """Weighted moment (1/omega_d) int_{H_1(0)} J(|xi|)/|xi| dxi.

    Equals ``d * int_0^1 J(r) r^(d-2) dr``. Every supported J is nonzero at
    the origin, so the integral diverges for d = 1 and None is returned.
    """
    influence(j_kind)
    if d == 1:
        return None
    if d == 2:
        base = {"constant": 1.0, "linear_decay": 0.5, "quartic": 128.0 / 315.0}
    elif d == 3:
        base = {"constant": 0.5, "linear_decay": 1.0 / 6.0, "quartic": 0.1}
    else:
        raise ValueError(f"unsupported dimension {d}")
    return d * base[j_kind]


@dataclass(frozen=True)
class PotentialSpec:
    c: float = 1.0
    beta: float = 1.0
    j_kind: str = "linear_decay"
    d: int = 1

    def __post_init__(self):
        if not (self.c > 0 and self.beta > 0):
            raise ValueError("c and beta must be positive")
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        influence(self.j_kind)

    # f and its derivatives -------------------------------------------------
    def f(self, r):
        r = _check_nonneg(r)
        return -self.c * np.expm1(-self.beta * r)

    def df(self, r):
        r = _check_nonneg(r)
        return self.c * self.beta * np.exp(-self.beta * r)

    def d2f(self, r):
        r = _check_nonneg(r)
        return -self.c * self.beta ** 2 * np.exp(-self.beta * r)

    @property
    def f_prime_0(self) -> float:
        return self.c * self.beta

    @property
    def f_inf(self) -> float:
        return self.c

    # F1(r) = f(r^2) and derivatives up to order 4
    def F1(self, r, order: int = 0):
        r = np.asarray(r, dtype=float)
        c, b = self.c, self.beta
        g = np.exp(-b * r * r)
        br2 = b * r * r
        if order == 0:
            return -c * np.expm1(-br2)
        if order == 1:
            return 2.0 * c * b * r * g
        if order == 2:
            return 2.0 * c * b * g * (1.0 - 2.0 * br2)
        if order == 3:
            return -4.0 * c * b * b * r * g * (3.0 - 2.0 * br2)
        if order == 4:
            return -4.0 * c * b * b * g * (3.0 - 12.0 * br2 + 4.0 * br2 * br2)
        raise ValueError("order must be 0..4")

    def J(self, r):
        return influence(self.j_kind)(r)


def _check_nonneg(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("potential argument must be non-negative")
    return r


def f_eval(r, spec: PotentialSpec):
    return spec.f(r)


def inflection_point(spec: PotentialSpec) -> float:
    """Root of f'(r^2) + 2 r^2 f''(r^2) = 0, i.e. 1 / sqrt(2 beta)."""
    return 1.0 / math.sqrt(2.0 * spec.beta)


def critical_strain(r_bar: float, bond_length):
    bond_length = np.asarray(bond_length, dtype=float)
    if np.any(bond_length <= 0):
        raise ValueError("bond length must be positive")
    out = r_bar / np.sqrt(bond_length)
    return float(out) if out.ndim == 0 else out


def calibrate(lam: float, g_c: float, d: int, j_kind: str) -> tuple[float, float]:
    """Map (lambda, G_c) to (f'(0), f_inf).

    lambda = C_d f'(0) M_d and G_c = (2 omega_{d-1} / omega_d) f_inf M_d.
    The potential parameters follow as c = f_inf, beta = f'(0) / f_inf.
    """
    if not (lam > 0 and g_c > 0):
        raise CalibrationError("lambda and G_c must be positive")
    if d not in C_D:
        raise CalibrationError(f"unsupported dimension {d}")
    M = moment_M(j_kind, d)
    if M <= 0:
        raise CalibrationError("influence function has zero moment")
    f_prime_0 = lam / (C_D[d] * M)
    f_inf = g_c * OMEGA[d] / (2.0 * OMEGA[d - 1] * M)
    return f_prime_0, f_inf


def lame_and_gc(f_prime_0: float, f_inf: float, d: int, j_kind: str) -> tuple[float, float]:
    M = moment_M(j_kind, d)
    return C_D[d] * f_prime_0 * M, 2.0 * OMEGA[d - 1] / OMEGA[d] * f_inf * M


def spec_from_material(lam: float, g_c: float, d: int, j_kind: str = "linear_decay") -> PotentialSpec:
    fp0, finf = calibrate(lam, g_c, d, j_kind)
    return PotentialSpec(c=finf, beta=fp0 / finf, j_kind=j_kind, d=d)


@dataclass(frozen=True)
class DerivedConstants:
    f_prime_0: float
    f_inf: float
    r_bar: float
    M_d: float
    J_bar_1: Optional[float]
    C1: float
    C2: float
    C3: float
    C4: float
    L1: Optional[float]
    lam: float
    G_c: float


def _sup_abs(fun, r_max: float, n_grid: int) -> float:
    # log-spaced grid plus the origin; refine the best cell with a bounded scalar search
    r = np.concatenate(([0.0], np.geomspace(r_max * 1e-8, r_max, n_grid - 1)))
    vals = np.abs(fun(r))
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo, hi = r[max(i - 1, 0)], r[min(i + 1, len(r) - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda s: -abs(float(fun(s))), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-14 * max(hi, 1.0)})
        best = max(best, -float(res.fun))
    return best


def potential_constants(spec: PotentialSpec, n_grid: int = 1_000_000) -> DerivedConstants:
    """Suprema of |F1^(k)| for k = 1..4, L1 = 4 C2 J_bar_1 and calibration values."""
    r_max = 50.0 / math.sqrt(spec.beta)
    C = [_sup_abs(lambda r, k=k: spec.F1(r, k), r_max, n_grid) for k in (1, 2, 3, 4)]
    J1 = moment_J1(spec.j_kind, spec.d)
    L1 = None if J1 is None else 4.0 * C[1] * J1
    M = moment_M(spec.j_kind, spec.d)
    lam, gc = lame_and_gc(spec.f_prime_0, spec.f_inf, spec.d, spec.j_kind)
    return DerivedConstants(
        f_prime_0=spec.f_prime_0, f_inf=spec.f_inf, r_bar=inflection_point(spec),
        M_d=M, J_bar_1=J1, C1=C[0], C2=C[1], C3=C[2], C4=C[3], L1=L1, lam=lam, G_c=gc,
    )
