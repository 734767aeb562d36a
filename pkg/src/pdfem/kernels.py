"""Backend selection and parallel dispatch for the bond kernels.

The compiled ``_core`` extension is used when importable; otherwise the
numpy implementation in ``_pykernels`` is used. Setting the environment
variable ``PDFEM_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import importlib
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_settings = {"threads": 1, "deterministic": True}


def _load(name: str):
    if name == "cython":
        return importlib.import_module("pdfem._core")
    if name == "python":
        return importlib.import_module("pdfem._pykernels")
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list:
    out = []
    for name in ("cython", "python"):
        try:
            _load(name)
            out.append(name)
        except ImportError:
            pass
    return out


def _select():
    wanted = os.environ.get("PDFEM_BACKEND", "").strip().lower()
    if wanted:
        return wanted, _load(wanted)
    try:
        return "cython", _load("cython")
    except ImportError:
        return "python", _load("python")


BACKEND, _impl = _select()


def get_backend(name: str | None = None):
    return _impl if name is None else _load(name)


def set_threads(n: int) -> None:
    _settings["threads"] = max(1, int(n))


def set_deterministic(flag: bool) -> None:
    _settings["deterministic"] = bool(flag)


def _ranges(n_points: int):
    k = 1 if _settings["deterministic"] else min(_settings["threads"], max(n_points, 1))
    edges = np.linspace(0, n_points, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a] or [(0, 0)]


def _run(tasks):
    if len(tasks) == 1:
        return [tasks[0]()]
    with ThreadPoolExecutor(max_workers=len(tasks)) as pool:
        return list(pool.map(lambda t: t(), tasks))


def point_force(bonds, U, c, beta, linear, backend=None):
    impl = get_backend(backend)
    U = np.ascontiguousarray(U, float)
    out = np.zeros((bonds.n_points, U.shape[1]))
    args = bonds.kernel_args()
    tasks = [lambda a=a, b=b: impl.point_force(U, *args, c, beta, bool(linear), out, a, b)
             for a, b in _ranges(bonds.n_points)]
    _run(tasks)
    return out


def energy_grad(bonds, U, c, beta, linear, want_grad=True, backend=None):
    """Discrete potential energy and its gradient with respect to nodal values."""
    impl = get_backend(backend)
    U = np.ascontiguousarray(U, float)
    args = bonds.kernel_args()
    pw = bonds.point_weights
    ranges = _ranges(bonds.n_points)
    grads = [np.zeros_like(U) for _ in ranges]
    tasks = [lambda a=a, b=b, g=g: impl.energy_grad(U, *args, pw, c, beta, bool(linear), g, a, b, want_grad)
             for (a, b), g in zip(ranges, grads)]
    energies = _run(tasks)
    grad = grads[0]
    for g in grads[1:]:
        grad += g
    return float(sum(energies)), grad


def bilinear(bonds, U, V, c, beta, linear, backend=None):
    impl = get_backend(backend)
    U = np.ascontiguousarray(U, float)
    V = np.ascontiguousarray(V, float)
    args = bonds.kernel_args()
    pw = bonds.point_weights
    tasks = [lambda a=a, b=b: impl.bilinear(U, V, *args, pw, c, beta, bool(linear), a, b)
             for a, b in _ranges(bonds.n_points)]
    return float(sum(_run(tasks)))
