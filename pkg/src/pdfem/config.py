"""Strict sectioned key=value configuration.

Example::

    [domain]
    d = 1
    box = 0 1

    [discretization]
    h = 0.02
    epsilon = 0.1
    T = 1.0
    dt = 0.001

    [material]
    c = 1.0
    beta = 1.0

Initial-condition selectors: ``zero``, ``sine_mode(k...)``,
``gaussian(center..., width)``, ``from_csv(path)``, ``mms``. Forcing
selectors: ``zero``, ``constant(v...)``, ``mms(sine1d|sine2d)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .potential import J_KINDS, PotentialSpec, spec_from_material


class ConfigError(ValueError):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def _floats(text: str) -> list:
    return [float(tok) for tok in re.split(r"[,\s]+", text.strip()) if tok]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return conv


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _positive(text):
    v = float(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


SCHEMA: dict = {
    "domain": {"d": int, "box": _floats},
    "discretization": {
        "h": _positive, "epsilon": _positive, "m": _positive_int, "dt": float, "T": _positive,
        "form": _choice("strong", "weak"), "model": _choice("nonlinear", "linear"),
        "mass_mode": _choice("consistent", "lumped"), "deterministic": _bool,
    },
    "material": {"lambda": _positive, "g_c": _positive, "c": _positive, "beta": _positive,
                 "j_kind": _choice(*J_KINDS)},
    "ic": {"u0": str, "v0": str, "u0_amplitude": float, "v0_amplitude": float,
           "direction": _floats},
    "forcing": {"b": str},
    "output": {"directory": str, "stride": _positive_int},
    "verification": {"amplitude": float, "omega": float, "vary": _choice("h", "dt"),
                     "values": _floats, "oracle_factor": _positive_int},
    "estimate": {"T": _positive, "exponent": _positive, "epsilon": _positive, "h": _positive,
                 "dt": float, "C_t": float, "sup_u_H2": float, "L1": str},
}

DEFAULTS = {
    ("discretization", "form"): "weak",
    ("discretization", "model"): "nonlinear",
    ("discretization", "mass_mode"): "consistent",
    ("material", "j_kind"): "linear_decay",
    ("ic", "u0"): "zero",
    ("ic", "v0"): "zero",
    ("ic", "u0_amplitude"): 1e-3,
    ("ic", "v0_amplitude"): 1e-3,
    ("forcing", "b"): "zero",
    ("output", "directory"): "out",
    ("output", "stride"): 1,
    ("verification", "amplitude"): 0.1,
    ("verification", "omega"): 1.0,
    ("verification", "vary"): "h",
    ("verification", "oracle_factor"): 4,
    ("estimate", "C_t"): 1.0,
    ("estimate", "sup_u_H2"): 1.0,
    ("estimate", "dt"): 0.0,
    ("estimate", "L1"): "4",
}

_SELECTOR = re.compile(r"^\s*([a-z_0-9]+)\s*(?:\((.*)\))?\s*$")


@dataclass
class Selector:
    name: str
    args: list  # raw argument strings

    def __str__(self):
        return self.name if not self.args else f"{self.name}({', '.join(self.args)})"


def parse_selector(text: str, line: int = 0) -> Selector:
    m = _SELECTOR.match(text)
    if not m:
        raise ConfigError(f"malformed selector {text!r}", line)
    args = [a.strip() for a in m.group(2).split(",")] if m.group(2) is not None else []
    return Selector(m.group(1), [a for a in args if a])


@dataclass
class Config:
    values: dict = field(default_factory=dict)  # section -> key -> value
    raw: dict = field(default_factory=dict)  # section -> key -> original text
    lines: dict = field(default_factory=dict)  # (section, key) or section -> line number
    path: Optional[Path] = None

    def has(self, section: str, key: Optional[str] = None) -> bool:
        if key is None:
            return section in self.values
        return key in self.values.get(section, {})

    def get(self, section: str, key: str, default=None):
        if key in self.values.get(section, {}):
            return self.values[section][key]
        return DEFAULTS.get((section, key), default)

    def require(self, section: str, key: str):
        if not self.has(section, key):
            raise ConfigError(f"missing required key [{section}] {key}", self.lines.get(section, 0))
        return self.values[section][key]

    def line_of(self, section: str, key: Optional[str] = None) -> int:
        return self.lines.get((section, key) if key else section, 0)

    # --- derived objects ---
    @property
    def d(self) -> int:
        return int(self.get("domain", "d", 1))

    def box(self):
        from .geometry import Box
        d = self.d
        vals = self.get("domain", "box")
        if vals is None:
            return Box.unit(d)
        return Box(np.array(vals[0::2]), np.array(vals[1::2]))

    def material_spec(self, d: Optional[int] = None) -> PotentialSpec:
        d = d or self.d
        j_kind = self.get("material", "j_kind")
        if self.has("material", "c"):
            return PotentialSpec(self.require("material", "c"), self.require("material", "beta"), j_kind, d)
        if self.has("material", "lambda"):
            return spec_from_material(self.require("material", "lambda"), self.require("material", "g_c"),
                                      d, j_kind)
        raise ConfigError("missing [material]: give (c, beta) or (lambda, g_c)", self.line_of("material"))

    def to_text(self) -> str:
        out = []
        for section in SCHEMA:
            if section not in self.raw:
                continue
            out.append(f"[{section}]")
            for key in SCHEMA[section]:
                if key in self.raw[section]:
                    out.append(f"{key} = {self.raw[section][key]}")
            out.append("")
        return "\n".join(out)


def parse_text(text: str, path: Optional[Path] = None) -> Config:
    cfg = Config(path=path)
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", lineno)
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section in cfg.values:
                raise ConfigError(f"duplicate section [{section}]", lineno)
            cfg.values[section] = {}
            cfg.raw[section] = {}
            cfg.lines[section] = lineno
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected key = value, got {stripped!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if key in cfg.values[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        try:
            cfg.values[section][key] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {exc}", lineno) from None
        cfg.raw[section][key] = value
        cfg.lines[(section, key)] = lineno
    validate(cfg)
    return cfg


def parse_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, path)


def validate(cfg: Config) -> None:
    if cfg.has("domain"):
        d = cfg.require("domain", "d")
        if d not in (1, 2):
            raise ConfigError("d must be 1 or 2", cfg.line_of("domain", "d"))
        box = cfg.get("domain", "box")
        if box is not None:
            if len(box) != 2 * d:
                raise ConfigError(f"box needs {2 * d} numbers (lower upper per axis)", cfg.line_of("domain", "box"))
            if any(hi <= lo for lo, hi in zip(box[0::2], box[1::2])):
                raise ConfigError("box upper bounds must exceed lower bounds", cfg.line_of("domain", "box"))

    if cfg.has("material"):
        mat = cfg.values["material"]
        pair_a = [k for k in ("lambda", "g_c") if k in mat]
        pair_b = [k for k in ("c", "beta") if k in mat]
        line = cfg.line_of("material")
        if pair_a and pair_b:
            raise ConfigError("conflicting material spec: give either (lambda, g_c) or (c, beta)", line)
        for pair, names in ((pair_a, ("lambda", "g_c")), (pair_b, ("c", "beta"))):
            if pair and len(pair) != 2:
                missing = [n for n in names if n not in pair][0]
                raise ConfigError(f"missing required key [material] {missing}", line)
        if not pair_a and not pair_b:
            raise ConfigError("missing [material]: give (c, beta) or (lambda, g_c)", line)

    if cfg.has("discretization"):
        for key in ("h", "epsilon", "T"):
            cfg.require("discretization", key)
        if cfg.has("discretization", "dt"):
            dt = cfg.values["discretization"]["dt"]
            if not (0.0 < dt < 1.0):
                raise ConfigError(f"dt must lie in (0, 1), got {dt!r}", cfg.line_of("discretization", "dt"))
        eps = cfg.values["discretization"]["epsilon"]
        extent = float(np.min(cfg.box().extent))
        if eps >= extent:
            raise ConfigError(f"epsilon = {eps!r} must be smaller than the box extent {extent!r}",
                              cfg.line_of("discretization", "epsilon"))
        if cfg.values["discretization"]["h"] > extent:
            raise ConfigError("h exceeds the box extent", cfg.line_of("discretization", "h"))

    if cfg.has("estimate"):
        est = cfg.values["estimate"]
        if ("T" in est) == ("exponent" in est):
            raise ConfigError("[estimate] needs exactly one of T or exponent", cfg.line_of("estimate"))
        if not (0.0 <= est.get("dt", 0.0) < 1.0):
            raise ConfigError("[estimate] dt must lie in [0, 1)", cfg.line_of("estimate", "dt"))
        l1 = est.get("L1", "4")
        if l1 != "computed":
            try:
                float(l1)
            except ValueError:
                raise ConfigError("[estimate] L1 must be a number or 'computed'", cfg.line_of("estimate", "L1")) from None

    for key in ("u0", "v0"):
        if cfg.has("ic", key):
            sel = parse_selector(cfg.values["ic"][key], cfg.line_of("ic", key))
            if sel.name not in ("zero", "sine_mode", "gaussian", "from_csv", "mms"):
                raise ConfigError(f"unknown initial-condition selector {sel.name!r}", cfg.line_of("ic", key))
    if cfg.has("forcing", "b"):
        sel = parse_selector(cfg.values["forcing"]["b"], cfg.line_of("forcing", "b"))
        if sel.name not in ("zero", "constant", "mms"):
            raise ConfigError(f"unknown forcing selector {sel.name!r}", cfg.line_of("forcing", "b"))
        if sel.name == "mms" and (len(sel.args) != 1 or sel.args[0] not in ("sine1d", "sine2d")):
            raise ConfigError("mms forcing takes one case id: sine1d or sine2d", cfg.line_of("forcing", "b"))


# --- selectors to point functions -------------------------------------------

def _direction(cfg: Config, d: int) -> np.ndarray:
    v = np.asarray(cfg.get("ic", "direction", [1.0] * d), float)
    if v.shape != (d,) or not np.any(v):
        raise ConfigError(f"[ic] direction needs {d} numbers, not all zero", cfg.line_of("ic", "direction"))
    return v / np.linalg.norm(v)


def initial_condition(cfg: Config, which: str, box) -> Optional[Callable]:
    """Point function (P, d) -> (P, d) for ``u0`` or ``v0``; None for zero."""
    line = cfg.line_of("ic", which)
    sel = parse_selector(cfg.get("ic", which), line)
    d = box.d
    amp = cfg.get("ic", f"{which}_amplitude")
    try:
        if sel.name == "zero":
            return None
        if sel.name == "mms":
            return None  # supplied by the manufactured case
        if sel.name == "sine_mode":
            ks = _floats(sel.args[0]) if sel.args else [1.0]
            ks = ks * d if len(ks) == 1 else ks
            if len(ks) != d:
                raise ValueError(f"sine_mode needs 1 or {d} mode numbers")
            lower, ext = box.lower, box.extent
            direction = _direction(cfg, d)

            def fun(X):
                s = np.prod(np.sin(np.pi * np.asarray(ks) * (X - lower) / ext), axis=1)
                return amp * s[:, None] * direction
            return fun
        if sel.name == "gaussian":
            if len(sel.args) != 2:
                raise ValueError("gaussian(center, width) takes two arguments")
            center = np.asarray(_floats(sel.args[0]), float)
            width = float(sel.args[1])
            if center.shape != (d,) or width <= 0:
                raise ValueError("gaussian center needs d coordinates and width > 0")
            direction = _direction(cfg, d)

            def fun(X):
                r2 = np.sum((X - center) ** 2, axis=1)
                return amp * np.exp(-r2 / (2 * width * width))[:, None] * direction
            return fun
        if sel.name == "from_csv":
            if len(sel.args) != 1:
                raise ValueError("from_csv(path) takes one argument")
            return _from_csv(cfg, sel.args[0], which, d)
    except (ValueError, OSError, IndexError) as exc:
        raise ConfigError(f"[ic] {which}: {exc}", line) from None
    raise ConfigError(f"unknown initial-condition selector {sel.name!r}", line)


def _from_csv(cfg: Config, path: str, which: str, d: int):
    from .io import read_snapshot_csv
    p = Path(path)
    if not p.is_absolute() and cfg.path is not None:
        p = cfg.path.parent / p
    X, U, V = read_snapshot_csv(p)
    vals = U if which == "u0" else V
    if X.shape[1] != d:
        raise ValueError(f"snapshot dimension {X.shape[1]} does not match d = {d}")
    if d == 1:
        order = np.argsort(X[:, 0])
        xs, ys = X[order, 0], vals[order, 0]
        return lambda P: np.interp(P[:, 0], xs, ys, left=0.0, right=0.0)[:, None]
    from scipy.interpolate import LinearNDInterpolator
    interp = LinearNDInterpolator(X, vals, fill_value=0.0)
    return lambda P: np.asarray(interp(P), float).reshape(len(P), d)


def forcing_selector(cfg: Config) -> Selector:
    return parse_selector(cfg.get("forcing", "b"), cfg.line_of("forcing", "b"))


def constant_forcing(sel: Selector, d: int, line: int = 0):
    try:
        vec = np.asarray(_floats(" ".join(sel.args)), float)
    except ValueError as exc:
        raise ConfigError(f"constant forcing: {exc}", line) from None
    if vec.shape != (d,):
        raise ConfigError(f"constant forcing needs {d} components", line)
    return lambda t, X: np.broadcast_to(vec, (len(X), d)).copy()


def format_float(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else str(x)
