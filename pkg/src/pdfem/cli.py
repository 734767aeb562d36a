"""Command-line entry point: ``pdfem <subcommand> --config FILE``."""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .assembly import Discretization, SolverError
from .config import (Config, ConfigError, constant_forcing, forcing_selector, initial_condition,
                     parse_config)
from .dynamics import InstabilityError, RunConfig, energy_stability_check, run
from .geometry import MeshError, build_uniform_mesh
from .io import ENERGY_HEADER, snapshot_header, snapshot_rows, write_csv, write_kv
from .potential import CalibrationError, calibrate, lame_and_gc, potential_constants
from .stability import EstimateError, rayleigh_sup
from .verification import (MmsForcing, SweepError, SweepSettings, apriori_bound, converge_sweep,
                           error_Ek, sine_case, time_for_exponent)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_UNSTABLE = 0, 2, 3, 4
SUBCOMMANDS = ("run", "calibrate", "cfl", "converge", "estimate", "mms", "print-config")


class Context:
    def __init__(self, cfg: Config, out: Path, stride: int | None):
        self.cfg = cfg
        self.out = out
        self.stride = stride or cfg.get("output", "stride")
        self.summary: dict = {}


# --- shared builders ---------------------------------------------------------

def _need(cfg: Config, *sections):
    for s in sections:
        if not cfg.has(s):
            raise ConfigError(f"missing required section [{s}]")


def build_discretization(cfg: Config) -> Discretization:
    _need(cfg, "domain", "discretization", "material")
    box = cfg.box()
    try:
        mesh = build_uniform_mesh(box, cfg.require("discretization", "h"))
    except MeshError as exc:
        raise ConfigError(str(exc), cfg.line_of("discretization", "h")) from None
    spec = cfg.material_spec(box.d)
    return Discretization.build(mesh, spec, cfg.require("discretization", "epsilon"),
                                cfg.get("discretization", "m"))


def manufactured_case(cfg: Config, case_id: str):
    d = 1 if case_id == "sine1d" else 2
    if cfg.has("domain") and cfg.d != d:
        raise ConfigError(f"case {case_id} needs d = {d}", cfg.line_of("domain", "d"))
    box = cfg.box()
    if np.any(box.lower != 0) or np.any(box.upper != 1):
        raise ConfigError("manufactured cases are defined on the unit box", cfg.line_of("domain", "box"))
    return sine_case(d, cfg.require("discretization", "epsilon"), cfg.material_spec(d),
                     cfg.get("verification", "amplitude"), cfg.get("verification", "omega"))


def _mms_case_id(cfg: Config) -> str:
    sel = forcing_selector(cfg)
    if sel.name == "mms":
        return sel.args[0]
    return "sine1d" if cfg.d == 1 else "sine2d"


def _integral_steps(T: float, dt: float, line: int) -> None:
    ratio = T / dt
    if abs(ratio - round(ratio)) > 1e-8 * max(1.0, ratio):
        raise ConfigError(f"T/dt = {ratio!r} must be an integer", line)


# --- subcommands ---------------------------------------------------------------

def cmd_run(ctx: Context) -> int:
    cfg = ctx.cfg
    disc = build_discretization(cfg)
    form = cfg.get("discretization", "form")
    model = cfg.get("discretization", "model")
    mass_mode = cfg.get("discretization", "mass_mode")
    T = cfg.require("discretization", "T")
    s = ctx.summary
    s.update(form=form, model=model, mass_mode=mass_mode, n_nodes=disc.mesh.n_nodes,
             lattice_m=disc.table.m, backend=kernels.BACKEND)

    dt = cfg.get("discretization", "dt")
    if dt is None:
        if model != "linear":
            raise ConfigError("dt is required for nonlinear runs", cfg.line_of("discretization"))
        est = rayleigh_sup(disc, "lumped" if form == "strong" else mass_mode)
        n = math.ceil(T / (0.9 * est.dt_max))
        dt = T / n
        if not dt < 1.0:
            raise ConfigError("automatic dt is not below 1; reduce T")
        s.update(dt_source="cfl", dt_max=est.dt_max, mu_max=est.mu_max)
    else:
        _integral_steps(T, dt, cfg.line_of("discretization", "dt"))
        s.update(dt_source="config", dt_max=None)
    s["dt"] = dt

    sel = forcing_selector(cfg)
    u0 = initial_condition(cfg, "u0", disc.mesh.box)
    v0 = initial_condition(cfg, "v0", disc.mesh.box)
    body = None
    if sel.name == "constant":
        body = constant_forcing(sel, disc.d, cfg.line_of("forcing", "b"))
    elif sel.name == "mms":
        case = manufactured_case(cfg, sel.args[0])
        body = MmsForcing(case, cfg.get("verification", "oracle_factor") * disc.table.m,
                          linear=model == "linear")
        if not cfg.has("ic", "u0") or cfg.get("ic", "u0") == "mms":
            u0 = case.u0
        if not cfg.has("ic", "v0") or cfg.get("ic", "v0") == "mms":
            v0 = case.v0
    rc = RunConfig(T=T, dt=dt, form=form, model=model, u0=u0, v0=v0, body=body,
                   stride=ctx.stride, mass_mode=mass_mode)
    try:
        res = run(disc, rc)
        status = "ok"
    except InstabilityError as exc:
        res = exc.result
        status = "unstable"
        s.update(unstable_step=exc.step, max_abs_u=exc.max_abs)
    emit_run(ctx, res)
    s.update(status=status, steps=res.steps_done, final_time=res.steps_done * dt,
             wall_time=res.wall_time)
    if res.energy is not None and status == "ok":
        chk = energy_stability_check(res.energy)
        s.update(energy_check="pass" if chk.passed else "fail", energy_worst_margin=chk.worst_margin)
    return EXIT_OK if status == "ok" else EXIT_UNSTABLE


def emit_run(ctx: Context, res) -> None:
    mesh = res.disc.mesh
    rows = []
    for snap in res.snapshots:
        rows.extend(snapshot_rows(snap.step, snap.time, mesh.nodes, snap.u, snap.v))
    write_csv(ctx.out / "snapshots.csv", snapshot_header(mesh.d), rows)
    if res.energy is not None:
        write_csv(ctx.out / "energy.csv", ENERGY_HEADER, list(res.energy.rows()))


def cmd_calibrate(ctx: Context) -> int:
    cfg = ctx.cfg
    _need(cfg, "material")
    d = cfg.d
    j_kind = cfg.get("material", "j_kind")
    spec = cfg.material_spec(d)
    if cfg.has("material", "lambda"):
        fp0, finf = calibrate(cfg.values["material"]["lambda"], cfg.values["material"]["g_c"], d, j_kind)
        lam, gc = cfg.values["material"]["lambda"], cfg.values["material"]["g_c"]
    else:
        fp0, finf = spec.f_prime_0, spec.f_inf
        lam, gc = lame_and_gc(fp0, finf, d, j_kind)
    k = potential_constants(spec)
    out = dict(d=d, j_kind=j_kind, c=spec.c, beta=spec.beta, f_prime_0=fp0, f_inf=finf,
               **{"lambda": lam}, g_c=gc, r_bar=k.r_bar, M_d=k.M_d, J_bar_1=k.J_bar_1,
               C1=k.C1, C2=k.C2, C3=k.C3, C4=k.C4, L1=k.L1)
    write_kv(ctx.out / "calibration.txt", out)
    ctx.summary.update(status="ok")
    return EXIT_OK


def cmd_cfl(ctx: Context) -> int:
    cfg = ctx.cfg
    disc = build_discretization(cfg)
    form = cfg.get("discretization", "form")
    mass_mode = "lumped" if form == "strong" else cfg.get("discretization", "mass_mode")
    est = rayleigh_sup(disc, mass_mode)
    write_kv(ctx.out / "cfl.txt", dict(mu_max=est.mu_max, dt_max=est.dt_max, iterations=est.iterations,
                                       residual=est.residual, mass_mode=mass_mode))
    ctx.summary.update(status="ok", dt_max=est.dt_max)
    return EXIT_OK


def _sweep_settings(cfg: Config) -> SweepSettings:
    T = cfg.require("discretization", "T")
    dt = cfg.require("discretization", "dt")
    return SweepSettings(T=T, dt=dt, h=cfg.require("discretization", "h"),
                         form=cfg.get("discretization", "form"), model=cfg.get("discretization", "model"),
                         stride=1, m=cfg.get("discretization", "m"),
                         oracle_factor=cfg.get("verification", "oracle_factor"))


def cmd_converge(ctx: Context) -> int:
    cfg = ctx.cfg
    _need(cfg, "discretization", "material", "verification")
    case = manufactured_case(cfg, _mms_case_id(cfg))
    vary = cfg.get("verification", "vary")
    values = cfg.require("verification", "values")
    if len(values) < 3:
        raise ConfigError("a rate fit needs at least 3 values", cfg.line_of("verification", "values"))
    base = _sweep_settings(cfg)
    for v in values:
        if vary == "dt":
            _integral_steps(base.T, v, cfg.line_of("verification", "values"))
    if vary == "h":
        _integral_steps(base.T, base.dt, cfg.line_of("discretization", "dt"))
    try:
        rep = converge_sweep(case, base, vary, values)
    except SweepError as exc:
        ctx.summary.update(status="unstable", error=str(exc))
        return EXIT_UNSTABLE
    write_csv(ctx.out / "converge.csv", ["resolution", "sup_Ek"], rep.rows())
    write_kv(ctx.out / "converge_summary.txt",
             dict(vary=vary, slope=rep.slope, intercept=rep.intercept, r2=rep.r2,
                  pre_asymptotic=rep.pre_asymptotic))
    ctx.summary.update(status="ok", slope=rep.slope, r2=rep.r2)
    return EXIT_OK


def cmd_mms(ctx: Context) -> int:
    cfg = ctx.cfg
    _need(cfg, "discretization", "material")
    case = manufactured_case(cfg, _mms_case_id(cfg))
    s = _sweep_settings(cfg)
    _integral_steps(s.T, s.dt, cfg.line_of("discretization", "dt"))
    mesh = build_uniform_mesh(case.box, s.h)
    disc = Discretization.build(mesh, case.spec, case.epsilon, s.m)
    body = MmsForcing(case, s.oracle_factor * disc.table.m, linear=s.model == "linear")
    rc = RunConfig(T=s.T, dt=s.dt, form=s.form, model=s.model, u0=case.u0, v0=case.v0, body=body,
                   stride=ctx.stride, record_energy=False)
    try:
        res = run(disc, rc)
    except InstabilityError as exc:
        ctx.summary.update(status="unstable", unstable_step=exc.step)
        return EXIT_UNSTABLE
    rows = [(snap.step, snap.time, error_Ek(mesh, snap.u, snap.v, case, snap.time)) for snap in res.snapshots]
    write_csv(ctx.out / "mms.csv", ["step", "time", "E_k"], rows)
    emit_run(ctx, res)
    ctx.summary.update(status="ok", case=case.name, sup_Ek=max(r[2] for r in rows), steps=res.steps_done)
    return EXIT_OK


def cmd_estimate(ctx: Context) -> int:
    cfg = ctx.cfg
    _need(cfg, "estimate")
    get = lambda k: cfg.get("estimate", k)  # noqa: E731
    eps = get("epsilon")
    if eps is None:
        if not cfg.has("discretization", "epsilon"):
            raise ConfigError("[estimate] needs epsilon", cfg.line_of("estimate"))
        eps = cfg.values["discretization"]["epsilon"]
    h = get("h")
    if h is None:
        if not cfg.has("discretization", "h"):
            raise ConfigError("[estimate] needs h", cfg.line_of("estimate"))
        h = cfg.values["discretization"]["h"]
    if get("L1") == "computed":
        L1 = potential_constants(cfg.material_spec()).L1
        if L1 is None:
            raise ConfigError("L1 is infinite for this kernel in 1D; give a number", cfg.line_of("estimate", "L1"))
    else:
        L1 = float(get("L1"))
    T = get("T") if cfg.has("estimate", "T") else time_for_exponent(get("exponent"), eps, L1)
    b = apriori_bound(T, eps, h, get("dt"), get("C_t"), get("sup_u_H2"), L1)
    out = dict(T=T, epsilon=eps, h=h, dt=get("dt"), L1=L1, exponent=b.exponent, growth=b.growth,
               growth_times_exponent=b.growth * b.exponent, temporal_term=b.temporal_term,
               spatial_term=b.spatial_term, total=b.total)
    write_kv(ctx.out / "estimate.txt", out)
    ctx.summary.update(status="ok", total=b.total)
    return EXIT_OK


def cmd_print_config(ctx: Context) -> int:
    sys.stdout.write(ctx.cfg.to_text())
    ctx.summary.update(status="ok")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "calibrate": cmd_calibrate, "cfl": cmd_cfl, "converge": cmd_converge,
            "estimate": cmd_estimate, "mms": cmd_mms, "print-config": cmd_print_config}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdfem", description="Peridynamics finite element solver")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="configuration file")
    p.add_argument("--out", help="output directory (overrides [output] directory)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for force evaluation")
    p.add_argument("--deterministic", action="store_true", help="sequential reductions")
    p.add_argument("--stride", type=int, help="snapshot stride (overrides [output] stride)")
    return p


def dispatch(command: str, ctx: Context) -> int:
    return COMMANDS[command](ctx)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.stride is not None and args.stride < 1:
        print("error: --stride must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else None
    t0 = time.perf_counter()
    summary = {"command": args.command}
    code = EXIT_OK
    ctx = None
    try:
        cfg = parse_config(args.config)
        out = out or Path(cfg.get("output", "directory"))
        if not out.is_absolute() and not args.out and cfg.path is not None and cfg.has("output", "directory"):
            out = cfg.path.parent / out
        ctx = Context(cfg, out, args.stride)
        # threads are used unless a flag or the config asks for sequential reductions
        kernels.set_threads(args.threads)
        kernels.set_deterministic(args.deterministic or args.threads <= 1
                                  or bool(cfg.get("discretization", "deterministic", False)))
        code = dispatch(args.command, ctx)
        summary.update(ctx.summary)
    except ConfigError as exc:
        code = EXIT_CONFIG
        summary.update(status="config_error", error=str(exc))
    except CalibrationError as exc:
        code = EXIT_CONFIG
        summary.update(status="config_error", error=str(exc))
    except InstabilityError as exc:
        code = EXIT_UNSTABLE
        summary.update(status="unstable", error=str(exc))
    except (SolverError, EstimateError, FloatingPointError, np.linalg.LinAlgError) as exc:
        code = EXIT_SOLVER
        summary.update(status="solver_error", error=str(exc))
    if ctx is not None:
        summary = {**summary, **{k: v for k, v in ctx.summary.items() if k not in summary}}
    summary["exit_code"] = code
    summary["total_wall_time"] = time.perf_counter() - t0
    if code != EXIT_OK and "error" in summary:
        print(f"error: {summary['error']}", file=sys.stderr)
    if args.command != "print-config" or code != EXIT_OK:
        write_kv((out or Path("out")) / "summary.txt", summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
