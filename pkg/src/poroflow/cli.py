"""Command-line scenario runner and configuration handling.

Exposes four subcommands:

``converge``
    Simultaneous space-time refinement study against the manufactured
    solution (tau = h), one convergence table CSV per scheme.
``longtime``
    Long-horizon accuracy study on a fixed mesh: per-step error and
    relative-energy-error series plus a max-over-time summary.
``q5spot``
    Quarter-five-spot robustness study on the cut-corner domain: per
    (scheme, tau) outcome summary, saturation snapshots and a diagonal
    profile.
``run``
    Single configured run with full diagnostics output.

Configuration is a flat ``key = value`` text file (``#`` starts a comment).
Unknown keys are rejected.  Every output directory receives ``config.txt``
with the fully resolved configuration, so each result is reproducible from
its own output directory.  Result CSVs are byte-identical across re-runs;
the streamed per-step log contains wall-clock times and is exempt.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import mms
from .diagnostics import (
    build_energy_ledger,
    convergence_rates,
    energy_error_series,
    error_series,
    write_csv_rows,
    _FLOAT_FMT,
)
from .mesh import build_q5spot_mesh, build_rect_mesh
from .physics import mms_fluid_model, q5spot_fluid_model, validate_model
from .spatial import (
    BoundaryConditions,
    evaluate_at_points,
    fe_space,
    interpolate,
    l2_error,
)
from .timestepping import ProblemSetup, SchemeConfig, run_simulation, scheme_from_name
from .vtkio import write_field, write_mesh

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config_text",
    "resolve_config",
    "manufactured_problem",
    "q5spot_problem",
    "converge_study",
    "main",
]

log = logging.getLogger("poroflow")

SCHEME_NAMES = ("mp", "be", "tl1", "tl2")


class ConfigError(Exception):
    """Invalid configuration: unknown key, bad type or out-of-range value."""


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_schemes(text):
    names = tuple(v.strip().lower() for v in text.split(",") if v.strip())
    for name in names:
        if name not in SCHEME_NAMES:
            raise ValueError(f"unknown scheme {name!r}, expected one of {SCHEME_NAMES}")
    return names


@dataclass
class RunConfig:
    """Fully resolved scenario configuration (see SCHEMA for the key list)."""

    scenario: str = "custom"
    schemes: tuple = SCHEME_NAMES
    scheme: str = "mp"
    theta: float = 0.5
    tau: float = 0.0625
    taus: tuple = (0.05, 1.0)
    mesh: int = 16
    mesh_levels: tuple = (2, 4, 8, 16, 32, 64, 128)
    degree: int = 1
    t_final: float = 1.0
    tol: float = 1e-5
    max_iters: int = 50
    model: str = "mms"
    out: str = "out"
    vtk: bool = False
    snapshot_times: tuple = (250.0, 500.0, 750.0)
    recover_pressure: bool = True
    profile_points: int = 201


# key -> (parser, validator, description).  Validators raise ValueError.
def _positive(v):
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _unit_interval(v):
    if not 0 < v <= 1:
        raise ValueError("must lie in (0, 1]")
    return v


def _at_least(lo):
    def check(v):
        if v < lo:
            raise ValueError(f"must be >= {lo}")
        return v

    return check


def _choice(*allowed):
    def check(v):
        if v not in allowed:
            raise ValueError(f"must be one of {allowed}")
        return v

    return check


def _nonempty(vs):
    if not vs:
        raise ValueError("needs at least one entry")
    return vs


def _positive_entries(vs):
    _nonempty(vs)
    for v in vs:
        _positive(v)
    return vs


SCHEMA = {
    "scenario": (str.strip, _choice("converge", "longtime", "q5spot", "custom"),
                 "study kind; normally set by the subcommand"),
    "schemes": (_parse_schemes, _nonempty,
                "comma list of schemes for sweep scenarios (mp,be,tl1,tl2)"),
    "scheme": (str.strip, _choice(*SCHEME_NAMES, "theta"),
               "single scheme for custom runs"),
    "theta": (float, _unit_interval, "theta-point for scheme = theta"),
    "tau": (float, _positive, "time step (custom runs)"),
    "taus": (_parse_floats, _positive_entries, "comma list of time steps (sweeps)"),
    "mesh": (int, _at_least(2), "cells per side"),
    "mesh_levels": (_parse_ints, _positive_entries,
                    "comma list of cells-per-side for the convergence sweep"),
    "degree": (int, _choice(1, 2), "polynomial degree of both fields"),
    "t_final": (float, _positive, "final time"),
    "tol": (float, _positive, "subiteration stopping tolerance"),
    "max_iters": (int, _at_least(1), "subiteration cap"),
    "model": (str.strip, _choice("mms", "q5spot"), "fluid model / problem family"),
    "out": (str.strip, _nonempty, "output directory"),
    "vtk": (_parse_bool, lambda v: v, "write saturation snapshots"),
    "snapshot_times": (_parse_floats, _positive_entries,
                       "snapshot times for vtk output"),
    "recover_pressure": (_parse_bool, lambda v: v,
                         "recover whole-level pressures (extra elliptic solve)"),
    "profile_points": (int, _at_least(2), "sample count for the diagonal profile"),
}

# Scenario-specific defaults layered over the dataclass defaults.
SCENARIO_DEFAULTS = {
    "converge": {"model": "mms", "degree": 1, "t_final": 1.0, "out": "out/converge"},
    "longtime": {"model": "mms", "degree": 1, "t_final": 20.0, "mesh": 64,
                 "taus": (0.05, 1.0), "out": "out/longtime"},
    "q5spot": {"model": "q5spot", "degree": 2, "t_final": 750.0, "mesh": 38,
               "taus": (1.0, 0.5, 0.25), "vtk": True, "recover_pressure": False,
               "out": "out/q5spot"},
    "custom": {},
}


def parse_config_text(text):
    """Parse flat ``key = value`` lines into a raw string dict.

    Blank lines and ``#`` comments are skipped; duplicate keys and lines
    without ``=`` raise :class:`ConfigError`.
    """
    items = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    return items


def resolve_config(scenario, file_items=None, overrides=None):
    """Layer defaults, config-file values and CLI overrides into a RunConfig.

    Precedence: dataclass defaults < scenario defaults < config file < CLI
    flags.  Unknown keys and schema violations raise :class:`ConfigError`.
    """
    values = {"scenario": scenario}
    values.update(SCENARIO_DEFAULTS[scenario])
    for key, raw in (file_items or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        parse, validate, _ = SCHEMA[key]
        try:
            values[key] = validate(parse(raw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"key {key!r}: {exc}") from exc
    if file_items and "scenario" in file_items and values["scenario"] != scenario:
        raise ConfigError(
            f"config requests scenario {values['scenario']!r} but the "
            f"{scenario!r} command was invoked")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        _, validate, _ = SCHEMA[key]
        try:
            values[key] = validate(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"key {key!r}: {exc}") from exc
    return RunConfig(**values)


def _config_lines(cfg):
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(_FLOAT_FMT.format(x) if isinstance(x, float) else str(x)
                         for x in v)
        elif isinstance(v, float):
            v = _FLOAT_FMT.format(v)
        out.append(f"{f.name} = {v}")
    return out


def write_config_echo(cfg, out_dir):
    """Drop the resolved configuration into the output directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text("\n".join(_config_lines(cfg)) + "\n")


def _write_model_report(model, out_dir):
    report = validate_model(model)
    (Path(out_dir) / "model_validation.txt").write_text(report.describe() + "\n")
    if not report.ok:
        log.warning("model validation flagged issues:\n%s", report.describe())


# ---------------------------------------------------------------------------
# problem factories


def manufactured_problem(n, degree, t_final=1.0):
    """Unit-square manufactured problem on an n-by-n mesh."""
    case = mms.ManufacturedCase(t_final=t_final)
    space = fe_space(build_rect_mesh(1.0, 1.0, n, n), degree)
    problem = ProblemSetup(
        space=space,
        model=case.model,
        bc=case.boundary_conditions(),
        source_q=case.source_q,
        source_qa=case.source_qa,
        p0=interpolate(space, case.exact_p, 0.0),
        s0=interpolate(space, case.exact_s, 0.0),
        t_final=t_final,
    )
    return space, problem, case


def q5spot_problem(n, degree, t_final=750.0):
    """Quarter-five-spot problem: cut-corner domain, pressure-driven flow.

    Injection corner gamma1 holds p = 3e5 Pa and s_a = 0.7; production
    corner gamma4 holds p = 1e5 Pa with free capillary outflow; all other
    boundary segments are no-flow.  Initial state p = 1e5 Pa, s_a = 0.2.
    """
    model = q5spot_fluid_model()
    space = fe_space(build_q5spot_mesh(n), degree)
    bc = BoundaryConditions(
        p_dirichlet={"gamma1": 3.0e5, "gamma4": 1.0e5},
        s_dirichlet={"gamma1": 0.7},
        s_outflow=("gamma4",),
    )
    zero = lambda x, y, t: np.zeros_like(x)
    problem = ProblemSetup(
        space=space,
        model=model,
        bc=bc,
        source_q=zero,
        source_qa=zero,
        p0=np.full(space.n_dofs, 1.0e5),
        s0=np.full(space.n_dofs, 0.2),
        t_final=t_final,
    )
    return space, problem


def _problem_for(cfg):
    if cfg.model == "q5spot":
        space, problem = q5spot_problem(cfg.mesh, cfg.degree, cfg.t_final)
        return space, problem, None
    return manufactured_problem(cfg.mesh, cfg.degree, cfg.t_final)


def _scheme_config(cfg, name, tau):
    if name == "theta":
        return SchemeConfig(kind="theta", tau=tau, theta=cfg.theta,
                            tol=cfg.tol, max_iters=cfg.max_iters)
    return scheme_from_name(name, tau, tol=cfg.tol, max_iters=cfg.max_iters)


def _steps_log(out_dir, label):
    """Streaming per-step CSV log; returns (callback, close)."""
    path = Path(out_dir) / f"steps_{label}.csv"
    fh = open(path, "w")
    fh.write("step,t,iterations,converged,max_increment,wall_time\n")

    def callback(report):
        incs = list(report.p_increments) + list(report.s_increments)
        max_inc = max(incs) if incs else 0.0
        fh.write(f"{report.step},{_FLOAT_FMT.format(report.t_end)},"
                 f"{report.iterations},{int(report.converged)},"
                 f"{_FLOAT_FMT.format(max_inc)},"
                 f"{_FLOAT_FMT.format(report.wall_time)}\n")

    return callback, fh.close


# ---------------------------------------------------------------------------
# commands


def converge_study(scheme_name, mesh_levels, degree=1, tol=1e-5, max_iters=50,
                   t_final=1.0):
    """Tau = h refinement study for one scheme.

    Returns (rows, outcomes): convergence-table rows (NaN errors where a
    level failed) and the per-level outcome strings.
    """
    taus, dofs, errs_pl, errs_sa, outcomes = [], [], [], [], []
    for n in mesh_levels:
        tau = 1.0 / n
        space, problem, case = manufactured_problem(n, degree, t_final)
        cfg = scheme_from_name(scheme_name, tau, tol=tol, max_iters=max_iters)
        try:
            result = run_simulation(problem, cfg)
            outcome = result.outcome
        except Exception:  # noqa: BLE001 - study records failures and continues
            result, outcome = None, "error"
        taus.append(tau)
        dofs.append(space.n_dofs)
        if result is not None and outcome == "completed":
            errs_pl.append(l2_error(space, result.pressures[-1], case.exact_p,
                                    t_final))
            errs_sa.append(l2_error(space, result.saturations[-1], case.exact_s,
                                    t_final))
        else:
            errs_pl.append(float("nan"))
            errs_sa.append(float("nan"))
        outcomes.append(outcome)
        log.info("converge %s n=%d: %s", scheme_name, n, outcome)
    return convergence_rates(taus, dofs, errs_pl, errs_sa), outcomes


def _format_table_cells(rows, outcomes):
    """Convergence rows as CSV cells: empty rates on first/failed rows,
    the literal ``failed`` marking failed levels."""

    def fmt(v, fallback):
        return _FLOAT_FMT.format(v) if np.isfinite(v) else fallback

    out = []
    for row, outcome in zip(rows, outcomes):
        failed = outcome != "completed"
        out.append([
            _FLOAT_FMT.format(row.tau), str(row.dofs),
            "failed" if failed else fmt(row.err_pl, "failed"),
            fmt(row.rate_pl, ""),
            "failed" if failed else fmt(row.err_sa, "failed"),
            fmt(row.rate_sa, ""),
        ])
    return out


def cmd_converge(cfg):
    out_dir = Path(cfg.out)
    write_config_echo(cfg, out_dir)
    _write_model_report(mms_fluid_model(), out_dir)
    for name in cfg.schemes:
        rows, outcomes = converge_study(name, cfg.mesh_levels, cfg.degree,
                                        cfg.tol, cfg.max_iters, cfg.t_final)
        write_csv_rows(out_dir / f"converge_{name}.csv",
                       ["tau", "dofs", "err_pl", "rate_pl", "err_sa", "rate_sa"],
                       _format_table_cells(rows, outcomes))
    return 0


def _run_one(problem, scheme_cfg, recover_pressure, out_dir, label):
    callback, close = _steps_log(out_dir, label)
    try:
        result = run_simulation(problem, scheme_cfg,
                                recover_pressure=recover_pressure,
                                step_callback=callback)
    finally:
        close()
    return result


def cmd_longtime(cfg):
    out_dir = Path(cfg.out)
    write_config_echo(cfg, out_dir)
    _write_model_report(mms_fluid_model(), out_dir)
    summary = []
    for name in cfg.schemes:
        for tau in cfg.taus:
            label = f"{name}_tau{_FLOAT_FMT.format(tau)}"
            space, problem, case = _problem_for(cfg)
            result = _run_one(problem, _scheme_config(cfg, name, tau),
                              cfg.recover_pressure, out_dir, label)
            log.info("longtime %s tau=%g: %s", name, tau, result.outcome)
            if result.outcome != "completed":
                summary.append([name, tau, result.outcome, "", "", "", ""])
                continue
            ts, eps, ess = error_series(result, case, space)
            _, ees = energy_error_series(result, case, space)
            write_csv_rows(out_dir / f"series_{label}.csv",
                           ["t", "err_pl", "err_sa", "rel_energy_err"],
                           list(zip(ts, eps, ess, ees)))
            if result.ledger is not None:
                write_csv_rows(
                    out_dir / f"ledger_{label}.csv",
                    ["t", "energy", "denergy", "dissipation", "source_supply",
                     "boundary_supply", "chain_residual", "balance_residual"],
                    result.ledger.rows)
            summary.append([
                name, tau, result.outcome,
                float(np.nanmax(eps)), float(np.max(ess)), float(np.max(ees)),
                float(result.mean_iterations),
            ])
    write_csv_rows(out_dir / "summary.csv",
                   ["scheme", "tau", "outcome", "max_err_pl", "max_err_sa",
                    "max_rel_energy_err", "mean_iterations"],
                   summary)
    return 0


def _diagonal_profile(space, dofs_vec, n_samples, extent=100.0):
    """Samples of a field along the main diagonal, NaN outside the domain."""
    xs = np.linspace(0.0, extent, n_samples)
    pts = np.column_stack([xs, xs])
    vals = evaluate_at_points(space, dofs_vec, pts)
    keep = np.isfinite(vals)
    return xs[keep], vals[keep]


def cmd_q5spot(cfg):
    out_dir = Path(cfg.out)
    write_config_echo(cfg, out_dir)
    _write_model_report(q5spot_fluid_model(), out_dir)
    space0, problem0 = q5spot_problem(cfg.mesh, cfg.degree, cfg.t_final)
    write_mesh(out_dir / "mesh.vtk", space0.mesh)
    if cfg.vtk:
        write_field(out_dir / "sa_initial.vtk", space0, problem0.s0,
                    name="s_a", title="initial saturation")
    summary = []
    for name in cfg.schemes:
        for tau in cfg.taus:
            label = f"{name}_tau{_FLOAT_FMT.format(tau)}"
            space, problem = q5spot_problem(cfg.mesh, cfg.degree, cfg.t_final)
            try:
                result = _run_one(problem, _scheme_config(cfg, name, tau),
                                  cfg.recover_pressure, out_dir, label)
                outcome = result.outcome
            except Exception:  # noqa: BLE001 - robustness study records failures
                result, outcome = None, "error"
            log.info("q5spot %s tau=%g: %s", name, tau, outcome)
            if result is None or outcome != "completed":
                iters = "" if result is None else float(result.mean_iterations)
                summary.append([name, tau, outcome, iters, "", ""])
                continue
            s_final = result.saturations[-1]
            summary.append([name, tau, outcome, float(result.mean_iterations),
                            float(np.min(s_final)), float(np.max(s_final))])
            if cfg.vtk:
                for t_snap in cfg.snapshot_times:
                    idx = int(round(t_snap / tau))
                    if idx >= len(result.times):
                        continue
                    write_field(
                        out_dir / f"sa_{label}_t{_FLOAT_FMT.format(t_snap)}.vtk",
                        space, result.saturations[idx], name="s_a",
                        title=f"saturation at t={t_snap}")
            xs, vals = _diagonal_profile(space, s_final, cfg.profile_points)
            write_csv_rows(out_dir / f"profile_{label}.csv", ["x", "s_a"],
                           list(zip(xs, vals)))
    write_csv_rows(out_dir / "summary.csv",
                   ["scheme", "tau", "outcome", "mean_iterations",
                    "final_min_sa", "final_max_sa"],
                   summary)
    return 0


def cmd_run(cfg):
    out_dir = Path(cfg.out)
    write_config_echo(cfg, out_dir)
    space, problem, case = _problem_for(cfg)
    _write_model_report(problem.model, out_dir)
    label = f"{cfg.scheme}_tau{_FLOAT_FMT.format(cfg.tau)}"
    try:
        result = _run_one(problem, _scheme_config(cfg, cfg.scheme, cfg.tau),
                          cfg.recover_pressure, out_dir, label)
    except ValueError:
        raise  # bad run parameters (e.g. tau not dividing t_final): config error
    except Exception as exc:  # noqa: BLE001 - single run: failure is an error
        log.error("run failed: %s", exc)
        return 1
    log.info("run %s: %s", label, result.outcome)
    if result.outcome != "completed":
        log.error("run did not complete: %s", result.failure_cause)
        return 1
    write_field(out_dir / f"sa_{label}_final.vtk", space,
                result.saturations[-1], name="s_a", title="final saturation")
    if result.pressures[-1] is not None:
        write_field(out_dir / f"pl_{label}_final.vtk", space,
                    result.pressures[-1], name="p_l", title="final pressure")
    if case is not None:
        ts, eps, ess = error_series(result, case, space)
        _, ees = energy_error_series(result, case, space)
        write_csv_rows(out_dir / f"series_{label}.csv",
                       ["t", "err_pl", "err_sa", "rel_energy_err"],
                       list(zip(ts, eps, ess, ees)))
    if result.ledger is not None:
        write_csv_rows(out_dir / f"ledger_{label}.csv",
                       ["t", "energy", "denergy", "dissipation", "source_supply",
                        "boundary_supply", "chain_residual", "balance_residual"],
                       result.ledger.rows)
    return 0


COMMANDS = {
    "converge": cmd_converge,
    "longtime": cmd_longtime,
    "q5spot": cmd_q5spot,
    "run": cmd_run,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="poroflow",
        description="Two-phase porous-media flow studies "
                    "(second-order partitioned midpoint scheme and baselines).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"{name} scenario")
        p.add_argument("--config", type=Path, default=None,
                       help="flat key = value configuration file")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--scheme", type=str, default=None,
                       help="restrict to a single scheme (mp, be, tl1, tl2)")
        p.add_argument("--tau", type=float, default=None, help="time step")
        p.add_argument("--mesh", type=int, default=None, help="cells per side")
        p.add_argument("--degree", type=int, choices=(1, 2), default=None,
                       help="polynomial degree")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = _build_parser().parse_args(argv)
    scenario = args.command if args.command != "run" else "custom"
    try:
        file_items = None
        if args.config is not None:
            file_items = parse_config_text(Path(args.config).read_text())
        overrides = {"out": args.out, "tau": args.tau, "mesh": args.mesh,
                     "degree": args.degree}
        if args.scheme is not None:
            name = args.scheme.strip().lower()
            if name not in SCHEME_NAMES:
                raise ConfigError(f"unknown scheme {name!r}")
            overrides["scheme"] = name
            overrides["schemes"] = (name,)
        cfg = resolve_config(scenario, file_items, overrides)
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError) as exc:
        # construction-stage failures (mesh too coarse for the cutouts,
        # tau not dividing t_final, ...) are configuration errors
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
