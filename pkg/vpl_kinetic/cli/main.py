"""The ``vpl`` command line: ``run``, ``check`` and ``plotdata``.

Exit codes: 0 success, 2 configuration error (including unreadable
checkpoint files and degenerate geometry), 3 numerical failure (including
diagnostics that cannot be evaluated), 4 failed checks.
"""
import argparse
import logging
import math
from pathlib import Path
import sys

import numpy as np
import yaml

from .. import __version__, io
from ..checks import SUITES, assert_passed, run_suite
from ..config import load_config
from ..diagnostics import (
    Monitor,
    decay_fit,
    macro_micro_report,
    max_macro_micro_ratio,
    theta_label,
    timeseries_columns,
)
from ..errors import (
    CheckFailure,
    ConfigError,
    DiagnosticsError,
    FormatError,
    GeometryError,
    NumericalError,
    VPLError,
)
from ..field import flux_change
from ..landau import KernelTable
from ..solver import Simulation, resume, run

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECKS = 4

TOLERANCES = {
    "mass_drift": 1e-8,
    "energy_drift": 1e-4,
    "flux_change": 1e-10,
    "min_F": -1e-12,
    "w_ripple": 1e-2,
    "entropy_ripple": 1e-6,
}


def _parse_assignment(text):
    key, sep, value = text.partition("=")
    section, dot, name = key.partition(".")
    if not sep or not dot:
        raise ConfigError("Invalid --set value (expected section.key=value): " + text)
    return section, name, value


def _overrides(assignments):
    updates = {}
    for text in assignments or ():
        section, name, value = _parse_assignment(text)
        updates.setdefault(section, {})[name] = yaml.safe_load(value)
    return updates


def _relative_drift(values, scale):
    values = np.asarray(values, dtype=float)
    drift = float(np.max(np.abs(values - values[0]))) if values.size else 0.0
    return drift / scale if scale > 0 else drift


def _ripple(t, values, t_min, relative):
    """Largest increase between consecutive samples after ``t_min``."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = t > t_min
    values = values[keep]
    if values.size < 2:
        return 0.0
    rise = np.diff(values)
    if relative:
        base = np.abs(values[:-1])
        rise = np.where(base > 0, rise / np.where(base > 0, base, 1.0), 0.0)
    return float(max(np.max(rise), 0.0))


def build_summary(cfg, sim, result):
    """Fitted constants, conservation drifts and pass/fail flags of a run."""
    records = result.records
    first = records[0]
    thetas = cfg["diagnostics"]["thetas"]
    initial = sim.initial_values
    grid, mesh = sim.grid, sim.mesh
    volumes = mesh.volumes
    mass_scale = float(np.sum(volumes * grid.integrate(grid.sqrt_mu * np.abs(initial))))
    energy_scale = float(
        np.sum(volumes * grid.integrate(grid.speed_sq * grid.sqrt_mu * np.abs(initial)))
    )
    energy_scale += first.field_energy
    t = [r.t for r in records]
    theta0 = thetas[0]
    w_series = [r.W[theta0] for r in records]
    entropies = [r.entropy for r in records]
    energies = [r.total_energy for r in records]
    measured = {
        "mass_drift": _relative_drift([r.mass for r in records], mass_scale),
        "energy_drift": _relative_drift(energies, energy_scale),
        "flux_change": flux_change(result.flux_history),
        "min_F": min(r.min_F for r in records),
        "w_ripple": _ripple(t, w_series, 1.0, relative=True),
        "entropy_ripple": None,
    }
    if all(h is not None for h in entropies):
        measured["entropy_ripple"] = _ripple(t, entropies, -math.inf, relative=False)
    flags = {}
    for name, value in measured.items():
        if value is None:
            continue
        bound = TOLERANCES[name]
        flags[name] = bool(value >= bound if name == "min_F" else value <= bound)
    try:
        fit = decay_fit(t, w_series)
        decay = {"eps0": fit.eps0, "k": fit.k, "residual": fit.residual}
        flags["decay"] = bool(fit.k > 0 and not fit.flagged)
    except DiagnosticsError as error:
        LOGGER.info("decay fit skipped: %s", error)
        decay = {"eps0": None, "k": None, "residual": None}
    windows = []
    try:
        windows = macro_micro_report(records, 1.0)
    except DiagnosticsError as error:
        LOGGER.info("macro-micro report skipped: %s", error)
    contraction = result.contraction
    return {
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "scenario": cfg.scenario,
        "mode": sim.config.mode,
        "dt": sim.dt,
        "n_steps": sim.n_steps,
        "lambda_max": sim.lambda_max,
        "collision_substeps": result.substeps,
        "dt_halvings": result.halvings,
        "picard_iterations_max": max(result.picard_iterations, default=0),
        "picard_contraction_max": max(contraction) if contraction else None,
        "splitting_error": sim.splitting_error(result.final),
        "decay_fit": decay,
        "macro_micro_ratio_max": max_macro_micro_ratio(windows),
        "macro_micro_windows": [
            {"start": w.start, "end": w.end, "ratio": w.ratio} for w in windows
        ],
        "measured": measured,
        "tolerances": TOLERANCES,
        "flags": flags,
        "failed_checks": sorted(name for name, ok in flags.items() if not ok),
        "final": {
            "t": result.final.t,
            "step_index": result.final.step_index,
            "W_theta_{}".format(theta_label(theta0)): w_series[-1],
        },
    }


def run_scenario(cfg, output_dir, resume_from=None):
    """Execute one configured run and write its artifacts.

    :returns: the summary mapping
    """
    output = Path(output_dir)
    output.mkdir(parents=True, exist_ok=True)
    cfg.write(output.joinpath("config.resolved.yml"))
    landau = cfg["landau"]
    grid = cfg.make_grid()
    table = KernelTable.cached(
        grid,
        landau["gamma"],
        landau["origin_rule"],
        cache_dir=landau["cache_dir"],
        workers=landau["workers"],
    )
    sim = Simulation(grid, cfg.make_mesh(), table, cfg.solver_config())
    diagnostics = cfg["diagnostics"]
    monitor = Monitor(
        sim.operators,
        diagnostics["thetas"],
        diagnostics["field_weight"],
        diagnostics["symmetry_tol"],
    )
    state = resume(sim, resume_from) if resume_from else None
    result = run(sim, monitor, state, checkpoint_dir=output)
    columns = timeseries_columns(diagnostics["thetas"])
    io.write_timeseries(
        output.joinpath("timeseries.csv"), columns, [r.as_row() for r in result.records]
    )
    summary = build_summary(cfg, sim, result)
    io.write_summary(output.joinpath("summary.json"), summary)
    return summary


def cmd_run(args):
    cfg = load_config(args.config, overrides=_overrides(args.set))
    output = args.output or cfg["output"]["directory"]
    summary = run_scenario(cfg, output, args.resume)
    print("Wrote {}".format(output))
    if summary["failed_checks"]:
        raise CheckFailure("failed checks: " + ", ".join(summary["failed_checks"]))
    return EXIT_OK


def cmd_check(args):
    results = run_suite(args.suite, n_axis=args.n_axis, seed=args.seed)
    for result in results:
        print(result.describe())
    assert_passed(results)
    return EXIT_OK


def resolve_quantity(columns, quantity):
    """Map a quantity name onto a CSV column.

    ``W_theta`` style names pick the first theta column.
    """
    if quantity in columns:
        return quantity
    prefix = quantity + "_"
    matches = [c for c in columns if c.startswith(prefix) and not c.endswith("_flag")]
    if matches:
        return matches[0]
    raise ConfigError(
        "Unknown quantity: {} (available: {})".format(
            quantity, ", ".join(c for c in columns if not c.endswith("_flag"))
        )
    )


def plotdata(run_dir, quantity, log=False):
    """Return ``(header, rows)`` of ``t``, the quantity and its flag column."""
    path = Path(run_dir).joinpath("timeseries.csv")
    if not path.exists():
        raise ConfigError("No timeseries.csv in {}".format(run_dir))
    columns, rows = io.read_timeseries(path)
    name = resolve_quantity(columns, quantity)
    picks = ["t", name]
    flag = name + "_flag"
    if flag in columns:
        picks.append(flag)
    index = [columns.index(c) for c in picks]
    out = []
    for row in rows:
        values = [row[i] for i in index]
        if log and values[1] not in ("", "nan"):
            value = float(values[1])
            values[1] = io.format_value(math.log(value) if value > 0 else float("nan"))
        out.append(values)
    header = list(picks)
    if log:
        header[1] = "log_" + name
    return header, out


def cmd_plotdata(args):
    header, rows = plotdata(args.run_dir, args.quantity, args.log)
    lines = [",".join(header)] + [",".join(row) for row in rows]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def make_parser():
    parser = argparse.ArgumentParser(
        prog="vpl", description="Vlasov-Poisson-Landau near-Maxwellian simulator."
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    run_parser = commands.add_parser("run", help="run a scenario")
    run_parser.add_argument("config", help="bundled scenario name or YAML path")
    run_parser.add_argument("-o", "--output", default=None, help="output directory")
    run_parser.add_argument(
        "--resume", default=None, metavar="CHECKPOINT", help="continue a checkpoint"
    )
    run_parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config value (use --set multiple times)",
    )
    run_parser.set_defaults(handler=cmd_run)

    check_parser = commands.add_parser("check", help="run an invariant suite")
    check_parser.add_argument("suite", choices=sorted(SUITES) + ["all"])
    check_parser.add_argument("--n-axis", type=int, default=None, metavar="N")
    check_parser.add_argument("--seed", type=int, default=0)
    check_parser.set_defaults(handler=cmd_check)

    plot_parser = commands.add_parser("plotdata", help="extract a CSV column")
    plot_parser.add_argument("run_dir")
    plot_parser.add_argument("quantity")
    plot_parser.add_argument("--log", action="store_true", help="natural log")
    plot_parser.add_argument("-o", "--output", default=None)
    plot_parser.set_defaults(handler=cmd_plotdata)
    return parser


def main(args=None):
    args = make_parser().parse_args(args)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ConfigError, FormatError, GeometryError) as error:
        LOGGER.error("%s", error)
        return EXIT_CONFIG
    except (NumericalError, DiagnosticsError) as error:
        LOGGER.error("%s", error)
        return EXIT_NUMERICAL
    except CheckFailure as error:
        LOGGER.error("%s", error)
        return EXIT_CHECKS
    except VPLError as error:
        LOGGER.error("%s", error)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
