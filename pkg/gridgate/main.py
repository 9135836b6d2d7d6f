"""
gridgate command line.

Subcommands:
- validate: rule checks, then load-flow checks, into findings.json
- loadflow: multi-period load flow under nominal demand
- host: PV hosting capacity at one lambda
- sweep: hosting capacity over a list of lambdas (Pareto table)
- export-dgs: interchange file of the grid

Exit codes: 0 clean, 1 findings with error severity, 2 input or
convergence failure, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from .config import Settings, load_settings
from .errors import GridgateError, HostingError, SingularSystemError
from .etl import parse_grid
from .etl.dgs import count_records, export_dgs
from .models import Grid, Phase
from .services.hosting import HostingStudy, fairness_price_frame, pareto_frame
from .services.lf_validation import run_advanced_validation, run_nominal_loadflow
from .services.per_unit import to_per_unit
from .services.profiles import NormalizedCurve, builtin_load_curve, builtin_pv_curve, load_curve
from .services.reports import write_findings, write_frame, write_hosting_summary, write_loadflow
from .services.rules import has_errors, run_basic_validation, sort_findings
from .services.sensitivity import sensitivities_frame

logger = logging.getLogger("gridgate")

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3


def _lambdas(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not values or any(v < 0 or math.isnan(v) for v in values):
        raise argparse.ArgumentTypeError("lambda values must be non-negative numbers")
    return values


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", required=True, help="Grid JSON file or builtin:case-study")
    common.add_argument("--settings", type=Path, default=None, help="TOML settings file")
    common.add_argument("--load-curve", default="builtin", help="Load curve CSV or 'builtin'")
    common.add_argument("--pv-curve", default="builtin", help="PV curve CSV or 'builtin'")
    common.add_argument("--dt-minutes", type=float, default=None, help="Minutes per curve step")
    common.add_argument("--out", type=Path, default=Path("out"), help="Output directory")
    common.add_argument("--kappa", type=float, default=None, help="Cable length to Manhattan distance ratio")
    common.add_argument("--verbose", action="store_true", help="Debug logging and per-step findings")

    parser = argparse.ArgumentParser(prog="gridgate", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="Rule and load-flow validation")

    lf = sub.add_parser("loadflow", parents=[common], help="Multi-period load flow")
    lf.add_argument("--allow-nonconverged", action="store_true", help="Exit 0 even if a step fails to converge")

    for name, default, text in (
        ("host", [0.0], "Hosting capacity at one lambda"),
        ("sweep", None, "Hosting capacity over several lambdas"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--lambda", dest="lambdas", type=_lambdas, default=default, help="CHF/pu^2, comma separated")
        p.add_argument("--refine-linearization", type=int, default=None, metavar="N", help="Linearisation passes")
        p.add_argument("--dump-sensitivities", action="store_true", help="Write sensitivities.csv")

    sub.add_parser("export-dgs", parents=[common], help="Write grid.dgs")

    args = parser.parse_args(argv)
    if args.command == "host" and len(args.lambdas) != 1:
        parser.error("host takes a single --lambda value; use sweep for several")
    return args


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _settings(args: argparse.Namespace) -> Settings:
    settings = load_settings(args.settings)
    hosting = {}
    if getattr(args, "refine_linearization", None) is not None:
        hosting["refine_passes"] = args.refine_linearization
    return settings.with_overrides(
        rules={"kappa": args.kappa} if args.kappa is not None else None,
        profiles={"dt_minutes": args.dt_minutes} if args.dt_minutes is not None else None,
        hosting=hosting,
    )


def _curve(source: str, dt_hours: float, builtin: Callable[[float], NormalizedCurve]) -> NormalizedCurve:
    if source == "builtin":
        return builtin(dt_hours)
    return load_curve(source, dt_hours)


def _out_dir(args: argparse.Namespace) -> Path:
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _loadflow_options(settings: Settings) -> dict:
    return {
        "s_base": settings.grid.s_base_kva,
        "power_factor": settings.profiles.power_factor,
        "slack_voltage": settings.grid.slack_voltage_pu,
        "tol": settings.powerflow.tolerance,
        "max_iter": settings.powerflow.max_iterations,
        "threads": settings.runtime.threads,
    }


def _basic_gate(grid: Grid, settings: Settings, out: Path) -> bool:
    """Run the rule checks; write findings and return False when they block."""
    findings = run_basic_validation(grid, settings.rules.to_rule_config())
    if has_errors(findings):
        write_findings(findings, out / "findings.json")
        logger.error(f"{len(findings)} finding(s) from rule checks; see {out / 'findings.json'}")
        return False
    return True


def cmd_validate(args: argparse.Namespace, settings: Settings, grid: Grid) -> int:
    out = _out_dir(args)
    load = _curve(args.load_curve, settings.dt_hours, builtin_load_curve)
    findings = run_basic_validation(grid, settings.rules.to_rule_config())
    if not has_errors(findings):
        findings = sort_findings(
            findings
            + run_advanced_validation(
                grid,
                load,
                limits=settings.limits.to_limit_set(),
                basic_findings=findings,
                per_step=args.verbose,
                **_loadflow_options(settings),
            )
        )
    write_findings(findings, out / "findings.json")

    basic = sum(f.phase == Phase.BASIC for f in findings)
    print(f"{grid.name or args.grid}: {len(findings)} finding(s) ({basic} basic, {len(findings) - basic} advanced)")
    for f in findings:
        print(f"  {f.severity.value:7s} {f.rule_id:20s} {f.entity.kind}:{f.entity.id}  {f.message}")
    return EXIT_FINDINGS if has_errors(findings) else EXIT_OK


def cmd_loadflow(args: argparse.Namespace, settings: Settings, grid: Grid) -> int:
    out = _out_dir(args)
    if not _basic_gate(grid, settings, out):
        return EXIT_FINDINGS
    load = _curve(args.load_curve, settings.dt_hours, builtin_load_curve)
    pu = to_per_unit(grid, settings.grid.s_base_kva)
    result = run_nominal_loadflow(grid, load, pu=pu, **_loadflow_options(settings))
    summary = write_loadflow(result, pu, grid, out)

    print(f"{result.steps} steps, {summary['converged_steps']} converged")
    print(f"min |V| {summary['min_v_pu']:.4f} pu at {summary['min_v_node']} (step {summary['min_v_step']})")
    print(f"max |V| {summary['max_v_pu']:.4f} pu at {summary['max_v_node']} (step {summary['max_v_step']})")
    print(f"max line loading {summary['max_line_loading_pct']:.1f} % on {summary['max_loading_line']}")
    print(f"peak slack power {summary['peak_slack_kva']:.1f} kVA (step {summary['peak_step']})")
    if not result.all_converged and not args.allow_nonconverged:
        logger.error(f"{result.steps - summary['converged_steps']} step(s) did not converge")
        return EXIT_INPUT
    return EXIT_OK


def _study(args: argparse.Namespace, settings: Settings, grid: Grid) -> HostingStudy:
    dt = settings.dt_hours
    return HostingStudy(
        grid,
        settings,
        _curve(args.load_curve, dt, builtin_load_curve),
        _curve(args.pv_curve, dt, builtin_pv_curve),
    )


def _dump_sensitivities(study: HostingStudy, out: Path) -> None:
    frames = [
        sensitivities_frame(s, study.pu.node_ids, study.adm.branch_ids) for s in study.sensitivities()
    ]
    if frames:
        write_frame(pd.concat(frames, ignore_index=True), out / "sensitivities.csv")
        logger.info(f"Sensitivities of {len(frames)} step(s) written to {out / 'sensitivities.csv'}")


def cmd_host(args: argparse.Namespace, settings: Settings, grid: Grid) -> int:
    out = _out_dir(args)
    if not _basic_gate(grid, settings, out):
        return EXIT_FINDINGS
    study = _study(args, settings, grid)
    if args.dump_sensitivities:
        _dump_sensitivities(study, out)
    lam = args.lambdas[0]
    solution = study.solve(lam)
    certificate = study.verify(solution)
    write_frame(solution.alpha_frame(), out / "alpha.csv")
    write_hosting_summary(solution, out / "hosting.json", certificate)

    print(f"lambda {lam:g}: total {solution.total_kwp:.6f} kWp on {len(solution.node_ids)} nodes")
    print(f"  J_C {solution.J_C:.2f} CHF  J_O {solution.J_O:.2f} CHF  M_U {solution.M_U:.6e} pu^2")
    print(f"  objective {solution.objective:.2f} CHF  KKT residual {solution.kkt_residual:.1e}")
    if not certificate.within():
        logger.warning(
            f"exact load flow exceeds limits: voltage +{certificate.voltage_excess_pu:.4f} pu, "
            f"current +{100 * certificate.current_overload:.2f} %"
        )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, settings: Settings, grid: Grid) -> int:
    out = _out_dir(args)
    if not _basic_gate(grid, settings, out):
        return EXIT_FINDINGS
    study = _study(args, settings, grid)
    if args.dump_sensitivities:
        _dump_sensitivities(study, out)
    rows = study.sweep(args.lambdas)
    write_frame(pareto_frame(rows), out / "pareto.csv")
    write_frame(fairness_price_frame(rows), out / "fairness_price.csv")
    alphas = [r.solution.alpha_frame().assign(**{"lambda": r.lam}) for r in rows if r.ok]
    if alphas:
        frame = pd.concat(alphas, ignore_index=True)
        write_frame(frame[["lambda", "node_id", "alpha_kwp", "alpha_per_unit"]], out / "alpha_sweep.csv")

    for r in rows:
        if r.ok:
            s = r.solution
            print(f"lambda {r.lam:>10g}: {s.total_kwp:9.2f} kWp  cost {s.cost:12.2f} CHF  M_U {s.M_U:.3e}")
        else:
            print(f"lambda {r.lam:>10g}: failed ({r.error})")
    return EXIT_OK if all(r.ok for r in rows) else EXIT_SOLVER


def cmd_export_dgs(args: argparse.Namespace, settings: Settings, grid: Grid) -> int:
    out = _out_dir(args)
    text = export_dgs(grid)
    (out / "grid.dgs").write_text(text, encoding="utf-8")
    counts = count_records(text)
    print(", ".join(f"{k} {v}" for k, v in counts.items()))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings, Grid], int]] = {
    "validate": cmd_validate,
    "loadflow": cmd_loadflow,
    "host": cmd_host,
    "sweep": cmd_sweep,
    "export-dgs": cmd_export_dgs,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    _configure_logging(args.verbose)
    try:
        settings = _settings(args)
        grid = parse_grid(args.grid)
        return COMMANDS[args.command](args, settings, grid)
    except (HostingError, SingularSystemError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_SOLVER
    except (GridgateError, ValidationError, OSError, ValueError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
