"""Command-line harness: ``simulate``, ``ksweep`` and ``analyze``.

Exit codes: 0 success, 1 configuration or validation error, 2 rollout or sampling
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    SamplingError,
    WpDegeneracyError,
    classify_boundary,
    k_lower_bound,
    sample_boundary,
    write_classification_csv,
)
from .certificates import Scenario
from .config import (
    ConfigError,
    RunConfig,
    load_run_config,
    parse_bool,
    parse_float,
    parse_name_list,
    parse_points,
    resolve_output_dir,
    validate_run_config,
)
from .controllers import ControllerError, DcpController, build_controller
from .simulation import IntegratorConfig, OutcomeKind, TrajectoryRecord, integrate
from .svg import boundary_svg, trajectories_svg, write_svg

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

KSWEEP_T_MAX = 60.0


def _fmt_k(k: float) -> str:
    return repr(float(k)).replace(".", "p").replace("-", "m")


def _record_stem(scenario: Scenario, controller: str, index: int) -> str:
    return f"{scenario.name}_{controller}_{index}"


def _save_record(rec: TrajectoryRecord, out_dir: Path, stem: str) -> None:
    rec.write_csv(out_dir / f"{stem}.csv")
    rec.write_outcome_json(out_dir / f"{stem}.json")


def _describe(rec: TrajectoryRecord) -> str:
    o = rec.outcome
    text = o.kind.value
    if o.point is not None:
        text += " at (" + ", ".join(f"{v:.4f}" for v in o.point) + ")"
    if o.error:
        text += f" [{o.error}]"
    return f"{text}; min h = {rec.min_h:.3g}; steps = {len(rec)}"


def _equilibria(records) -> list[np.ndarray]:
    return [r.outcome.point for r in records
            if r.outcome.kind is OutcomeKind.UNDESIRED_EQUILIBRIUM]


def cmd_simulate(cfg: RunConfig, output_dir: Path | None = None) -> int:
    try:
        scenario = validate_run_config(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = output_dir or Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inits = cfg.initial_conditions or scenario.inits
    dcp_cfg = cfg.dcp_config(scenario)

    records = []
    failed = False
    for name in cfg.controllers:
        controller = build_controller(name, scenario, dcp_cfg, cfg.penalty)
        for i, x0 in enumerate(inits):
            rec = integrate(controller, x0, cfg.integrator, scenario.domain)
            _save_record(rec, out_dir, _record_stem(scenario, name, i))
            print(f"{name} x0=({', '.join(f'{v:g}' for v in x0)}): {_describe(rec)}")
            failed |= rec.outcome.kind is OutcomeKind.ABORTED
            records.append(rec)
    if cfg.emit_svg:
        path = out_dir / f"{scenario.name}_trajectories.svg"
        write_svg(trajectories_svg(scenario, records, _equilibria(records),
                                   title=f"{scenario.name}, k = {dcp_cfg.k:g}"), path)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_ksweep(cfg: RunConfig, k_values, x0, output_dir: Path | None = None) -> int:
    k_values = list(k_values)
    if not k_values:
        print("error: k_values is empty", file=sys.stderr)
        return EXIT_CONFIG
    if any(not k >= 0 for k in k_values):
        print(f"error: k values must be nonnegative, got {k_values}", file=sys.stderr)
        return EXIT_CONFIG
    x0 = np.asarray(x0, dtype=float)
    try:
        scenario = validate_run_config(cfg.with_overrides(initial_conditions=(x0,)))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = output_dir or Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = []
    failed = False
    n = scenario.system.state_dim
    summary_path = out_dir / f"{scenario.name}_ksweep_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "outcome"] + [f"x{i + 1}" for i in range(n)] + ["min_h"])
        for k in k_values:
            dcp_cfg = cfg.with_overrides(k=float(k)).dcp_config(scenario)
            rec = integrate(DcpController.for_scenario(scenario, dcp_cfg), x0, cfg.integrator,
                            scenario.domain)
            rec.meta["k"] = float(k)
            _save_record(rec, out_dir, f"{scenario.name}_ksweep_k{_fmt_k(k)}")
            print(f"k={k:g}: {_describe(rec)}")
            point = rec.outcome.point if rec.outcome.point is not None else rec.final_state
            w.writerow([repr(float(k)), rec.outcome.kind.value]
                       + [repr(float(v)) for v in point] + [repr(rec.min_h)])
            failed |= rec.outcome.kind is OutcomeKind.ABORTED
            records.append(rec)
    if cfg.emit_svg:
        write_svg(trajectories_svg(scenario, records, _equilibria(records),
                                   title="k: " + ", ".join(f"{k:g}" for k in k_values)),
                  out_dir / f"{scenario.name}_ksweep.svg")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_analyze(cfg: RunConfig, nu: float, n_samples: int, alignment_tol: float = 1e-3,
                output_dir: Path | None = None) -> int:
    if not nu > 0:
        print(f"error: nu must be positive, got {nu}", file=sys.stderr)
        return EXIT_CONFIG
    if n_samples < 8:
        print(f"error: n_samples must be at least 8, got {n_samples}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        scenario = validate_run_config(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = output_dir or Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    controller = DcpController.for_scenario(scenario, cfg.dcp_config(scenario))
    try:
        samples = sample_boundary(scenario.cbf, n_samples, scenario.domain, scenario.seeds)
        classified = classify_boundary(samples, controller, nu, alignment_tol)
        result = k_lower_bound(classified, nu)
    except (SamplingError, WpDegeneracyError, ControllerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_classification_csv(classified, out_dir / f"{scenario.name}_boundary.csv")
    result.write_json(out_dir / f"{scenario.name}_kbound.json")
    print(f"samples={result.sample_count} |Omega|={result.omega_count} |X|={result.x_count} "
          f"|S|={result.s_count} |Q|={result.q_count}")
    if result.x_empty:
        print("X is empty: no boundary equilibria possible; k bound = 0")
    else:
        print(f"k > {result.k_lower_bound:.6g}  (sup|F_u| = {result.sup_Fu_norm:.6g}, "
              f"inf|G w_p| = {result.inf_Gwp_norm:.6g}, nu = {nu:g})")
    if cfg.emit_svg:
        write_svg(boundary_svg(scenario, classified, title=f"nu = {nu:g}"),
                  out_dir / f"{scenario.name}_boundary.svg")
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument handling


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--scenario", help="case1, case2, switching or a scenario file path")
    p.add_argument("--controllers", help="comma-separated subset of cbf_qp,penalty_qp,dcp")
    p.add_argument("--init", help='initial conditions, e.g. "0,7;1,7"')
    p.add_argument("--k", type=float, help="null-space gain of the DCP controller")
    p.add_argument("--wp-sign", type=int, choices=(1, -1), help="sign of the null-space direction")
    p.add_argument("--wh-mode", choices=("naive", "null_space_modified"))
    p.add_argument("--penalty", type=float, help="slack penalty of the penalty QP")
    p.add_argument("--dt", type=float, help="integration step")
    p.add_argument("--t-max", type=float, help="rollout horizon")
    p.add_argument("--output-dir", help="output directory (overrides $DCP_OUTPUT_DIR)")
    p.add_argument("--svg", nargs="?", const="true", help="also write an SVG figure")
    p.add_argument("--seed", type=int, help="seed for randomized sampling")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clf-cbf-dcp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="roll out controllers from initial conditions")
    _add_common(sim)

    ks = sub.add_parser("ksweep", help="DCP rollouts from one state for several gains k")
    _add_common(ks)
    ks.add_argument("--k-values", required=True, help='comma-separated gains, e.g. "14.6,15"')
    ks.add_argument("--x0", required=True, help='initial state, e.g. "-5,4"')

    an = sub.add_parser("analyze", help="classify boundary samples and bound the gain k")
    _add_common(an)
    an.add_argument("--nu", type=float, default=0.5, help="safety-magnitude threshold")
    an.add_argument("--n-samples", type=int, default=720, help="rays per seed")
    an.add_argument("--alignment-tol", type=float, default=1e-3, help="radians")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Config file (if any) with command-line flags layered on top."""
    cfg = load_run_config(args.config) if args.config else RunConfig()
    try:
        overrides = dict(
            scenario=args.scenario,
            controllers=tuple(parse_name_list(args.controllers)) if args.controllers is not None else None,
            initial_conditions=tuple(parse_points(args.init)) if args.init else None,
            k=args.k,
            wp_sign=args.wp_sign,
            wh_mode=args.wh_mode,
            penalty=args.penalty,
            emit_svg=parse_bool(args.svg) if args.svg is not None else None,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "<command line>") from None
    integ = cfg.integrator
    if args.command == "ksweep" and "integrator.t_max" not in cfg.explicit_keys:
        integ = IntegratorConfig(integ.dt, KSWEEP_T_MAX, integ.origin_tol,
                                 integ.equilibrium_speed_tol, integ.equilibrium_dwell_steps)
    if args.dt is not None or args.t_max is not None:
        try:
            integ = IntegratorConfig(
                args.dt if args.dt is not None else integ.dt,
                args.t_max if args.t_max is not None else integ.t_max,
                integ.origin_tol, integ.equilibrium_speed_tol, integ.equilibrium_dwell_steps,
            )
        except ValueError as exc:
            raise ConfigError(str(exc), "<command line>") from None
    return cfg.with_overrides(integrator=integ, **overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        out_dir = resolve_output_dir(args.output_dir, cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "ksweep":
            try:
                k_values = [parse_float(k) for k in parse_name_list(args.k_values)]
                (x0,) = parse_points(args.x0)
            except ValueError as exc:
                raise ConfigError(f"bad --k-values/--x0: {exc}", "<command line>") from None
            return cmd_ksweep(cfg, k_values, x0, out_dir)
        return cmd_analyze(cfg, args.nu, args.n_samples, args.alignment_tol, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
