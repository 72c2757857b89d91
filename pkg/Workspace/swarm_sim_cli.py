#!/usr/bin/env python3
"""
Swarm Payload Simulator - command line
Runs scenarios, verifies the hover equilibrium, reports linearised stability
and recomputes mission metrics from an emitted time series.

Exit codes: 0 success, 1 configuration / output error, 2 numerical failure,
3 acceptance-check failure.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from sim_engine import equilibrium_state, run_batch, run_scenario
from sim_types import (SCENARIO_PRESETS, AttitudeInfeasibleError, ConfigError,
                       DegenerateGeometryError, IntegrityError, NonFiniteStateError,
                       NotSteadyError, OutputError, SlackEquilibriumError, StiffnessError,
                       load_config, setup_logging)
from swarm_analysis import (analytic_stability_roots, compute_mission_metrics, emit_outputs,
                            evaluate_acceptance, load_time_series, measure_disturbance_decay,
                            time_series_digest, verify_equilibrium)

load_dotenv('.env.sim')

LOG_LEVEL = os.getenv('SIM_LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('SIM_LOG_FILE', 'logs/swarm_sim.log')
OUTPUT_DIR = os.getenv('SIM_OUTPUT_DIR', 'sim_output')

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_ACCEPTANCE = 3

NUMERICAL_ERRORS = (DegenerateGeometryError, AttitudeInfeasibleError, IntegrityError,
                    StiffnessError, NonFiniteStateError, SlackEquilibriumError)

logger = logging.getLogger(__name__)


def _write_json(path: Path, data) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(data, handle, indent=2)
            handle.write("\n")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}")


def _same_digest(name: str, first_log, second_log) -> bool:
    first = time_series_digest(first_log)
    second = time_series_digest(second_log)
    if first != second:
        logger.error(f"✗ Determinism check failed for '{name}': {first[:12]} != {second[:12]}")
        return False
    logger.info(f"✓ Determinism check passed for '{name}' (sha256 {first[:12]})")
    return True


def _run_and_emit(config, out_dir: Path, fixed_step: bool, seed_check: bool,
                  extracts: bool = True) -> int:
    if seed_check:
        fixed_step = True
    log = run_scenario(config, fixed_step=fixed_step)
    metrics = compute_mission_metrics(log, config) if len(log) else None
    verdicts = evaluate_acceptance(metrics, config) if metrics is not None else {}
    emit_outputs(log, metrics, verdicts, config, out_dir, extracts=extracts)

    code = EXIT_OK
    if seed_check and not _same_digest(config.scenario.name, log,
                                       run_scenario(config, fixed_step=True)):
        code = EXIT_ACCEPTANCE

    if verdicts and not verdicts["passed"]:
        failed = [name for name, ok in verdicts.items() if not ok and name != "passed"]
        logger.error(f"✗ Acceptance failed for '{config.scenario.name}': {', '.join(failed)}")
        code = EXIT_ACCEPTANCE
    elif verdicts:
        logger.info(f"✓ Acceptance passed for '{config.scenario.name}'")

    if metrics is not None:
        print(json.dumps({"scenario": config.scenario.name, "metrics": metrics.to_dict(),
                          "verdicts": verdicts}, indent=2))
    return code


def cmd_run(args) -> int:
    out_dir = Path(args.out_dir)
    if args.batch:
        configs = [load_config(path, preset=args.preset) for path in args.batch]
        fixed_step = args.fixed_step or args.seed_check
        logs = run_batch(configs, workers=args.workers, fixed_step=fixed_step)
        repeats = run_batch(configs, workers=args.workers, fixed_step=True) \
            if args.seed_check else None
        code = EXIT_OK
        for index, (config, log) in enumerate(zip(configs, logs)):
            metrics = compute_mission_metrics(log, config) if len(log) else None
            verdicts = evaluate_acceptance(metrics, config) if metrics is not None else {}
            target = out_dir / f"{index:02d}_{config.scenario.name}"
            emit_outputs(log, metrics, verdicts, config, target, extracts=not args.no_extracts)
            if repeats is not None and not _same_digest(config.scenario.name, log,
                                                        repeats[index]):
                code = EXIT_ACCEPTANCE
            if verdicts and not verdicts["passed"]:
                code = EXIT_ACCEPTANCE
        return code

    config = load_config(args.config, preset=args.preset)
    return _run_and_emit(config, out_dir, args.fixed_step, args.seed_check,
                         extracts=not args.no_extracts)


def cmd_scenario(args) -> int:
    config = load_config(args.config, preset=args.name)
    out_dir = Path(args.out_dir) / args.name
    return _run_and_emit(config, out_dir, args.fixed_step, args.seed_check)


def cmd_verify_equilibrium(args) -> int:
    config = load_config(args.config, preset=args.preset)
    if args.fixture:
        state, controls = equilibrium_state(config), None
    else:
        log = run_scenario(config, fixed_step=args.fixed_step)
        state, controls = log.final_state, log.agent_controls[-1]
    try:
        report = verify_equilibrium(state, config, controls)
    except NotSteadyError as e:
        logger.error(f"✗ Equilibrium check refused: {e}")
        return EXIT_ACCEPTANCE
    data = report.__dict__.copy()
    _write_json(Path(args.out_dir) / "equilibrium.json", data)
    print(json.dumps(data, indent=2))
    return EXIT_OK if report.balanced else EXIT_ACCEPTANCE


def cmd_stability(args) -> int:
    config = load_config(args.config, preset=args.preset)
    if args.empirical:
        report = measure_disturbance_decay(config, perturbation=args.perturbation,
                                           agent=args.agent, duration=args.duration,
                                           fixed_step=args.fixed_step)
    else:
        report = analytic_stability_roots(config, gamma=args.gamma)
    data = report.to_dict()
    _write_json(Path(args.out_dir) / "stability.json", data)
    print(json.dumps(data, indent=2))
    return EXIT_ACCEPTANCE if report.verdict in ("unstable", "inconsistent") else EXIT_OK


def cmd_metrics(args) -> int:
    config = load_config(args.config, preset=args.preset)
    log = load_time_series(args.log)
    metrics = compute_mission_metrics(log, config)
    verdicts = evaluate_acceptance(metrics, config)
    data = {"scenario": config.scenario.name, "metrics": metrics.to_dict(), "verdicts": verdicts}
    if args.out:
        _write_json(Path(args.out), data)
    print(json.dumps(data, indent=2))
    return EXIT_ACCEPTANCE if verdicts and not verdicts["passed"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarm_sim_cli.py",
        description="Cable-slung payload transport by a swarm of point-mass agents")
    parser.add_argument("--log-level", default=None, help="Override SIM_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub, preset_default=None):
        sub.add_argument("--config", default=None, help="YAML file merged over the defaults")
        sub.add_argument("--out-dir", default=OUTPUT_DIR, help="Output directory")
        sub.add_argument("--fixed-step", action="store_true",
                         help="Use the fixed-step RK4 integrator")
        if preset_default is not False:
            sub.add_argument("--preset", choices=sorted(SCENARIO_PRESETS), default=preset_default)

    run = commands.add_parser("run", help="Run a configuration and emit outputs")
    common(run)
    run.add_argument("--seed-check", action="store_true",
                     help="Run twice with fixed steps and compare the logs byte for byte")
    run.add_argument("--batch", nargs="+", metavar="CONFIG", help="Run several configs")
    run.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    run.add_argument("--no-extracts", action="store_true", help="Skip the per-plot extracts")
    run.set_defaults(handler=cmd_run)

    scenario = commands.add_parser("scenario", help="Run a bundled scenario preset")
    scenario.add_argument("name", choices=sorted(SCENARIO_PRESETS))
    common(scenario, preset_default=False)
    scenario.add_argument("--seed-check", action="store_true")
    scenario.set_defaults(handler=cmd_scenario)

    verify = commands.add_parser("verify-equilibrium", help="Check the hover force balance")
    common(verify, preset_default="hover")
    verify.add_argument("--fixture", action="store_true",
                        help="Check the analytic fixture instead of a simulated run")
    verify.set_defaults(handler=cmd_verify_equilibrium)

    stability = commands.add_parser("stability", help="Linearised hover stability")
    common(stability)
    stability.add_argument("--gamma", type=float, default=None,
                           help="Equilibrium cable length (default: natural plus static stretch)")
    stability.add_argument("--empirical", action="store_true",
                           help="Also simulate a perturbation and fit its decay")
    stability.add_argument("--perturbation", type=float, nargs=3, default=[0.05, 0.0, 0.0])
    stability.add_argument("--agent", type=int, default=1)
    stability.add_argument("--duration", type=float, default=60.0)
    stability.set_defaults(handler=cmd_stability)

    metrics = commands.add_parser("metrics", help="Recompute metrics from a time_series.csv")
    metrics.add_argument("log", help="time_series.csv written by run/scenario")
    metrics.add_argument("--config", default=None)
    metrics.add_argument("--preset", choices=sorted(SCENARIO_PRESETS), default=None)
    metrics.add_argument("--out", default=None, help="Write the summary JSON here")
    metrics.set_defaults(handler=cmd_metrics)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or LOG_LEVEL, LOG_FILE)
    try:
        return args.handler(args)
    except (ConfigError, OutputError) as e:
        logger.error(f"✗ {e}")
        return EXIT_CONFIG
    except NotSteadyError as e:
        logger.error(f"✗ {e}")
        return EXIT_ACCEPTANCE
    except NUMERICAL_ERRORS as e:
        logger.error(f"✗ Numerical failure: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
