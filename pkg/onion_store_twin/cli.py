"""Command-line entry point: run, compare, calibrate, broker."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import NoReturn

from onion_store_twin.config_utils import (
    MQTT_ENV_VAR,
    Scenario,
    apply_calibration,
    load_scenario,
    parse_broker_address,
    write_calibration,
)
from onion_store_twin.run_scenario_main import (
    DEFAULT_TARGET_BAND,
    calibrate_rot_rate,
    run_comparison,
    run_scenario,
    write_run_outputs,
)
from onion_store_twin.telemetry_utils.broker import DEFAULT_QUEUE_SIZE, MqttBroker

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="onion-twin", description="Digital twin of an onion storage chamber.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Simulate one scenario and write its outputs")
    run.add_argument("scenario", help="Scenario YAML file or bundled preset name")
    run.add_argument("--out", type=Path, default=None, help="Output directory (default runs/<id>)")
    run.add_argument("--mqtt", default=None, help=f"Broker HOST:PORT (overrides ${MQTT_ENV_VAR})")
    run.add_argument("--calibration", type=Path, default=None, help="Calibration sidecar file")
    run.add_argument("--no-controller", action="store_true", help="Run without the controller")
    run.add_argument("--plot", action="store_true", help="Also write timeseries.png")

    comp = sub.add_parser("compare", help="Baseline vs controlled run with cost analysis")
    comp.add_argument("scenario", help="Scenario YAML file or bundled preset name")
    comp.add_argument("--calibration", type=Path, default=None, help="Calibration sidecar file")
    comp.add_argument("--out", type=Path, default=None, help="Write comparison.json here")

    broker = sub.add_parser("broker", help="Run a standalone MQTT broker")
    broker.add_argument("--host", default="127.0.0.1")
    broker.add_argument("--port", type=int, default=1883)
    broker.add_argument("--queue-size", type=int, default=DEFAULT_QUEUE_SIZE)

    cal = sub.add_parser("calibrate", help="Fit the rot rate to a baseline spoilage band")
    cal.add_argument("scenario", help="Scenario YAML file or bundled preset name")
    cal.add_argument("--target-low", type=float, default=DEFAULT_TARGET_BAND[0])
    cal.add_argument("--target-high", type=float, default=DEFAULT_TARGET_BAND[1])
    cal.add_argument("--out", type=Path, default=Path(), help="Directory for the sidecar file")
    return parser


def _load(scenario: str, calibration: Path | None) -> Scenario:
    loaded = load_scenario(scenario)
    if calibration is not None:
        loaded = apply_calibration(loaded, calibration)
    return loaded


def _broker_address(flag: str | None) -> tuple[str, int] | None:
    address = flag or os.environ.get(MQTT_ENV_VAR)
    return parse_broker_address(address) if address else None


def _cmd_run(args: argparse.Namespace, logger_level: int) -> None:
    scenario = _load(args.scenario, args.calibration)
    if args.no_controller:
        scenario = scenario.with_controller(enabled=False)
    report, timeseries = run_scenario(
        scenario,
        broker_address=_broker_address(args.mqtt),
        logger_level=logger_level,
    )
    out_dir = write_run_outputs(
        args.out or Path("runs") / scenario.id,
        report,
        timeseries,
        plot=args.plot,
    )
    print(report.report_str)
    print(f"Outputs written to {out_dir}")


def _cmd_compare(args: argparse.Namespace, logger_level: int) -> None:
    scenario = _load(args.scenario, args.calibration)
    comparison, _, _ = run_comparison(scenario, logger_level=logger_level)
    print(comparison.report_str)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with (args.out / "comparison.json").open("w", encoding="utf-8", newline="\n") as f:
            json.dump(comparison.to_dict(), f, indent=2)
            f.write("\n")


def _cmd_calibrate(args: argparse.Namespace, logger_level: int) -> None:
    scenario = load_scenario(args.scenario)
    rate = calibrate_rot_rate(
        scenario,
        (args.target_low, args.target_high),
        logger_level=logger_level,
    )
    path = write_calibration(
        args.out / f"{scenario.id}.calibrated.yaml",
        scenario_id=scenario.id,
        rot_pct_per_day=rate,
    )
    print(f"rot_pct_per_day = {rate:.6f} written to {path}")


def _cmd_broker(args: argparse.Namespace) -> None:
    MqttBroker(args.host, args.port, queue_size=args.queue_size).serve_forever()


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    # Reports go to stdout; library INFO output would duplicate them
    logger_level = logging.DEBUG if args.verbose else logging.WARNING

    try:
        match args.command:
            case "run":
                _cmd_run(args, logger_level)
            case "compare":
                _cmd_compare(args, logger_level)
            case "calibrate":
                _cmd_calibrate(args, logger_level)
            case "broker":
                _cmd_broker(args)
    except ValueError as e:
        logger.error(f"{e}")
        return EXIT_INVALID
    except Exception as e:
        logger.debug("Runtime failure", exc_info=True)
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())
