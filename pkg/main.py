from typing import Any, Dict, List, Optional, get_args, get_origin
import argparse
import json
import logging
import sys

from src.utils.config import VERSION, config
from src.workflows.experiment_config import COMMANDS, ExperimentConfig
from src.workflows.experiment_workflow import EXIT_CONFIG, EXIT_IO, run_experiment

# Configure logging
logging.basicConfig(
    level=getattr(logging, config.log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    stream=sys.stderr,
)
logger = logging.getLogger(__name__)

LIST_FIELDS = ("levels", "lags", "window")


def _flag_type(annotation):
    """Scalar type argparse should convert a flag value with"""
    args = [a for a in get_args(annotation) if a is not type(None)]
    if get_origin(annotation) is None:
        return annotation
    for candidate in (int, float, str):
        if candidate in args:
            return candidate
    return str


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="Convergence experiments for finite element and spectral schemes of semilinear stochastic heat equations",
    )
    parser.add_argument("command", nargs="?", choices=COMMANDS, help="experiment to run")
    parser.add_argument("--config", help="JSON config file; flags override its keys")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    for name, info in ExperimentConfig.model_fields.items():
        if name == "command":
            continue
        flag = f"--{name.replace('_', '-')}"
        if name in LIST_FIELDS:
            parser.add_argument(flag, dest=name, type=float, nargs="+", default=argparse.SUPPRESS,
                                help=info.description)
        elif info.annotation is bool:
            parser.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            parser.add_argument(flag, dest=name, type=_flag_type(info.annotation), default=argparse.SUPPRESS)
    return parser


def collect_settings(args: argparse.Namespace, file_settings: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Config file keys overridden by command-line flags"""
    settings = dict(file_settings or {})
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "command")}
    levels: Optional[List[float]] = flags.get("levels")
    # a single integral value is a level count
    if levels is not None and len(levels) == 1 and float(levels[0]).is_integer():
        flags["levels"] = int(levels[0])
    settings.update(flags)
    if args.command:
        settings["command"] = args.command
    return settings


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    file_settings = None
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_settings = json.load(fh)
        except OSError as e:
            logger.error(f"Cannot read config file {args.config}: {e}")
            return EXIT_IO
        except json.JSONDecodeError as e:
            logger.error(f"Config file {args.config} is not valid JSON: {e}")
            return EXIT_CONFIG
        if not isinstance(file_settings, dict):
            logger.error(f"Config file {args.config} must hold a JSON object")
            return EXIT_CONFIG

    state = run_experiment(collect_settings(args, file_settings))
    for error in state["errors"]:
        print(f"error: {error}", file=sys.stderr)
    return state["exit_status"]


if __name__ == "__main__":
    sys.exit(main())
