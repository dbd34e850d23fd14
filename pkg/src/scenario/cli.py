"""Command-line front end: ``gridsnoop simulate|learn|campaign``."""

from __future__ import annotations

import argparse
from typing import Dict, List, Optional, Sequence, Tuple

from src.scenario.commands import cmd_campaign, cmd_learn, cmd_simulate
from src.scenario.config import DEFAULT_CONFIG, ScenarioValidationError, load_scenario
from src.utils.config import ConfigError
from src.utils.logger import set_global_level, setup_logger

LOGGER = setup_logger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
COMMANDS = ("simulate", "learn", "campaign")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridsnoop",
        allow_abbrev=False,
        description="Blind topology learning and gated FDI attacks against an AC state estimator.",
        epilog="Any other configuration key can be overridden with --<key> <value>.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("-c", "--config", default=DEFAULT_CONFIG, help="YAML scenario file (default: %(default)s)")
    parser.add_argument("--seed", type=int, action="append", dest="seeds", help="Seed to run (repeatable)")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return parser


def _parse_overrides(extra: Sequence[str]) -> Dict[str, str]:
    """Turn ``--key value`` / ``--key=value`` pairs into a mapping."""

    overrides: Dict[str, str] = {}
    items = list(extra)
    while items:
        flag = items.pop(0)
        if not flag.startswith("--") or len(flag) <= 2:
            raise ScenarioValidationError(f"Unexpected argument '{flag}'")
        key, sep, value = flag[2:].partition("=")
        if not sep:
            if not items or items[0].startswith("--"):
                raise ScenarioValidationError(f"Missing value for --{key}")
            value = items.pop(0)
        overrides[key.replace("-", "_")] = value
    return overrides


def parse_args(argv: Optional[Sequence[str]] = None) -> Tuple[argparse.Namespace, Dict[str, object]]:
    args, extra = build_parser().parse_known_args(argv)
    overrides: Dict[str, object] = dict(_parse_overrides(extra))
    if args.seeds:
        overrides["seeds"] = list(args.seeds)
    if args.out:
        overrides["out"] = args.out
    return args, overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args, overrides = parse_args(argv)
        if args.log_level:
            set_global_level(args.log_level)
        cfg = load_scenario(args.config, overrides)
        LOGGER.info("%s: case %s, seeds %s -> %s", args.command, cfg.case, list(cfg.seeds), cfg.out_dir)
        written: List = []
        if args.command == "simulate":
            written = cmd_simulate(cfg)
        elif args.command == "learn":
            written = [cmd_learn(cfg)]
        else:
            written = cmd_campaign(cfg)
    except (ConfigError, ValueError, OSError) as exc:
        LOGGER.error("Configuración inválida o error de E/S: %s", exc)
        return EXIT_VALIDATION
    except RuntimeError as exc:
        LOGGER.error("Fallo numérico: %s", exc)
        return EXIT_NUMERICAL
    for path in written:
        LOGGER.info("Wrote %s", path)
    return EXIT_OK


__all__ = ["build_parser", "main", "parse_args"]
