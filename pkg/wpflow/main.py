"""
Main entry point for wpflow
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from wpflow.config.config_manager import EXPERIMENT_IDS, ConfigManager
from wpflow.models.errors import ConfigError, NoEscapeError
from wpflow.runner.experiments import run, run_directory

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ASSERTION_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE_NAME = "wpflow.log"


class JsonFormatter(logging.Formatter):
    """One JSON object per record"""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "time": self.formatTime(record),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload)


def configure_logging(level_name: str = "INFO", fmt: str = "text", log_file: Optional[Path] = None) -> None:
    """Set up stdout logging and, when given, a log file inside the run directory"""
    level_map = {
        'DEBUG': logging.DEBUG,
        'INFO': logging.INFO,
        'WARNING': logging.WARNING,
        'ERROR': logging.ERROR,
        'CRITICAL': logging.CRITICAL
    }
    level = level_map.get(level_name.upper(), logging.INFO)
    formatter = JsonFormatter() if fmt == "json" else logging.Formatter(LOG_FORMAT)

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(str(log_file)))
    for handler in handlers:
        handler.setFormatter(formatter)

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)
    logger.debug(f"Log level set to: {level_name}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wpflow",
        description="Numerical experiments on geodesic flow near the boundary of a cusp model",
    )
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENT_IDS:
        cmd = sub.add_parser(name, help=f"Run the {name} experiment")
        cmd.add_argument("--config", type=Path, help="TOML config file")
        cmd.add_argument("--seed", type=int, help="Master seed (overrides [run] seed)")
        cmd.add_argument("--out", type=Path, help="Output root directory (overrides [run] out_dir)")
        cmd.add_argument("--workers", type=int, help="Worker processes (overrides [run] workers)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, load config, run one experiment

    Returns:
        Exit code: 0 ok, 1 assertion failed or no escape, 2 config error, 3 runtime error
    """
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        manager = ConfigManager.from_file(args.config) if args.config else ConfigManager()
        config = manager.apply_overrides(
            experiment=args.experiment,
            seed=args.seed,
            out_dir=args.out,
            workers=args.workers,
        )
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG_ERROR

    run_dir = run_directory(config)
    configure_logging(
        config.observability.log_level,
        config.observability.log_format,
        run_dir / "logs" / LOG_FILE_NAME,
    )
    try:
        manifest = run(config, run_dir)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_CONFIG_ERROR
    except NoEscapeError as e:
        logger.error(f"Escape calibration failed: {e}")
        return EXIT_ASSERTION_FAILED
    except Exception as e:
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME_ERROR

    print(json.dumps({"run_dir": str(run_dir), "status": manifest.status, "summary": manifest.summary}, default=str))
    if manifest.status == "assertion_failed":
        for failure in manifest.failures:
            print(f"FAILED {failure}", file=sys.stderr)
        return EXIT_ASSERTION_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
