"""
Default configuration and run-directory bootstrap
Creates the run directory layout and a default config file if they don't exist
"""

import logging
from pathlib import Path
from typing import Any, Dict

from wpflow.config.config_manager import ExperimentConfig

logger = logging.getLogger(__name__)


# starter seed written into fresh config files; the model itself has none
DEFAULT_SEED = 42


def get_default_config() -> Dict[str, Any]:
    """Default configuration dictionary, taken from the ExperimentConfig field defaults"""
    config = ExperimentConfig().model_dump(mode="json")
    config["run"]["seed"] = DEFAULT_SEED
    return config


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def render_config(config: Dict[str, Any]) -> str:
    """Render a sectioned config dict as key = value text; None values are left out"""
    blocks = []
    for section, values in config.items():
        lines = [f"[{section}]"]
        lines.extend(f"{key} = {_toml_value(value)}" for key, value in values.items() if value is not None)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def init_data_file(file_path: Path, content: str, description: str) -> bool:
    """
    Write a file if it doesn't exist

    Args:
        file_path: Path to the file
        content: Text to write
        description: Description of the file for logging

    Returns:
        True if file was created, False if it already existed
    """
    if file_path.exists():
        logger.debug(f"{description} already exists at {file_path}")
        return False

    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(content)
        logger.info(f"Created default {description} at {file_path}")
        return True
    except OSError as e:
        logger.error(f"Failed to create {description} at {file_path}: {e}")
        return False


def initialize_run_directory(run_dir: Path) -> Path:
    """
    Create a run directory and its logs/ subdirectory

    Args:
        run_dir: Directory for one experiment run

    Returns:
        The run directory
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "logs").mkdir(parents=True, exist_ok=True)
    logger.debug(f"Run directory ready at: {run_dir}")
    return run_dir


if __name__ == "__main__":
    import argparse

    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s'
    )

    parser = argparse.ArgumentParser(description='Write a default wpflow config file')
    parser.add_argument('--out', type=str, default='./config.toml', help='Config file path (default: ./config.toml)')
    args = parser.parse_args()

    if init_data_file(Path(args.out), render_config(get_default_config()), "config file"):
        print(f"Wrote {args.out}")
    else:
        print(f"{args.out} already exists, left untouched")
