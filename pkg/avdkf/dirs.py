import os
from pathlib import Path

from platformdirs import user_config_dir, user_data_dir


def get_config_dir() -> Path:
    return Path(user_config_dir("avdkf"))


def get_data_dir() -> Path:
    # used in testing, so must take precedence
    if "XDG_DATA_HOME" in os.environ:
        return Path(os.environ["XDG_DATA_HOME"]) / "avdkf"
    return Path(user_data_dir("avdkf"))


def get_runs_dir() -> Path:
    """Get the default directory for **run artifacts** (corpora, checkpoints, reports)"""
    if run_dir := os.environ.get("AVDKF_RUN_DIR"):
        return Path(run_dir)
    return get_data_dir() / "runs"


def ensure_dir(path: Path, force: bool = False) -> Path:
    """Creates `path`, refusing to reuse a non-empty directory unless `force` is set."""
    if path.exists() and any(path.iterdir()) and not force:
        raise FileExistsError(
            f"Output directory {path} exists and is not empty, pass --force to reuse it"
        )
    path.mkdir(parents=True, exist_ok=True)
    return path
