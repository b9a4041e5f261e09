"""
Path utilities for resolving project-relative paths

This module provides utilities to resolve paths relative to the project root,
ensuring the CLI works correctly regardless of where it's executed from.
"""

import os
from pathlib import Path


# Project root is the parent of src/
PROJECT_ROOT = Path(__file__).parent.parent.parent


def get_config_path(config_name: str) -> Path:
    """
    Get absolute path to a shipped config file

    Args:
        config_name: Name of the config file

    Returns:
        Absolute path to the config file

    Examples:
        >>> get_config_path("synth_default.toml")
        Path('/path/to/project/config/synth_default.toml')
    """
    return PROJECT_ROOT / "config" / config_name


def get_output_dir() -> Path:
    """Output directory for artifacts (env OUTPUT_DIR, default ./output)"""
    return Path(os.getenv("OUTPUT_DIR", "./output"))


def resolve_output(path: str | Path | None) -> Path | None:
    """Resolve a relative artifact path against the output directory"""
    if path is None:
        return None
    path = Path(path)
    if path.is_absolute() or path.parent != Path("."):
        return path
    return get_output_dir() / path
