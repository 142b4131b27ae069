"""Pipeline services discovered by the engine; one package per CLI command family."""

from pathlib import Path

from src.core.run_config import RunConfig


def output_path(run: RunConfig, default_name: str) -> Path:
    """``out`` when given, else ``default_name`` inside ``output_dir`` (or the cwd)."""
    if run.out:
        return Path(run.out)
    return Path(run.output_dir or ".") / default_name


def sibling_path(path: Path, suffix: str) -> Path:
    """report.json -> report.<suffix>"""
    return path.with_name(f"{path.stem}.{suffix}")


def oracle_path(run: RunConfig) -> Path:
    if run.oracle:
        return Path(run.oracle)
    return Path(f"{run.bundle or run.out}.oracle")
