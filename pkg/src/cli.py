import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.theme import Theme

from src.core.base_service import EXIT_INVALID, ServiceResult
from src.core.engine import GCMEngine
from src.core.logger import get_logger
from src.core.run_config import RunConfig, validate_config

custom_theme = Theme({"metric": "cyan", "value": "bright_white"})

console = Console(theme=custom_theme)

PASSTHROUGH = dict(ignore_unknown_options=True, allow_extra_args=True)

REPORT_METRICS = ("U", "S", "H", "S_b", "U_b", "CVb", "AUSUC", "f1_macro", "openness",
                  "consistency_rate", "closed_set_accuracy", "tau")


def _parse_overrides(args: Sequence[str]) -> Dict[str, str]:
    """``--key value`` pairs left over after click's own options."""
    overrides: Dict[str, str] = {}
    args = list(args)
    i = 0
    while i < len(args):
        flag = args[i]
        if not flag.startswith("--") or len(flag) == 2:
            raise click.UsageError(f"unexpected argument '{flag}'")
        key, eq, value = flag[2:].partition("=")
        key = key.replace("-", "_")
        if key not in RunConfig.model_fields:
            raise click.UsageError(f"no such option: --{flag[2:].partition('=')[0]}")
        if not eq:
            if i + 1 >= len(args):
                raise click.UsageError(f"option --{key} requires a value")
            i += 1
            value = args[i]
        overrides[key] = value
        i += 1
    return overrides


def _show_errors(title: str, errors: List[str]) -> None:
    console.print(
        Panel.fit(
            "\n".join(f"[red]•[/red] {e}" for e in errors),
            title=f"[bold red]{title}[/bold red]",
            border_style="red",
        )
    )


def _render(command: str, result: ServiceResult) -> None:
    if not result.success:
        _show_errors(f"{command} failed", [result.error or "unknown error"])
        return

    data = result.data or {}
    report = data.get("report")
    if isinstance(report, dict) and "U" in report:
        table = Table(title=f"[bold blue]{command}[/bold blue]", header_style="bold magenta")
        table.add_column("Metric", style="metric")
        table.add_column("Value", style="value", justify="right")
        for key in REPORT_METRICS:
            value = report.get(key)
            if value is not None:
                table.add_row(key, f"{value:.4f}" if isinstance(value, float) else str(value))
        table.add_row("seed", str(report.get("seed")))
        table.add_row("config_hash", str(report.get("config_hash")))
        console.print(table)
    else:
        lines = [
            f"[blue]{key}:[/blue] {value}"
            for key, value in data.items()
            if not isinstance(value, (dict, list))
        ]
        if lines:
            console.print(Panel.fit("\n".join(lines), title=f"[bold green]{command}[/bold green]"))

    for path in result.artifacts:
        console.print(f"[green]✓[/green] wrote {path}")


def _execute(
    ctx: click.Context,
    command: str,
    service: str,
    config_path: Optional[str],
    options: Dict[str, Any],
    defaults: Optional[Dict[str, str]] = None,
    **input_extra,
) -> None:
    overrides = _parse_overrides(ctx.args)
    overrides.update({key: str(value) for key, value in options.items() if value is not None})
    for key, value in (defaults or {}).items():
        overrides.setdefault(key, value)

    text = Path(config_path).read_text(encoding="utf-8") if config_path else ""
    run_config, errors = validate_config(text, overrides)
    if run_config is None:
        _show_errors("Invalid configuration", errors)
        ctx.exit(EXIT_INVALID)

    engine = GCMEngine()
    engine.initialize()
    try:
        result = engine.execute_service(service, {"config": run_config, **input_extra})
    finally:
        engine.shutdown()
    _render(command, result)
    ctx.exit(result.exit_code)


def config_option(f):
    return click.option(
        "--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
        help="Flat key = value run configuration",
    )(f)


def path_option(name: str, help_text: str):
    return click.option(f"--{name}", type=click.Path(dir_okay=name == "output-dir"), help=help_text)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging")
@click.pass_context
def cli(ctx, verbose):
    """gcmcf - counterfactual generative models for zero-shot and open-set recognition

    Any run configuration key can be overridden with --key value.
    """
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    get_logger(__name__)
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@cli.command(context_settings=PASSTHROUGH)
@config_option
@path_option("out", "Bundle file to write; the oracle sidecar goes to <out>.oracle")
@click.pass_context
def synth(ctx, config_path, out):
    """Generate a synthetic world bundle and oracle sidecar"""
    _execute(ctx, "synth", "synth", config_path, {"out": out})


@cli.command(context_settings=PASSTHROUGH)
@config_option
@path_option("bundle", "Dataset bundle")
@path_option("out", "Checkpoint file to write")
@path_option("output-dir", "Directory for the training log")
@click.pass_context
def train(ctx, config_path, bundle, out, output_dir):
    """Train a model on the bundle's seen classes"""
    _execute(
        ctx, "train", "trainer", config_path,
        {"bundle": bundle, "out": out, "output_dir": output_dir},
    )


@cli.command("eval-zsl", context_settings=PASSTHROUGH)
@config_option
@path_option("checkpoint", "Trained model checkpoint")
@path_option("bundle", "Dataset bundle")
@path_option("out", "Report JSON to write")
@path_option("output-dir", "Directory for report artifacts")
@click.pass_context
def eval_zsl(ctx, config_path, checkpoint, bundle, out, output_dir):
    """Zero-shot evaluation: top-K seen/unseen gate plus joint classifier"""
    _execute(
        ctx, "eval-zsl", "evaluator", config_path,
        {"checkpoint": checkpoint, "bundle": bundle, "out": out, "output_dir": output_dir},
        defaults={"mode": "zsl"},
        task="zsl",
    )


@cli.command("eval-osr", context_settings=PASSTHROUGH)
@config_option
@path_option("checkpoint", "Trained model checkpoint")
@path_option("bundle", "Dataset bundle")
@path_option("out", "Report JSON to write")
@path_option("output-dir", "Directory for report artifacts")
@click.option("--tune-tau", is_flag=True, help="Tune tau on a validation half of the test split")
@click.pass_context
def eval_osr(ctx, config_path, checkpoint, bundle, out, output_dir, tune_tau):
    """Open-set evaluation: counterfactual-distance rejection"""
    _execute(
        ctx, "eval-osr", "evaluator", config_path,
        {"checkpoint": checkpoint, "bundle": bundle, "out": out, "output_dir": output_dir},
        defaults={"mode": "osr"},
        task="osr",
        tune_tau=tune_tau,
    )


@cli.command("sweep-suc", context_settings=PASSTHROUGH)
@config_option
@path_option("checkpoint", "Trained model checkpoint")
@path_option("bundle", "Dataset bundle")
@path_option("out", "SUC curve CSV to write")
@path_option("output-dir", "Directory for the curve")
@click.pass_context
def sweep_suc(ctx, config_path, checkpoint, bundle, out, output_dir):
    """Seen-unseen curve over the calibration grid"""
    _execute(
        ctx, "sweep-suc", "evaluator", config_path,
        {"checkpoint": checkpoint, "bundle": bundle, "out": out, "output_dir": output_dir},
        defaults={"mode": "zsl"},
        task="suc",
    )


@cli.command(context_settings=PASSTHROUGH)
@config_option
@path_option("checkpoint", "Trained model checkpoint")
@path_option("bundle", "Dataset bundle")
@path_option("out", "Distance CSV to write")
@path_option("output-dir", "Directory for the counterfactual feature dump")
@click.pass_context
def counterfact(ctx, config_path, checkpoint, bundle, out, output_dir):
    """Counterfactuals of every test sample towards every class"""
    _execute(
        ctx, "counterfact", "counterfact", config_path,
        {"checkpoint": checkpoint, "bundle": bundle, "out": out, "output_dir": output_dir},
    )


@cli.command(context_settings=PASSTHROUGH)
@config_option
@path_option("checkpoint", "Trained model checkpoint")
@path_option("bundle", "Dataset bundle")
@path_option("oracle", "Oracle sidecar (default <bundle>.oracle)")
@path_option("out", "Faithfulness JSON to write")
@click.pass_context
def faithfulness(ctx, config_path, checkpoint, bundle, oracle, out):
    """Manifold distance of counterfactuals vs prior generations"""
    _execute(
        ctx, "faithfulness", "faithfulness", config_path,
        {"checkpoint": checkpoint, "bundle": bundle, "oracle": oracle, "out": out},
    )


@cli.command(context_settings=PASSTHROUGH)
@config_option
@path_option("bundle", "Dataset bundle")
@path_option("out", "Ablation JSON to write")
@path_option("output-dir", "Directory for the ablation report")
@click.pass_context
def ablation(ctx, config_path, bundle, out, output_dir):
    """Full model vs the nu = rho = 0 ablation over several seeds"""
    _execute(
        ctx, "ablation", "ablation", config_path,
        {"bundle": bundle, "out": out, "output_dir": output_dir},
    )


@cli.command("list-services")
def list_services():
    """List the pipeline services the engine discovered"""
    engine = GCMEngine()
    engine.initialize()
    table = Table(title="[bold blue]Services[/bold blue]", header_style="bold magenta")
    table.add_column("Name", style="cyan")
    table.add_column("Description")
    for info in engine.list_services():
        table.add_row(info["name"], info["description"])
    console.print(table)
    engine.shutdown()


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Invoke the CLI and return its exit code; usage errors exit 1."""
    try:
        rv = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="gcmcf",
            standalone_mode=False,
        )
    except click.UsageError as e:
        e.show()
        return EXIT_INVALID
    except click.ClickException as e:
        e.show()
        return EXIT_INVALID
    except click.Abort:
        return EXIT_INVALID
    return rv if isinstance(rv, int) else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
