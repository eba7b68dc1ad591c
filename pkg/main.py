"""Command-line interface for anisopt."""

import dataclasses
import json
import logging
from pathlib import Path
from typing import Any, Callable, Optional, Tuple

import click
from rich.console import Console
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from anisopt import APP_NAME, AnisoptError, ResultStore, RunManifest, parse_config, run
from anisopt.config import DEFAULT_OUTPUT_DIR
from anisopt.run_config import RunConfig, example_config_lines

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

console = Console()

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_ERROR = 2


class AnisoptCLI:
    """Runs configured experiments and renders their manifests."""

    def __init__(self) -> None:
        """Initialize the CLI application."""
        self.console = console

    def execute(self, config: RunConfig) -> RunManifest:
        """Run ``config`` behind a spinner.

        Args:
            config: Validated run configuration.

        Returns:
            The run manifest.
        """
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=self.console,
            transient=True,
        ) as progress:
            progress.add_task(f"Running {config.subcommand}...", total=None)
            return run(config)

    def show_manifest(self, manifest: RunManifest) -> None:
        """Display the checks and outputs of a finished run."""
        table = Table(title=f"{APP_NAME} {manifest.subcommand}")
        table.add_column("Check", style="cyan")
        table.add_column("Result", style="green")
        for name, ok in manifest.checks.items():
            table.add_row(name, "[green]pass[/green]" if ok else "[red]FAIL[/red]")
        self.console.print(table)

        if manifest.passed:
            status = "[green]all checks passed[/green]"
        else:
            status = "[red]checks failed[/red]"
        summary = (
            f"{status}\n"
            f"wall time: {manifest.wall_time:.2f}s\n"
            f"config hash: {manifest.config_hash[:16]}\n"
            f"outputs: {', '.join(manifest.outputs)}"
        )
        self.console.print(Panel(summary, title="Run summary"))

    def list_manifests(self, output_dir: Path) -> None:
        """List past runs found under ``output_dir``."""
        manifests = ResultStore(output_dir).list_manifests()
        if not manifests:
            self.console.print(f"[yellow]No manifests found in {output_dir}.[/yellow]")
            return

        table = Table(title="Runs")
        table.add_column("Directory", style="cyan")
        table.add_column("Subcommand", style="magenta")
        table.add_column("Finished", style="green")
        table.add_column("Passed", style="yellow")
        for manifest in manifests:
            table.add_row(
                manifest.get("directory", ""),
                manifest.get("subcommand", ""),
                manifest.get("finished_at", "")[:19],
                str(manifest.get("passed", "")),
            )
        self.console.print(table)


def _report_error(error: AnisoptError) -> None:
    logger.error(f"{type(error).__name__}: {error}")
    record = {"error": type(error).__name__, "message": str(error)}
    click.echo(json.dumps(record), err=True)


def _run_command(
    ctx: click.Context,
    subcommand: str,
    config_path: Optional[Path],
    overrides: Tuple[str, ...],
    output_dir: Optional[Path],
) -> None:
    cli = AnisoptCLI()
    try:
        config = parse_config(config_path, overrides, subcommand)
        if output_dir is not None:
            config = dataclasses.replace(config, output_dir=Path(output_dir))
        manifest = cli.execute(config)
    except AnisoptError as e:
        _report_error(e)
        ctx.exit(EXIT_ERROR)
        return
    cli.show_manifest(manifest)
    ctx.exit(EXIT_OK if manifest.passed else EXIT_CHECKS_FAILED)


def run_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Options shared by every experiment subcommand."""
    func = click.option(
        "--output-dir",
        type=click.Path(file_okay=False, path_type=Path),
        default=None,
        help=f"Directory for CSV/JSON outputs (default: {DEFAULT_OUTPUT_DIR}).",
    )(func)
    func = click.option(
        "--set",
        "overrides",
        multiple=True,
        metavar="SECTION.KEY=VALUE",
        help="Override a config value, e.g. --set problem.p=3.",
    )(func)
    func = click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False, path_type=Path),
        default=None,
        help="TOML run configuration.",
    )(func)
    return func


@click.group(epilog="Minimal config:\n\n" + "\n\n".join(example_config_lines()))
@click.option("--verbose", is_flag=True, help="Log per-iteration solver traces.")
def main(verbose: bool) -> None:
    """anisopt - optimal control in the coefficients of an anisotropic p-Laplacian."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@main.command("solve-state")
@run_options
@click.pass_context
def solve_state_command(ctx: click.Context, config_path, overrides, output_dir) -> None:
    """Solve the regularized state equation for one control."""
    _run_command(ctx, "solve-state", config_path, overrides, output_dir)


@main.command("solve-hammerstein")
@run_options
@click.pass_context
def solve_hammerstein_command(ctx: click.Context, config_path, overrides, output_dir) -> None:
    """Solve the state and then the Hammerstein equation."""
    _run_command(ctx, "solve-hammerstein", config_path, overrides, output_dir)


@main.command("optimize")
@run_options
@click.pass_context
def optimize_command(ctx: click.Context, config_path, overrides, output_dir) -> None:
    """Minimize the tracking cost over a control parameterization."""
    _run_command(ctx, "optimize", config_path, overrides, output_dir)


@main.command("sweep")
@run_options
@click.pass_context
def sweep_command(ctx: click.Context, config_path, overrides, output_dir) -> None:
    """Run a regularization sweep (coupled when a kernel is configured)."""
    _run_command(ctx, "sweep", config_path, overrides, output_dir)


@main.command("check-inequalities")
@run_options
@click.pass_context
def check_inequalities_command(ctx: click.Context, config_path, overrides, output_dir) -> None:
    """Run the seeded inequality battery."""
    _run_command(ctx, "check-inequalities", config_path, overrides, output_dir)


@main.command("runs")
@click.option(
    "--output-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=DEFAULT_OUTPUT_DIR,
    help="Directory to scan for manifests.",
)
def runs_command(output_dir: Path) -> None:
    """List past runs and whether their checks passed."""
    AnisoptCLI().list_manifests(output_dir)


if __name__ == "__main__":
    main()
