import json
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from tubeshell.core.config_manager import Config, load_config, serialize_config
from tubeshell.core.errors import ConfigError, DomainError, GeometryError, TubeshellError
from tubeshell.core.geometry import glue as glue_surface
from tubeshell.core.operators import assemble
from tubeshell.core.profile_manager import ProfileManager
from tubeshell.services.export_service import ARTIFACT_FILE, ExportService, surface_for
from tubeshell.services.pipeline_service import PipelineService
from tubeshell.utils.formatting import jsonable
from tubeshell.utils.logging import configure_logging

app = typer.Typer(
    help="[bold blue]tubeshell[/bold blue] - stable patterns on bent tubes and glued genus-1 surfaces.",
    no_args_is_help=True,
)
console = Console(stderr=True)

EXIT_FAIL = 1
EXIT_USAGE = 2

ConfigOption = typer.Option(None, "--config", "-c", help="Config file (section.key = value lines)")
OutOption = typer.Option(None, "--out", "-o", help="Output directory (overrides output.directory)")
VerboseOption = typer.Option(0, "--verbose", "-v", count=True, help="-v progress, -vv solver detail")


@contextmanager
def _guarded():
    """Map tubeshell errors to exit codes: 2 for config/geometry/usage, 1 otherwise."""
    try:
        yield
    except (ConfigError, GeometryError, DomainError) as exc:
        console.print(f"[red]Error:[/red] {escape(str(exc))}")
        raise typer.Exit(EXIT_USAGE)
    except TubeshellError as exc:
        console.print(f"[red]Failed:[/red] {escape(str(exc))}")
        raise typer.Exit(EXIT_FAIL)


def _setup(config_path: Optional[Path], out: Optional[Path], verbose: int) -> Config:
    configure_logging(verbose)
    config = load_config(config_path)
    if out is not None:
        config = config.model_copy(update={"output": config.output.model_copy(update={"directory": str(out)})})
    return config


def _emit(paths):
    for path in paths:
        typer.echo(str(path))


def _amplitude(base) -> Optional[float]:
    return getattr(base.profile, "amplitude", None)


@app.command()
def synth(config_path: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption, verbose: int = VerboseOption):
    """Synthesize f and the base pattern U_g on the straight tube D."""
    with _guarded():
        config = _setup(config_path, out, verbose)
        service = PipelineService(config)
        with console.status("[bold green]Building base pattern..."):
            base = service.build_base_pattern()

        exporter = ExportService(config.output.directory)
        formats = config.output.formats
        paths = [exporter.write_nonlinearity(base.nl)]
        if "csv" in formats:
            paths.append(exporter.write_field(base.field, "base_field.csv"))
        if "obj" in formats:
            paths.append(exporter.write_obj(base.profile, service.piece_grid, "base.obj"))
        paths.append(exporter.save_artifacts(config, {"base": base.field}, amplitude=_amplitude(base)))

        table = Table(show_header=True, header_style="bold magenta", title="Base pattern")
        for column in ("profile", "beta", "p", "s0", "margin", "lambda1", "lambda1 (axisym.)"):
            table.add_column(column)
        table.add_row(
            repr(base.profile), f"{base.pattern.beta:g}", str(base.pattern.exponent), f"{base.s0:.6g}",
            f"{base.margin:.6g}", f"{base.lambda1:.6g}", f"{base.lambda1_axisymmetric:.6g}",
        )
        console.print(table)
        _emit(paths)


@app.command("continue")
def continue_(config_path: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption, verbose: int = VerboseOption):
    """Continue the base pattern in kappa and write the continuation trace."""
    with _guarded():
        config = _setup(config_path, out, verbose)
        service = PipelineService(config)
        with console.status("[bold green]Building base pattern..."):
            base = service.build_base_pattern()
        with console.status(f"[bold green]Continuing to kappa = {config.continuation.kappa_target:g}..."):
            trace = service.continue_base(base)

        exporter = ExportService(config.output.directory)
        paths = [exporter.write_trace(trace)]
        paths.append(
            exporter.save_artifacts(
                config, {"base": base.field, "piece": trace.last.field},
                amplitude=_amplitude(base), kappa=trace.last.kappa,
            )
        )
        state = "[green]completed[/green]" if trace.completed else f"[yellow]stopped: {trace.stop_reason}[/yellow]"
        console.print(f"Verified |kappa| up to [bold cyan]{trace.kappa_bound:.6g}[/bold cyan] ({state})")
        _emit(paths)


@app.command()
def glue(
    config_path: Optional[Path] = ConfigOption,
    out: Optional[Path] = OutOption,
    n: Optional[int] = typer.Option(None, "--n", "-n", help="Number of copies (default: glue.n or automatic)"),
    verbose: int = VerboseOption,
):
    """Glue 2n copies of M_kappa into a genus-1 surface and write its mesh and pattern."""
    with _guarded():
        config = _setup(config_path, out, verbose)
        if n is not None:
            config = config.model_copy(update={"glue": config.glue.model_copy(update={"n": n})})
        if config.glue.n is not None:
            glue_surface(ProfileManager().build(config.profile), config.glue.n)

        service = PipelineService(config)
        with console.status("[bold green]Building base pattern..."):
            base = service.build_base_pattern()
        with console.status("[bold green]Continuing in kappa..."):
            trace = service.continue_base(base)
        copies = service.choose_copies(base.profile, trace.kappa_bound)
        with console.status(f"[bold green]Gluing {2 * copies} pieces..."):
            glued = service.glue_pattern(base, trace, copies)

        exporter = ExportService(config.output.directory)
        formats = config.output.formats
        paths = []
        if "obj" in formats:
            paths.append(exporter.write_obj(glued.surface, glued.field.grid, "glued.obj"))
        paths.append(exporter.write_field(glued.field, "global_field.csv"))
        paths.append(
            exporter.save_artifacts(
                config, {"base": base.field, "piece": glued.piece, "global": glued.field},
                amplitude=_amplitude(base), n=copies, kappa=glued.surface.kappa,
            )
        )
        console.print(
            f"Glued [bold]{2 * copies}[/bold] copies at kappa = [bold cyan]{glued.surface.kappa:.6g}[/bold cyan] "
            f"(kappa0 = {trace.kappa_bound:.6g})"
        )
        _emit(paths)


@app.command()
def verify(config_path: Optional[Path] = ConfigOption, out: Optional[Path] = OutOption, verbose: int = VerboseOption):
    """Run the full construction and write the verification report."""
    with _guarded():
        config = _setup(config_path, out, verbose)
        console.print(Panel("[bold blue]tubeshell verification[/bold blue]", expand=False))
        with console.status("[bold green]Running pipeline..."):
            report, artifacts = PipelineService(config).run()

        exporter = ExportService(config.output.directory)
        formats = config.output.formats
        paths = [exporter.write_report(report)]
        if "csv" in formats and "trace" in artifacts:
            paths.append(exporter.write_trace(artifacts["trace"]))
        if "csv" in formats and "stability" in artifacts:
            for index, trial in enumerate(artifacts["stability"].trials):
                paths.append(exporter.write_trajectory(trial.trajectory, f"trajectory_{index}.csv"))
        fields = {}
        extra = {}
        if "base" in artifacts:
            fields["base"] = artifacts["base"].field
            extra["amplitude"] = _amplitude(artifacts["base"])
        if "glued" in artifacts:
            glued = artifacts["glued"]
            fields.update(piece=glued.piece, **{"global": glued.field})
            extra.update(n=glued.surface.n, kappa=glued.surface.kappa)
            if "obj" in formats:
                paths.append(exporter.write_obj(glued.surface, glued.field.grid, "glued.obj"))
        if fields:
            paths.append(exporter.save_artifacts(config, fields, **extra))

        verdict = report.verdict
        if verdict.passed:
            console.print("[bold green]PASS[/bold green]")
        else:
            message = escape(verdict.message or "")
            console.print(f"[bold red]FAIL[/bold red] at stage [bold]{verdict.failed_stage}[/bold]: {message}")
        _emit(paths)
        if not verdict.passed:
            raise typer.Exit(EXIT_FAIL)


@app.command()
def export(
    formats: List[str] = typer.Option(["csv"], "--format", "-f", help="obj, csv or json (repeatable)"),
    directory: Path = typer.Option(Path("tubeshell-out"), "--dir", "-d", help="Directory holding stored artifacts"),
    matrix: bool = typer.Option(False, "--matrix", help="Also dump the stiffness matrices as 'i j value'"),
    verbose: int = VerboseOption,
):
    """Re-emit stored artifacts in the requested formats."""
    configure_logging(verbose)
    unknown = [f for f in formats if f not in ("obj", "csv", "json")]
    if unknown:
        console.print(f"[red]Error:[/red] unknown format(s): {', '.join(unknown)}")
        raise typer.Exit(EXIT_USAGE)
    if not (directory / ARTIFACT_FILE).is_file():
        console.print(f"[red]Error:[/red] no stored artifacts in {escape(str(directory))}; run synth, continue, glue or verify first")
        raise typer.Exit(EXIT_USAGE)
    with _guarded():
        exporter = ExportService(directory)
        config, fields, extra = exporter.load_artifacts()
        profile = ProfileManager().build(config.profile, extra.get("amplitude"))
        paths = []
        for key, u in sorted(fields.items()):
            kappa = extra.get("kappa", 0.0) if key == "piece" else 0.0
            surface = surface_for(profile, u.grid, extra.get("n"), kappa)
            if "csv" in formats:
                paths.append(exporter.write_field(u, f"{key}_field.csv"))
            if "obj" in formats:
                paths.append(exporter.write_obj(surface, u.grid, f"{key}.obj"))
            if matrix:
                paths.append(exporter.write_matrix(assemble(surface, u.grid), f"{key}_stiffness.txt"))
        if "json" in formats:
            payload = {
                "config": serialize_config(config),
                "fields": {
                    key: {"grid": [u.grid.n_s, u.grid.n_theta, u.grid.length, u.grid.s_topology.value],
                          "values": jsonable(u.values)}
                    for key, u in sorted(fields.items())
                },
            }
            path = directory / "fields.json"
            path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
            paths.append(path)
        _emit(paths)


if __name__ == "__main__":
    app()
