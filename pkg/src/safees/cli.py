from __future__ import annotations

"""
safees command line.

Subcommands (also available as ``python -m safees.cli``):

- ``simulate``       ES batch run → one CSV per initial condition + summary.json
- ``exact``          exact-flow batch run → CSVs + summary.json
- ``check``          diagnostics suite → report.json (+ text / PDF one-pager)
- ``paper-example``  the three baked-in (c, k) scenarios → per-scenario CSVs + comparison.json

Exit codes: 0 success / all checks pass, 1 check failure or degenerate
oracle input, 2 configuration or usage error, 3 numerical abort.
"""

import json
import logging
from pathlib import Path
from typing import Callable, List, Optional

import typer
from pydantic import ValidationError

from safees.core.api import (
    SimulationResult,
    apply_overrides,
    load_config,
    run_checks,
    run_exact,
    run_reference_example,
    run_simulation,
)
from safees.core.expr import DomainError, ExprSyntaxError
from safees.core.integrator import IntegrationAborted
from safees.core.minimizer import OracleError
from safees.core.validators import ExperimentConfig
from safees.exporters.csv_io import write_trajectories, write_trajectory_csv
from safees.exporters.one_pager import export_one_pager, render_text_report, report_to_pdf, write_model


EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

app = typer.Typer(
    help="Safe extremum-seeking simulation and verification toolkit.",
    no_args_is_help=True,
    add_completion=False,
)

ConfigOption = typer.Option(..., "--config", help="Experiment config (JSON).")
OutOption = typer.Option(None, "--out", help="Output directory (overrides config 'output').")
WorkersOption = typer.Option(None, "--workers", min=1, help="Worker processes for the batch.")
SeedOption = typer.Option(None, "--seed", help="Seed for the random gradient cross-check points.")
COption = typer.Option(None, "--c", help="Override the barrier decay rate c.")
KOption = typer.Option(None, "--k", help="Override the parameter-update gain k.")
TFinalOption = typer.Option(None, "--t-final", help="Override t_final (snapped to the sample grid).")
DtOption = typer.Option(None, "--dt", help="Override the RK4 step dt.")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Log progress at INFO level.")


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _fail(code: int, message: str) -> typer.Exit:
    typer.echo(f"error: {message}", err=True)
    return typer.Exit(code)


def _load(
    config: Path,
    out: Optional[str],
    workers: Optional[int],
    seed: Optional[int],
    c: Optional[float],
    k: Optional[float],
    t_final: Optional[float],
    dt: Optional[float],
) -> ExperimentConfig:
    try:
        cfg = load_config(config)
        return apply_overrides(
            cfg, out=out, workers=workers, seed=seed, c=c, k=k, t_final=t_final, dt=dt
        )
    except FileNotFoundError as exc:
        raise _fail(EXIT_CONFIG, f"config not found: {exc.filename}") from exc
    except ValidationError as exc:
        raise _fail(EXIT_CONFIG, f"invalid config {config}:\n{exc}") from exc
    except (ExprSyntaxError, ValueError) as exc:
        raise _fail(EXIT_CONFIG, str(exc)) from exc


def _write_run(result: SimulationResult, directory: Path, prefix: str) -> None:
    write_trajectories(result.trajectories, directory, prefix)
    if result.probe is not None:
        write_trajectory_csv(result.probe, directory / "probe.csv")
    write_model(result.summary, directory / "summary.json")


def _finish_run(result: SimulationResult, directory: Path) -> None:
    n = len(result.summary.records)
    typer.echo(f"{n} run(s) written to {directory}")
    if result.aborted:
        aborted = [r.index for r in result.summary.records if r.aborted_at is not None]
        raise _fail(EXIT_NUMERICAL, f"runs {aborted} aborted on a non-finite state")


def _simulate_or_abort(
    runner: Callable[[ExperimentConfig], SimulationResult], cfg: ExperimentConfig
) -> SimulationResult:
    try:
        return runner(cfg)
    except ExprSyntaxError as exc:
        raise _fail(EXIT_CONFIG, str(exc)) from exc
    except (IntegrationAborted, DomainError) as exc:
        raise _fail(EXIT_NUMERICAL, str(exc)) from exc
    except ValueError as exc:
        raise _fail(EXIT_CONFIG, str(exc)) from exc


@app.command("simulate")
def simulate_cli(
    config: Path = ConfigOption,
    out: Optional[str] = OutOption,
    workers: Optional[int] = WorkersOption,
    seed: Optional[int] = SeedOption,
    c: Optional[float] = COption,
    k: Optional[float] = KOption,
    t_final: Optional[float] = TFinalOption,
    dt: Optional[float] = DtOption,
    verbose: bool = VerboseOption,
) -> None:
    """Integrate the ES loop from every initial condition of the config."""
    _configure_logging(verbose)
    cfg = _load(config, out, workers, seed, c, k, t_final, dt)
    result = _simulate_or_abort(run_simulation, cfg)
    directory = Path(cfg.output)
    _write_run(result, directory, "es")
    _finish_run(result, directory)


@app.command("exact")
def exact_cli(
    config: Path = ConfigOption,
    out: Optional[str] = OutOption,
    workers: Optional[int] = WorkersOption,
    seed: Optional[int] = SeedOption,
    c: Optional[float] = COption,
    k: Optional[float] = KOption,
    t_final: Optional[float] = TFinalOption,
    dt: Optional[float] = DtOption,
    verbose: bool = VerboseOption,
) -> None:
    """Integrate the exact safety-filtered gradient flow from every initial condition."""
    _configure_logging(verbose)
    cfg = _load(config, out, workers, seed, c, k, t_final, dt)
    result = _simulate_or_abort(run_exact, cfg)
    directory = Path(cfg.output)
    _write_run(result, directory, "exact")
    _finish_run(result, directory)


@app.command("check")
def check_cli(
    config: Path = ConfigOption,
    out: Optional[str] = OutOption,
    workers: Optional[int] = WorkersOption,
    seed: Optional[int] = SeedOption,
    c: Optional[float] = COption,
    k: Optional[float] = KOption,
    t_final: Optional[float] = TFinalOption,
    dt: Optional[float] = DtOption,
    report_pdf: Optional[Path] = typer.Option(
        None, "--report-pdf", help="Also render the report as a one-page PDF."
    ),
    verbose: bool = VerboseOption,
) -> None:
    """Run the diagnostics suite; exit 0 iff every enabled check passes."""
    _configure_logging(verbose)
    cfg = _load(config, out, workers, seed, c, k, t_final, dt)
    try:
        report = run_checks(cfg)
    except OracleError as exc:
        tag = f" [{exc.assumption}]" if exc.assumption else ""
        raise _fail(EXIT_CHECK_FAILED, f"diagnostics aborted{tag}: {exc}") from exc
    except (IntegrationAborted, DomainError) as exc:
        raise _fail(EXIT_NUMERICAL, str(exc)) from exc
    except ValueError as exc:
        raise _fail(EXIT_CONFIG, str(exc)) from exc

    directory = Path(cfg.output)
    write_model(report, directory / "report.json")
    export_one_pager(report, directory / "report.txt", subtitle=cfg.name)
    if report_pdf is not None:
        report_to_pdf(report, report_pdf, metadata={"experiment": cfg.name, "system": cfg.sim.system})
    typer.echo(render_text_report(report, subtitle=cfg.name), nl=False)
    if any(ch.name == "integration" for ch in report.failed()):
        raise typer.Exit(EXIT_NUMERICAL)
    if not report.passed:
        raise typer.Exit(EXIT_CHECK_FAILED)


@app.command("paper-example")
def paper_example_cli(
    out: str = typer.Option("out/reference", "--out", help="Output directory."),
    workers: int = typer.Option(1, "--workers", min=1, help="Worker processes per scenario."),
    scenario: Optional[List[str]] = typer.Option(
        None, "--scenario", help="Run only these scenarios (a, b, c); repeatable."
    ),
    horizon_scale: float = typer.Option(
        1.0, "--horizon-scale", min=1e-6, help="Fraction of the default horizon 40/(c k omega_f)."
    ),
    verbose: bool = VerboseOption,
) -> None:
    """Reproduce the baked-in two-dimensional example: scenarios (a), (b), (c)."""
    from safees.scenarios import scenario_by_name

    _configure_logging(verbose)
    try:
        chosen = None if not scenario else [scenario_by_name(name) for name in scenario]
    except KeyError as exc:
        raise _fail(EXIT_CONFIG, str(exc.args[0])) from exc
    root = Path(out)

    def sink(name: str, result: SimulationResult) -> None:
        _write_run(result, root / f"scenario_{name}", "es")

    try:
        result = run_reference_example(
            scenarios=chosen, horizon_scale=horizon_scale, workers=workers, on_scenario=sink
        )
    except (IntegrationAborted, DomainError) as exc:
        raise _fail(EXIT_NUMERICAL, str(exc)) from exc
    write_model(result.summary, root / "comparison.json")
    typer.echo(json.dumps(result.summary.claims, sort_keys=True))
    if result.aborted:
        raise _fail(EXIT_NUMERICAL, "some reference runs aborted on a non-finite state")


def main() -> None:
    """Console-script entry for ``safees``."""
    app()


if __name__ == "__main__":
    main()
