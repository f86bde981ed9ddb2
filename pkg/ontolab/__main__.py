import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import click

from ontolab import config
from ontolab.cli_reporter import (
    GALLERY_NAMES,
    RunFlags,
    ReportDoc,
    emit_scenario,
    gallery_scenario,
    parse_scenario,
    render_csv,
    render_markdown,
    run_command,
)
from ontolab.dist_core import Backend
from ontolab.errors import OntolabError
from ontolab.theorem_lab import SearchMode

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ASSERT_FAILED = 1
EXIT_USAGE = 2


def _parse_params(values: Sequence[str]) -> Dict[str, Any]:
    params: Dict[str, Any] = {}
    for item in values:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise click.BadParameter(f"expected key=value, got {item!r}", param_hint="--param")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            # "1/2" and other bare words stay strings.
            params[key] = raw
    return params


def _fail(ctx: click.Context, error: Exception) -> None:
    if ctx.obj.get("log_level") == "DEBUG":
        traceback.print_exc()
    click.echo(f"error: {error}", err=True)
    ctx.exit(EXIT_USAGE)


def _emit(ctx: click.Context, report: ReportDoc, out: str, output: Optional[str], assert_pass: bool) -> None:
    text = render_csv(report) if out == "csv" else render_markdown(report)
    if output:
        Path(output).write_text(text, encoding="utf-8", newline="\n")
    else:
        click.echo(text, nl=False)
    if assert_pass and not report.all_passed:
        failed = [row.check for row in report.rows if row.passed is False]
        logger.info("assertion failed for %s", ", ".join(failed))
        ctx.exit(EXIT_ASSERT_FAILED)


def _run(ctx: click.Context, verb: str, scenario_path: Optional[str], flags: RunFlags, opts: Dict[str, Any]) -> None:
    try:
        scenario = parse_scenario(Path(scenario_path).read_bytes()) if scenario_path else None
        report = run_command(verb, scenario, flags)
    except OntolabError as e:
        _fail(ctx, e)
        return
    except OSError as e:
        _fail(ctx, e)
        return
    _emit(ctx, report, opts["out"], opts["output"], opts["assert_pass"])


def report_options(fn):
    """Flags shared by every verb."""
    options = [
        click.option("--backend", type=click.Choice([b.value for b in Backend]), default=None),
        click.option("--tolerance", type=float, default=None),
        click.option("--seed", type=click.IntRange(min=0), default=None),
        click.option("--assert", "assert_pass", is_flag=True, help="Exit 1 when any check fails."),
        click.option("--out", type=click.Choice(["csv", "md"]), default="csv"),
        click.option("--output", type=click.Path(dir_okay=False), default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _flags(backend, tolerance, seed, **extra) -> RunFlags:
    return RunFlags(
        backend=Backend(backend) if backend else None,
        tolerance=tolerance,
        seed=seed,
        **extra,
    )


@click.group()
@click.option(
    "--log-level",
    "log_level",
    default=config.LOG_LEVEL,
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
)
@click.pass_context
def cli(ctx: click.Context, log_level: str) -> None:
    """Check FR, FR', NS and ST on finite models and test the implications between them."""
    log_level = log_level.upper()
    logging.basicConfig(
        level=getattr(logging, log_level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    ctx.ensure_object(dict)
    ctx.obj["log_level"] = log_level


@cli.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@report_options
@click.pass_context
def check(ctx, scenario, backend, tolerance, seed, assert_pass, out, output) -> None:
    """Run the checks listed in SCENARIO."""
    _run(ctx, "check", scenario, _flags(backend, tolerance, seed),
         dict(out=out, output=output, assert_pass=assert_pass))


@cli.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--party", type=click.Choice(["A", "B"]), default="A")
@report_options
@click.pass_context
def trace(ctx, scenario, party, backend, tolerance, seed, assert_pass, out, output) -> None:
    """Residual of every proof step on the model in SCENARIO."""
    _run(ctx, "trace", scenario, _flags(backend, tolerance, seed, party=party),
         dict(out=out, output=output, assert_pass=assert_pass))


@cli.command()
@click.option("--n", "n", type=click.IntRange(min=0), default=1000, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@report_options
@click.pass_context
def sweep(ctx, n, workers, backend, tolerance, seed, assert_pass, out, output) -> None:
    """Certify premises on N random models and report the largest FR deviation."""
    _run(ctx, "sweep", None, _flags(backend, tolerance, seed, n=n, workers=workers),
         dict(out=out, output=output, assert_pass=assert_pass))


@cli.command()
@click.option("--mode", type=click.Choice([m.value for m in SearchMode]), default=SearchMode.NO_ST.value)
@click.option("--budget", type=click.IntRange(min=1), default=None)
@click.option("--penalty-weight", "penalty_weight", type=float, default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@report_options
@click.pass_context
def search(ctx, mode, budget, penalty_weight, workers, backend, tolerance, seed, assert_pass, out, output) -> None:
    """Penalized search for a model violating the mode's target assumption."""
    flags = _flags(
        backend, tolerance, seed, mode=SearchMode(mode), budget=budget, penalty_weight=penalty_weight, workers=workers
    )
    _run(ctx, "search", None, flags, dict(out=out, output=output, assert_pass=assert_pass))


@cli.command()
@click.argument("name", type=click.Choice(GALLERY_NAMES))
@click.option("--param", "params", multiple=True, help="Model parameter as key=value (repeatable).")
@click.option("--emit", "emit", is_flag=True, help="Print the model as a scenario document instead.")
@report_options
@click.pass_context
def gallery(ctx, name, params, emit, backend, tolerance, seed, assert_pass, out, output) -> None:
    """Check all assumptions on the gallery model NAME."""
    flags = _flags(backend, tolerance, seed, gallery=name, params=_parse_params(params))
    if emit:
        try:
            doc, _ = gallery_scenario(
                name,
                flags.params,
                flags.backend or Backend(config.DEFAULT_BACKEND),
                seed if seed is not None else config.DEFAULT_SEED,
            )
        except OntolabError as e:
            _fail(ctx, e)
            return
        text = emit_scenario(doc).decode("utf-8")
        if output:
            Path(output).write_text(text, encoding="utf-8", newline="\n")
        else:
            click.echo(text, nl=False)
        return
    _run(ctx, "gallery", None, flags, dict(out=out, output=output, assert_pass=assert_pass))


if __name__ == "__main__":
    cli()
