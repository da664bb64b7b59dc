"""Command-line client for the pipeline service.

By default each command talks to an in-process copy of the service app;
pass --server to target a remote instance instead. Exit codes: 0 success,
1 internal failure, 2 missing or invalid input.
"""

from __future__ import annotations

import dataclasses
import json
import sys

import click
import httpx

from .errors import RevsignalError
from .pipeline import build_run_config, parse_config_file


def _make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app, raise_server_exceptions=False)


def _effective_config(ctx: click.Context, **extra) -> dict:
    params = ctx.obj
    file_values = parse_config_file(params["config"]) if params["config"] else {}
    overrides = {k: v for k, v in {
        "seed": params["seed"],
        "jobs": params["jobs"],
        "out": params["out"],
        "dataset": params["dataset"],
        **extra,
    }.items() if v is not None}
    config = build_run_config(file_values, overrides)
    return dataclasses.asdict(config)


def _post(ctx: click.Context, path: str, payload: dict) -> dict:
    with _make_client(ctx.obj["server"]) as client:
        response = client.post(path, json=payload)
    if response.status_code >= 500:
        click.echo(f"error: internal failure: {response.text}", err=True)
        ctx.exit(1)
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        click.echo(f"error: {detail}", err=True)
        ctx.exit(2)
    return response.json()


def _print_summary(summary: dict, indent: str = "") -> None:
    for key in summary:
        value = summary[key]
        if isinstance(value, dict):
            click.echo(f"{indent}{key}:")
            _print_summary(value, indent + "  ")
        else:
            click.echo(f"{indent}{key}: {value}")


@click.group()
@click.option("--config", type=click.Path(), default=None,
              help="Flat key=value config file.")
@click.option("--seed", type=int, default=None, help="Random seed.")
@click.option("--jobs", type=int, default=None, help="Parallel workers.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--dataset", type=click.Path(), default=None, help="Dataset JSONL path.")
@click.option("--server", default=None, help="Remote service URL (default: in-process).")
@click.pass_context
def main(ctx, config, seed, jobs, out, dataset, server):
    """Mine review histories and model reviewer participation."""
    ctx.obj = {"config": config, "seed": seed, "jobs": jobs, "out": out,
               "dataset": dataset, "server": server}


def _stage_command(ctx: click.Context, stage: str, **extra) -> None:
    try:
        config = _effective_config(ctx, **extra)
    except RevsignalError as exc:
        click.echo(f"error: {exc}", err=True)
        ctx.exit(2)
    data = _post(ctx, f"/{stage}", {"config": config})
    _print_summary(data["summary"])


@main.command()
@click.option("--url", "gerrit_url", default=None, help="Review server base URL.")
@click.option("--query", "gerrit_query", default=None, help="Change search query.")
@click.pass_context
def ingest(ctx, gerrit_url, gerrit_query):
    """Fetch changes from a review server into a JSONL dump."""
    _stage_command(ctx, "ingest", gerrit_url=gerrit_url, gerrit_query=gerrit_query)


@main.command()
@click.option("--bots-file", default=None, type=click.Path(),
              help="File with one known bot account id per line.")
@click.pass_context
def prepare(ctx, bots_file):
    """Filter relevant changes and label participation decisions."""
    _stage_command(ctx, "prepare", bots_file=bots_file)


@main.command()
@click.option("--subsystem-rule", default=None,
              type=click.Choice(["project", "top_dir"]),
              help="How changes map to subsystems.")
@click.pass_context
def metrics(ctx, subsystem_rule):
    """Compute the per-invitation metric table."""
    _stage_command(ctx, "metrics", subsystem_rule=subsystem_rule)


@main.command()
@click.option("--model-set", default=None, type=click.Choice(["both", "proposed", "baseline"]))
@click.option("--where", default=None, help="Instance filter, e.g. core_member=true.")
@click.option("--budget", type=int, default=None, help="Override the d.f. budget.")
@click.pass_context
def fit(ctx, model_set, where, budget):
    """Screen variables and fit the participation models."""
    _stage_command(ctx, "fit", model_set=model_set, where=where, budget=budget)


@main.command()
@click.option("--iterations", type=int, default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--model-set", default=None, type=click.Choice(["both", "proposed", "baseline"]))
@click.option("--where", default=None, help="Instance filter, e.g. core_member=true.")
@click.pass_context
def evaluate(ctx, iterations, threshold, model_set, where):
    """Bootstrap the performance measures and compare the models."""
    _stage_command(ctx, "evaluate", iterations=iterations, threshold=threshold,
                   model_set=model_set, where=where)


@main.command()
@click.option("--iterations", type=int, default=None)
@click.option("--model-set", default=None, type=click.Choice(["both", "proposed", "baseline"]))
@click.option("--where", default=None, help="Instance filter, e.g. core_member=true.")
@click.pass_context
def explain(ctx, iterations, model_set, where):
    """Rank variables by explanatory power and export effect curves."""
    _stage_command(ctx, "explain", iterations=iterations, model_set=model_set,
                   where=where)


@main.command()
@click.option("--hexbin-width", type=float, default=None)
@click.pass_context
def describe(ctx, hexbin_width):
    """Summarize responsiveness and community structure."""
    _stage_command(ctx, "describe", hexbin_width=hexbin_width)


@main.command()
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Model artifact (default: <out>/model_proposed.json).")
@click.option("--project", default="", help="Project of the new change.")
@click.option("--subsystem", default=None, help="Subsystem override.")
@click.option("--module", "modules", multiple=True, required=True,
              help="Impacted module directory (repeatable).")
@click.option("--author", required=True, help="Account id of the change author.")
@click.option("--patch-size", type=int, default=0, help="Churned lines.")
@click.option("--candidate", "candidates", multiple=True, required=True,
              help="Candidate reviewer account id (repeatable).")
@click.option("--as-of", required=True, help="Instant to evaluate history at (ISO-8601).")
@click.option("--min-prob", type=float, default=None,
              help="Mark candidates below this score as likely unresponsive.")
@click.pass_context
def recommend(ctx, model_path, project, subsystem, modules, author, patch_size,
              candidates, as_of, min_prob):
    """Rank candidate reviewers by estimated participation likelihood."""
    try:
        config = _effective_config(ctx)
    except RevsignalError as exc:
        click.echo(f"error: {exc}", err=True)
        ctx.exit(2)
    payload = {
        "config": config,
        "change": {
            "project": project,
            "subsystem": subsystem,
            "modules": list(modules),
            "author": author,
            "patch_size": patch_size,
        },
        "candidates": list(candidates),
        "as_of": as_of,
        "model_path": model_path,
        "min_prob": min_prob,
    }
    data = _post(ctx, "/recommend", payload)
    click.echo(data["note"])
    for entry in data["rankings"]:
        line = f"{entry['reviewer']}  {entry['probability']:.4f}"
        if entry.get("cold_start"):
            line += "  (cold start)"
        if entry.get("recommended") is False:
            line += "  [likely unresponsive]"
        click.echo(line)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the pipeline service over HTTP."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
