"""Command-line entry points: run one experiment, sweep a grid, or validate
a stream spec. Config files are YAML with `stream`, `run`, and `cost`
sections; flags override file values."""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click
import yaml

from .domain import validate_stream
from .harness import (
    STRATEGY_NAMES,
    StreamSpec,
    emit_report,
    generate_stream,
    make_policy,
    sweep,
    write_sweep,
)
from .learner import CostModel
from .runtime import RunConfig, run_stream


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise click.ClickException("config file must hold a mapping")
    return data


def _load_congestion_trace(path: str | None) -> tuple[tuple[float, float], ...]:
    """CSV of time_seconds,bytes_per_second load steps."""
    if path is None:
        return ()
    steps = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("time"):
            continue
        t, b = line.split(",")
        steps.append((float(t), float(b)))
    return tuple(steps)


def _build_spec(cfg: dict, **overrides) -> StreamSpec:
    fields = {f.name for f in dataclasses.fields(StreamSpec)}
    merged = {k: v for k, v in cfg.get("stream", {}).items() if k in fields}
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return StreamSpec(**merged)


def _build_run_config(cfg: dict, **overrides) -> RunConfig:
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    merged = {k: v for k, v in cfg.get("run", {}).items() if k in fields}
    cost_cfg = cfg.get("cost", {})
    if cost_cfg:
        merged["cost"] = CostModel(**cost_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**merged)


@click.group()
def main():
    """Replay-based continual learning over a two-level memory hierarchy."""


stream_options = [
    click.option("--tasks", "n_tasks", type=int, default=None, help="Number of tasks"),
    click.option("--classes-per-task", type=int, default=None),
    click.option("--samples-per-class", type=int, default=None),
    click.option("--dim", "feature_dim", type=int, default=None, help="Feature dimensionality"),
    click.option("--separation", type=float, default=None, help="Class cluster separation"),
    click.option("--stream-seed", type=int, default=None, help="Stream generation seed"),
]


def _apply(options):
    def wrap(f):
        for opt in reversed(options):
            f = opt(f)
        return f

    return wrap


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--strategy", type=click.Choice(STRATEGY_NAMES), default="adaptive")
@click.option("--budget", type=int, default=None, help="Memory budget in samples")
@click.option("--cutline", type=float, default=None)
@click.option("--mode", type=click.Choice(["HU", "LE"]), default=None, help="Selection metric")
@click.option("--epochs", type=int, default=None, help="Epochs per task")
@click.option("--seed", type=int, default=None, help="Run seed")
@click.option("--fixed-ratio", type=float, default=None, help="Pin the swap ratio (disables adaptation)")
@click.option("--bandwidth", type=float, default=None, help="I/O bandwidth in bytes/s")
@click.option("--congestion-trace", type=click.Path(exists=True), default=None,
              help="CSV of time,bytes_per_s external load steps")
@click.option("--outdir", type=click.Path(), default="out")
@click.option("--label", default=None, help="Output file prefix")
@_apply(stream_options)
def run(config_path, strategy, budget, cutline, mode, epochs, seed, fixed_ratio,
        bandwidth, congestion_trace, outdir, label, n_tasks, classes_per_task,
        samples_per_class, feature_dim, separation, stream_seed):
    """Run one strategy over one synthetic stream and write reports."""
    cfg = _load_config(config_path)
    spec = _build_spec(
        cfg,
        n_tasks=n_tasks,
        classes_per_task=classes_per_task,
        samples_per_class=samples_per_class,
        feature_dim=feature_dim,
        separation=separation,
        seed=stream_seed,
    )
    config = _build_run_config(
        cfg,
        budget_samples=budget,
        cutline=cutline,
        selection_mode=mode,
        epochs_per_task=epochs,
        seed=seed,
        fixed_swap_ratio=fixed_ratio,
        io_bandwidth_bytes_per_s=bandwidth,
        external_io_load=_load_congestion_trace(congestion_trace) or None,
    )
    stream = generate_stream(spec)
    policy = make_policy(strategy, stream, config)
    report = run_stream(stream.tasks, stream.probe_sets, config, policy)
    paths = emit_report(report, outdir, label or strategy)
    click.echo(f"final average accuracy: {report.final_average_accuracy:.4f}")
    click.echo(f"total energy: {report.ledger.total:.2f} J "
               f"(profiling {report.ledger.profiling:.2f} J)")
    for name, path in paths.items():
        click.echo(f"  {name}: {path}")


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--strategies", default="adaptive,static,heuristic",
              help="Comma-separated strategy list")
@click.option("--budgets", default="1000,2500,5000", help="Comma-separated budgets")
@click.option("--seeds", default="0,1,2", help="Comma-separated run seeds")
@click.option("--outdir", type=click.Path(), default="out")
@_apply(stream_options)
def sweep_cmd(config_path, strategies, budgets, seeds, outdir, n_tasks,
              classes_per_task, samples_per_class, feature_dim, separation, stream_seed):
    """Run a (strategy x budget x seed) grid and write combined scatter data."""
    cfg = _load_config(config_path)
    spec = _build_spec(
        cfg,
        n_tasks=n_tasks,
        classes_per_task=classes_per_task,
        samples_per_class=samples_per_class,
        feature_dim=feature_dim,
        separation=separation,
        seed=stream_seed,
    )
    config = _build_run_config(cfg)
    points = sweep(
        spec,
        config,
        strategies=[s.strip() for s in strategies.split(",") if s.strip()],
        budgets=[int(b) for b in budgets.split(",")],
        seeds=[int(s) for s in seeds.split(",")],
    )
    path = write_sweep(points, outdir)
    click.echo(f"wrote {len(points)} points to {path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_apply(stream_options)
def validate(config_path, n_tasks, classes_per_task, samples_per_class,
             feature_dim, separation, stream_seed):
    """Generate the stream and check its structural invariants."""
    cfg = _load_config(config_path)
    spec = _build_spec(
        cfg,
        n_tasks=n_tasks,
        classes_per_task=classes_per_task,
        samples_per_class=samples_per_class,
        feature_dim=feature_dim,
        separation=separation,
        seed=stream_seed,
    )
    stream = generate_stream(spec)
    report = validate_stream(stream.tasks, spec.domain_incremental)
    if report.ok:
        click.echo(f"stream ok: {len(stream.tasks)} tasks, "
                   f"{sum(len(t) for t in stream.tasks)} samples")
    else:
        for issue in report.issues:
            click.echo(f"{issue.kind} (task {issue.task_id}): {issue.detail}")
        sys.exit(1)


if __name__ == "__main__":
    main()
