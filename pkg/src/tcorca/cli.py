"""Command-line entry points.

One binary with subcommands covering the whole workflow: synthesize a
benchmark panel, fit the invariant graph, scan for anomaly events, rank
root causes, and run the full multi-seed benchmark. Every command is
deterministic given its config and seed; artifacts are JSON (with a
format_version field) or CSV. Exit codes: 0 ok, 2 invalid spec/input,
3 fit found no invariants, 4 model/panel mismatch, 5 missing input file,
6 benchmark produced no usable rows.

Set TCORCA_LOG_LEVEL (DEBUG/INFO/WARNING/ERROR) to control verbosity.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .config import RunConfig, dump_config, load_config
from .detect import load_event, save_event, scan_windows
from .errors import (
    InvalidSpec,
    MalformedInput,
    NoInvariantsFound,
    TcorcaError,
)
from .evaluation import (
    plot_data,
    run_benchmark,
    default_suite,
    sweep_anomaly_counts,
)
from .invariant import fccg_cluster, graph_from_json, load_graph_document, save_graph
from .panel import ChannelStats, compute_stats, impute_missing, load_panel, save_panel, smooth
from .rca import (
    METHODS,
    ig_rank,
    lbp_ig_rank,
    save_ranking,
    tcorca_rank,
    threshold_rank,
)
from .synth import ScenarioSpec, random_scenario, save_truth, synthesize

log = logging.getLogger("tcorca")

EXIT_SPEC = 2
EXIT_FIT = 3
EXIT_MISMATCH = 4
EXIT_MISSING = 5
EXIT_BENCH = 6


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _resolve_config(config_path: str | None, seed: int | None,
                    out_dir: str | None) -> RunConfig:
    try:
        cfg = load_config(config_path) if config_path else RunConfig()
    except FileNotFoundError:
        _fail(EXIT_MISSING, f"config file not found: {config_path}")
    except (TcorcaError, json.JSONDecodeError, TypeError, ValueError) as exc:
        _fail(EXIT_SPEC, f"bad config: {exc}")
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = replace(cfg, paths=replace(cfg.paths, out_dir=out_dir))
    return cfg


def _maybe_dump(cfg: RunConfig, dump: bool) -> bool:
    if dump:
        click.echo(dump_config(cfg))
    return dump


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.paths.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _scenario_from(cfg: RunConfig) -> ScenarioSpec:
    sc = cfg.scenario
    if sc.file:
        try:
            with open(sc.file, "r") as fh:
                return ScenarioSpec.from_json(json.load(fh))
        except FileNotFoundError:
            _fail(EXIT_MISSING, f"scenario file not found: {sc.file}")
    return random_scenario(
        n_channels=sc.n_channels, n_samples=sc.n_samples,
        n_sources=sc.n_sources,
        n_anomalies=sc.n_anomalies, anomaly_kinds=sc.anomaly_kinds,
        anomaly_window=sc.anomaly_window, noise_std=sc.noise_std,
        propagate=sc.propagate, seed=cfg.seed,
    )


def _load_panel_checked(path: str | None, cfg: RunConfig):
    source = path or cfg.paths.panel
    if not source:
        _fail(EXIT_MISSING, "no panel path given (--panel or paths.panel)")
    try:
        panel = load_panel(source)
    except FileNotFoundError:
        _fail(EXIT_MISSING, f"panel file not found: {source}")
    except MalformedInput as exc:
        _fail(EXIT_SPEC, f"bad panel: {exc}")
    if panel.missing_mask.any():
        panel = impute_missing(panel, cfg.preprocess.impute)
    if cfg.preprocess.smooth_window > 1:
        panel = smooth(panel, cfg.preprocess.smooth_window)
    return panel


def _load_model(path: str | None, cfg: RunConfig):
    source = path or cfg.paths.model
    if not source:
        _fail(EXIT_MISSING, "no model path given (--model or paths.model)")
    try:
        doc = load_graph_document(source)
    except FileNotFoundError:
        _fail(EXIT_MISSING, f"model file not found: {source}")
    try:
        graph = graph_from_json(doc)
        stats = (ChannelStats.from_json(doc["stats"])
                 if "stats" in doc else None)
    except (TcorcaError, KeyError, TypeError, ValueError) as exc:
        _fail(EXIT_SPEC, f"bad model file: {exc}")
    return graph, stats


@click.group()
def main() -> None:
    """Root-cause analysis for multivariate KPI panels."""
    level = os.environ.get("TCORCA_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", type=str, default=None,
              help="Run config JSON.")
@click.option("--seed", type=int, default=None, help="Override config seed.")
@click.option("--out-dir", type=str, default=None, help="Output directory.")
@click.option("--dump-config", "dump", is_flag=True,
              help="Print the effective config and exit.")
def synth(config_path, seed, out_dir, dump):
    """Generate a synthetic panel and its ground truth."""
    cfg = _resolve_config(config_path, seed, out_dir)
    if _maybe_dump(cfg, dump):
        return
    try:
        spec = _scenario_from(cfg)
        panel, truth = synthesize(spec)
    except InvalidSpec as exc:
        _fail(EXIT_SPEC, str(exc))
    out = _out_dir(cfg)
    panel_path = out / "panel.csv"
    truth_path = out / "truth.json"
    save_panel(panel, panel_path)
    save_truth(truth, truth_path)
    click.echo(f"wrote {panel_path} and {truth_path}")


@main.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--panel", "panel_path", type=str, default=None)
@click.option("--out-dir", type=str, default=None)
@click.option("--dump-config", "dump", is_flag=True)
def fit(config_path, seed, panel_path, out_dir, dump):
    """Fit the invariant graph on a panel."""
    cfg = _resolve_config(config_path, seed, out_dir)
    if _maybe_dump(cfg, dump):
        return
    panel = _load_panel_checked(panel_path, cfg)
    try:
        graph = fccg_cluster(panel, cfg.fccg, seed=cfg.seed)
    except NoInvariantsFound as exc:
        _fail(EXIT_FIT, str(exc))
    except (InvalidSpec, MalformedInput) as exc:
        _fail(EXIT_SPEC, str(exc))
    stats = compute_stats(panel, cfg.fccg.train_range)
    out = _out_dir(cfg)
    model_path = out / "model.json"
    save_graph(graph, model_path, extra={"stats": stats.to_json()})
    click.echo(
        f"clusters={len(graph.clusters)} edges={len(graph.edges)} "
        f"pair_fits={graph.pair_fit_count} -> {model_path}"
    )


@main.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--panel", "panel_path", type=str, default=None)
@click.option("--model", "model_path", type=str, default=None)
@click.option("--window", type=int, default=None, help="Window length.")
@click.option("--out-dir", type=str, default=None)
@click.option("--dump-config", "dump", is_flag=True)
def detect(config_path, panel_path, model_path, window, out_dir, dump):
    """Scan a panel for broken-invariant events."""
    cfg = _resolve_config(config_path, None, out_dir)
    if window is not None:
        cfg = replace(cfg, detect=replace(cfg.detect, window=window))
    if _maybe_dump(cfg, dump):
        return
    graph, _ = _load_model(model_path, cfg)
    panel = _load_panel_checked(panel_path, cfg)
    missing = [name for name in graph.channel_names
               if name not in panel.channel_names]
    if missing or graph.channel_names != panel.channel_names:
        what = (f"panel is missing model channels: {missing}" if missing
                else "panel channels differ from the model's")
        _fail(EXIT_MISMATCH, what)
    try:
        events = scan_windows(graph, panel, cfg.detect.window,
                              stride=cfg.detect.stride,
                              system_threshold=cfg.detect.system_threshold,
                              break_ratio_min=cfg.detect.break_ratio_min)
    except TcorcaError as exc:
        _fail(EXIT_SPEC, str(exc))
    out = _out_dir(cfg)
    for k, event in enumerate(events):
        save_event(event, out / f"event_{k:04d}.json")
    click.echo(f"{len(events)} events")
    for event in events:
        names = [graph.channel_names[c] for c in event.anomalous_channels]
        click.echo(f"  window={event.window} channels={','.join(names)}")


@main.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--method", type=click.Choice(METHODS), default=None)
@click.option("--top-n", type=int, default=None)
@click.option("--event", "event_path", type=str, default=None)
@click.option("--model", "model_path", type=str, default=None)
@click.option("--panel", "panel_path", type=str, default=None)
@click.option("--out-dir", type=str, default=None)
@click.option("--dump-config", "dump", is_flag=True)
def rca(config_path, method, top_n, event_path, model_path, panel_path,
        out_dir, dump):
    """Rank root causes for a detected event."""
    cfg = _resolve_config(config_path, None, out_dir)
    overrides = {}
    if method is not None:
        overrides["method"] = method
    if top_n is not None:
        overrides["top_n"] = top_n
    if overrides:
        cfg = replace(cfg, rca=replace(cfg.rca, **overrides))
    if _maybe_dump(cfg, dump):
        return
    source = event_path or cfg.paths.event
    if not source:
        _fail(EXIT_MISSING, "no event path given (--event or paths.event)")
    try:
        event = load_event(source)
    except FileNotFoundError:
        _fail(EXIT_MISSING, f"event file not found: {source}")
    except TcorcaError as exc:
        _fail(EXIT_SPEC, f"bad event file: {exc}")

    method = cfg.rca.method
    top_n = cfg.rca.top_n
    try:
        if method == "threshold":
            graph, stats = _load_model(model_path, cfg)
            if stats is None:
                _fail(EXIT_SPEC, "model file carries no channel stats")
            panel = _load_panel_checked(panel_path, cfg)
            if panel.channel_names != graph.channel_names:
                _fail(EXIT_MISMATCH, "panel channels differ from the model's")
            ranking = threshold_rank(panel, stats, event.window,
                                     k_sigma=cfg.rca.k_sigma, top_n=top_n)
        elif method == "tcorca":
            ranking = tcorca_rank(event, config=cfg.causal, top_n=top_n)
        else:
            graph, _ = _load_model(model_path, cfg)
            if graph.channel_names != event.channel_names:
                _fail(EXIT_MISMATCH, "event channels differ from the model's")
            if method == "ig":
                ranking = ig_rank(event, graph, top_n=top_n)
            else:
                ranking = lbp_ig_rank(event, graph, params=cfg.lbp,
                                      top_n=top_n)
    except TcorcaError as exc:
        _fail(EXIT_SPEC, str(exc))

    out = _out_dir(cfg)
    ranking_path = out / f"ranking_{method}.json"
    save_ranking(ranking, ranking_path)
    click.echo(f"method={method} top_n={top_n}")
    names = event.channel_names
    for rank, (channel, score) in enumerate(ranking.entries, start=1):
        label = names[channel] if channel < len(names) else str(channel)
        click.echo(f"  {rank:2d}. {label}  score={score:.6g}")
    if not ranking.entries:
        click.echo("  (empty ranking)")


@main.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--method", "methods_opt", type=str, default=None,
              help="Comma-separated subset of methods.")
@click.option("--top-n", type=int, default=None)
@click.option("--out-dir", type=str, default=None)
@click.option("--plot-data", "plot_flag", is_flag=True,
              help="Also write plot_data.json (sweep mode).")
@click.option("--jobs", type=int, default=None)
@click.option("--dump-config", "dump", is_flag=True)
def bench(config_path, seed, methods_opt, top_n, out_dir, plot_flag, jobs,
          dump):
    """Run the multi-seed benchmark suite."""
    cfg = _resolve_config(config_path, seed, out_dir)
    if _maybe_dump(cfg, dump):
        return
    methods = cfg.bench.methods
    if methods_opt:
        methods = tuple(m.strip() for m in methods_opt.split(",") if m.strip())
        for m in methods:
            if m not in METHODS:
                _fail(EXIT_SPEC, f"unknown method {m!r}")
    n = top_n if top_n is not None else cfg.rca.top_n
    n_jobs = jobs if jobs is not None else cfg.bench.jobs
    bench_config = cfg.benchmark_config()
    sc = cfg.scenario
    suite_kwargs = dict(
        n_channels=sc.n_channels, n_samples=sc.n_samples,
        n_sources=sc.n_sources,
        anomaly_kinds=sc.anomaly_kinds, anomaly_window=sc.anomaly_window,
        noise_std=sc.noise_std, propagate=sc.propagate,
        seed0=cfg.seed,
    )
    out = _out_dir(cfg)

    try:
        if cfg.bench.sweep:
            reports = sweep_anomaly_counts(
                counts=cfg.bench.sweep, n_seeds=cfg.bench.n_seeds,
                methods=methods, top_n=n, config=bench_config, jobs=n_jobs,
                **suite_kwargs)
        else:
            suite = default_suite(n_seeds=cfg.bench.n_seeds,
                                  n_anomalies=cfg.bench.n_anomalies,
                                  **suite_kwargs)
            reports = {cfg.bench.n_anomalies: run_benchmark(
                suite, methods=methods, top_n=n, config=bench_config,
                jobs=n_jobs)}
    except TcorcaError as exc:
        _fail(EXIT_SPEC, str(exc))

    all_failed = all(
        r.error is not None for rep in reports.values() for r in rep.rows
    )
    for count, report in sorted(reports.items()):
        suffix = f"_n{count}" if len(reports) > 1 else ""
        with open(out / f"report{suffix}.json", "w") as fh:
            fh.write(json.dumps(report.to_json(), indent=2, sort_keys=True)
                     + "\n")
        with open(out / f"report{suffix}.csv", "w") as fh:
            fh.write(report.to_csv())
        click.echo(f"n_anomalies={count}:")
        for m in report.methods:
            agg = report.aggregates[m]
            click.echo(
                f"  {m:10s} f1={agg['mean_f1']:.3f}"
                f"+/-{agg['std_f1']:.3f}"
                f" recall={agg['mean_recall']:.3f}"
                f" precision={agg['mean_precision']:.3f}"
            )
        if report.partial:
            click.echo("  (partial: some scenarios failed)")
    if plot_flag:
        with open(out / "plot_data.json", "w") as fh:
            fh.write(json.dumps(plot_data(reports), indent=2, sort_keys=True)
                     + "\n")
        click.echo(f"wrote {out / 'plot_data.json'}")
    if all_failed:
        _fail(EXIT_BENCH, "every scenario failed")


if __name__ == "__main__":
    main()
