"""Scoring and benchmark orchestration.

Rankings are scored against injected ground truth with precision, recall
and F1 at a cutoff N. ``run_benchmark`` drives the full pipeline per
scenario (generate, fit the invariant graph on the clean prefix, detect
on the anomaly window, run every requested ranking method) and aggregates
both micro-averaged pooled counts and per-scenario mean/std.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .causal import CausalDiscoveryConfig
from .detect import detect_anomaly
from .errors import UndefinedMetric
from .invariant import FccgConfig, fccg_cluster
from .panel import compute_stats, standardize
from .rca import (
    METHODS,
    LbpParams,
    RootCauseRanking,
    ig_rank,
    lbp_ig_rank,
    tcorca_rank,
    threshold_rank,
)
from .synth import ScenarioSpec, planted_partition_scenario, random_scenario, synthesize

REPORT_FORMAT_VERSION = 1

DEFAULT_SWEEP = (2, 5, 8, 11)


def precision_recall_f1(ranking: RootCauseRanking, truth, n: int
                        ) -> tuple[float, float, float]:
    """Overlap metrics between the top-n ranked channels and the truth set."""
    if n < 1:
        raise ValueError(f"cutoff must be >= 1, got {n}")
    truth_set = set(truth)
    if not truth_set:
        raise UndefinedMetric("truth set is empty; recall undefined")
    predicted = [c for c, _ in ranking.entries[:n]]
    tp = len(set(predicted) & truth_set)
    precision = tp / len(predicted) if predicted else 0.0
    recall = tp / len(truth_set)
    f1 = (2.0 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return precision, recall, f1


# ---------------------------------------------------------------------------
# Benchmark configuration and report types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    """Pipeline knobs shared by every scenario in a suite."""

    train_frac: float = 0.6
    fccg: FccgConfig = field(default_factory=FccgConfig)
    causal: CausalDiscoveryConfig = field(
        default_factory=lambda: CausalDiscoveryConfig(tau_max=4, alpha=0.05,
                                                      max_cond=1))
    lbp: LbpParams = field(default_factory=LbpParams)
    k_sigma: float = 3.0
    system_threshold: float = 0.05
    break_ratio_min: float = 0.2

    def to_json(self) -> dict:
        return {
            "train_frac": self.train_frac,
            "fccg": self.fccg.to_json(),
            "causal": {"tau_max": self.causal.tau_max,
                       "alpha": self.causal.alpha,
                       "max_cond": self.causal.max_cond},
            "lbp": {"propagation_p": self.lbp.propagation_p,
                    "damping": self.lbp.damping,
                    "max_iters": self.lbp.max_iters,
                    "tol": self.lbp.tol},
            "k_sigma": self.k_sigma,
            "system_threshold": self.system_threshold,
            "break_ratio_min": self.break_ratio_min,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BenchmarkConfig":
        kwargs = dict(obj)
        if "fccg" in kwargs:
            kwargs["fccg"] = FccgConfig.from_json(kwargs["fccg"])
        if "causal" in kwargs:
            kwargs["causal"] = CausalDiscoveryConfig(**kwargs["causal"])
        if "lbp" in kwargs:
            kwargs["lbp"] = LbpParams(**kwargs["lbp"])
        return cls(**kwargs)


@dataclass(frozen=True)
class ScenarioRow:
    scenario_index: int
    seed: int
    n_anomalies: int
    method: str
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "scenario_index": self.scenario_index,
            "seed": self.seed,
            "n_anomalies": self.n_anomalies,
            "method": self.method,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioRow":
        return cls(**obj)


@dataclass(frozen=True)
class MetricReport:
    """Per-method aggregates plus the raw per-scenario rows.

    ``top_n`` is None when the suite was scored at matched cutoffs (one
    per scenario, equal to its injected count).
    """

    methods: tuple[str, ...]
    top_n: int | None
    rows: tuple[ScenarioRow, ...]
    aggregates: dict
    stage_runtime: dict
    config_fingerprint: str
    partial: bool

    def method_summary(self, method: str) -> dict:
        return self.aggregates[method]

    def to_json(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "methods": list(self.methods),
            "top_n": self.top_n,
            "rows": [r.to_json() for r in self.rows],
            "aggregates": self.aggregates,
            "stage_runtime": self.stage_runtime,
            "config_fingerprint": self.config_fingerprint,
            "partial": self.partial,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        from .errors import FormatVersionError

        version = obj.get("format_version")
        if version != REPORT_FORMAT_VERSION:
            raise FormatVersionError(
                f"report format version {version!r}, "
                f"expected {REPORT_FORMAT_VERSION}"
            )
        return cls(
            methods=tuple(obj["methods"]),
            top_n=None if obj["top_n"] is None else int(obj["top_n"]),
            rows=tuple(ScenarioRow.from_json(r) for r in obj["rows"]),
            aggregates=obj["aggregates"],
            stage_runtime=obj["stage_runtime"],
            config_fingerprint=obj["config_fingerprint"],
            partial=bool(obj["partial"]),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario_index", "seed", "n_anomalies", "method",
                         "tp", "fp", "fn", "precision", "recall", "f1",
                         "error"])
        for r in self.rows:
            writer.writerow([r.scenario_index, r.seed, r.n_anomalies,
                             r.method, r.tp, r.fp, r.fn,
                             repr(float(r.precision)), repr(float(r.recall)),
                             repr(float(r.f1)),
                             "" if r.error is None else r.error])
        return buf.getvalue()


def config_fingerprint(config: BenchmarkConfig, suite: list[ScenarioSpec],
                       methods, top_n: int) -> str:
    payload = {
        "config": config.to_json(),
        "suite": [spec.to_json() for spec in suite],
        "methods": sorted(methods),
        "top_n": top_n,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Scenario pipeline
# ---------------------------------------------------------------------------


def _empty_ranking(method: str, top_n: int) -> RootCauseRanking:
    return RootCauseRanking(method=method, entries=(), top_n=top_n)


def _score_row(index: int, spec: ScenarioSpec, method: str,
               ranking: RootCauseRanking, truth_set: set[int], top_n: int
               ) -> ScenarioRow:
    precision, recall, f1 = precision_recall_f1(ranking, truth_set, top_n)
    predicted = {c for c, _ in ranking.entries[:top_n]}
    tp = len(predicted & truth_set)
    return ScenarioRow(
        scenario_index=index, seed=spec.seed, n_anomalies=spec.n_anomalies,
        method=method, tp=tp, fp=len(predicted) - tp,
        fn=len(truth_set) - tp,
        precision=precision, recall=recall, f1=f1,
    )


def _run_scenario(args) -> tuple[int, list[ScenarioRow], dict]:
    index, spec, config, methods, cutoff = args
    times: dict[str, float] = {}
    rows: list[ScenarioRow] = []

    try:
        t0 = time.perf_counter()
        panel, truth = synthesize(spec)
        times["generate"] = time.perf_counter() - t0
        if not truth.root_causes:
            raise UndefinedMetric("scenario injected no anomalies")
        window = truth.windows[0]
        truth_set = set(truth.root_causes[0])
        # A None cutoff matches the ranking depth to the number of injected
        # channels, the usual convention when the truth-set size varies
        # across scenarios of one suite.
        top_n = cutoff if cutoff is not None else max(1, len(truth_set))

        train_end = max(1, int(round(config.train_frac * spec.n_samples)))
        train_range = (0, min(train_end, window[0]))
        # Channel amplitudes span a wide range; put every channel on the
        # training scale so residual peaks and excursions are comparable.
        panel, _ = standardize(panel, train_range)
        stats = compute_stats(panel, train_range)

        t0 = time.perf_counter()
        graph = fccg_cluster(
            panel, replace(config.fccg, train_range=train_range),
            seed=spec.seed,
        )
        times["fit"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        event = detect_anomaly(graph, panel, window,
                               system_threshold=config.system_threshold,
                               break_ratio_min=config.break_ratio_min)
        times["detect"] = time.perf_counter() - t0

        for method in methods:
            t0 = time.perf_counter()
            if method == "threshold":
                ranking = threshold_rank(panel, stats, window,
                                         k_sigma=config.k_sigma, top_n=top_n)
            elif event is None:
                ranking = _empty_ranking(method, top_n)
            elif method == "ig":
                ranking = ig_rank(event, graph, top_n=top_n)
            elif method == "lbp-ig":
                ranking = lbp_ig_rank(event, graph, params=config.lbp,
                                      top_n=top_n)
            elif method == "tcorca":
                ranking = tcorca_rank(event, config=config.causal, top_n=top_n)
            else:
                raise ValueError(f"unknown method {method!r}")
            times[f"rank_{method}"] = (times.get(f"rank_{method}", 0.0)
                                       + time.perf_counter() - t0)
            rows.append(_score_row(index, spec, method, ranking,
                                   truth_set, top_n))
    except Exception as exc:  # noqa: BLE001 - per-row failure capture
        message = f"{type(exc).__name__}: {exc}"
        rows = [ScenarioRow(scenario_index=index, seed=spec.seed,
                            n_anomalies=spec.n_anomalies, method=method,
                            error=message)
                for method in methods]
    return index, rows, times


def _aggregate(methods, rows: list[ScenarioRow]) -> dict:
    aggregates: dict[str, dict] = {}
    for method in methods:
        ok = [r for r in rows if r.method == method and r.error is None]
        tp = sum(r.tp for r in ok)
        fp = sum(r.fp for r in ok)
        fn = sum(r.fn for r in ok)
        micro_p = tp / (tp + fp) if tp + fp else 0.0
        micro_r = tp / (tp + fn) if tp + fn else 0.0
        micro_f1 = (2 * micro_p * micro_r / (micro_p + micro_r)
                    if micro_p + micro_r > 0 else 0.0)
        summary = {
            "n_scenarios": len(ok),
            "micro_precision": micro_p,
            "micro_recall": micro_r,
            "micro_f1": micro_f1,
        }
        for name in ("precision", "recall", "f1"):
            vals = np.array([getattr(r, name) for r in ok], dtype=float)
            summary[f"mean_{name}"] = float(vals.mean()) if len(vals) else 0.0
            summary[f"std_{name}"] = float(vals.std()) if len(vals) else 0.0
        aggregates[method] = summary
    return aggregates


def run_benchmark(suite: list[ScenarioSpec], methods=METHODS,
                  top_n: int | None = 5,
                  config: BenchmarkConfig | None = None,
                  jobs: int = 1) -> MetricReport:
    """Score every method on every scenario of the suite.

    ``top_n=None`` scores each scenario at a cutoff equal to its own
    number of injected root causes (matched top-k), which keeps scenarios
    with different truth-set sizes comparable. Scenario pipelines are
    independent, so they may run in a process pool; the report is
    assembled by scenario index and is identical for any ``jobs`` value
    (runtimes aside).
    """
    if not suite:
        raise ValueError("benchmark suite is empty")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    if config is None:
        config = BenchmarkConfig()

    tasks = [(i, spec, config, methods, top_n)
             for i, spec in enumerate(suite)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_scenario, tasks))
    else:
        outcomes = [_run_scenario(t) for t in tasks]
    outcomes.sort(key=lambda item: item[0])

    rows: list[ScenarioRow] = []
    stage_runtime: dict[str, float] = {}
    for _, scenario_rows, times in outcomes:
        rows.extend(scenario_rows)
        for stage, seconds in times.items():
            stage_runtime[stage] = stage_runtime.get(stage, 0.0) + seconds

    return MetricReport(
        methods=methods,
        top_n=top_n,
        rows=tuple(rows),
        aggregates=_aggregate(methods, rows),
        stage_runtime={k: stage_runtime[k] for k in sorted(stage_runtime)},
        config_fingerprint=config_fingerprint(config, suite, methods, top_n),
        partial=any(r.error is not None for r in rows),
    )


# ---------------------------------------------------------------------------
# Suites and sweeps
# ---------------------------------------------------------------------------


def default_suite(n_seeds: int = 20, n_anomalies: int = 5,
                  n_channels: int = 30, n_samples: int = 5000,
                  seed0: int = 0, **scenario_kwargs) -> list[ScenarioSpec]:
    """The standard multi-seed benchmark suite."""
    return [
        random_scenario(n_channels=n_channels, n_samples=n_samples,
                        n_anomalies=n_anomalies, seed=seed0 + k,
                        **scenario_kwargs)
        for k in range(n_seeds)
    ]


def sweep_anomaly_counts(counts=DEFAULT_SWEEP, n_seeds: int = 20,
                         methods=METHODS, top_n: int | None = None,
                         config: BenchmarkConfig | None = None,
                         jobs: int = 1,
                         **suite_kwargs) -> dict[int, MetricReport]:
    """One report per injected-anomaly count.

    The sweep defaults to matched cutoffs (see ``run_benchmark``): a
    fixed N would hand scenarios with fewer injections than N a free
    precision penalty and scenarios with more a free recall penalty,
    drowning the method comparison in cutoff artifacts.
    """
    return {
        int(n): run_benchmark(default_suite(n_seeds=n_seeds, n_anomalies=n,
                                            **suite_kwargs),
                              methods=methods, top_n=top_n, config=config,
                              jobs=jobs)
        for n in counts
    }


def plot_data(reports: dict[int, MetricReport]) -> dict:
    """Series for plotting metric curves against the anomaly count."""
    xs = sorted(reports)
    methods = reports[xs[0]].methods if xs else ()
    series = {
        method: {
            metric: [reports[x].aggregates[method][f"mean_{metric}"]
                     for x in xs]
            for metric in ("precision", "recall", "f1")
        }
        for method in methods
    }
    return {"x": [int(x) for x in xs], "series": series}


# ---------------------------------------------------------------------------
# Clustering cost audit
# ---------------------------------------------------------------------------


def run_complexity_audit(d_values=(50, 100, 200), n_seeds: int = 10,
                         n_samples: int = 1500,
                         fccg: FccgConfig | None = None) -> dict:
    """Average pair-fit counts on planted-partition panels.

    Groups are sized to the default cluster cap (ceil(sqrt(D))) so that the
    target partition is recoverable within the cap; the audit reports the
    raw counts and their D^1.5 normalization.
    """
    if fccg is None:
        fccg = FccgConfig()
    counts: dict[int, float] = {}
    for d in d_values:
        group = max(2, math.ceil(math.sqrt(d)))
        totals = []
        for k in range(n_seeds):
            spec = planted_partition_scenario(d, group_size=group,
                                              n_samples=n_samples, seed=k)
            panel, _ = synthesize(spec)
            graph = fccg_cluster(panel, fccg, seed=k)
            totals.append(graph.pair_fit_count)
        counts[int(d)] = float(np.mean(totals))
    return {
        "counts": counts,
        "normalized": {d: counts[d] / d ** 1.5 for d in counts},
        "group_sizes": {int(d): max(2, math.ceil(math.sqrt(d)))
                        for d in d_values},
        "n_seeds": n_seeds,
    }
