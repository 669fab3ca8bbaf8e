"""Metrics and benchmark orchestration."""

import json

import pytest
from hypothesis import given, strategies as st

from tcorca.errors import FormatVersionError, UndefinedMetric
from tcorca.evaluation import (
    BenchmarkConfig,
    MetricReport,
    config_fingerprint,
    default_suite,
    plot_data,
    precision_recall_f1,
    run_benchmark,
    run_complexity_audit,
    sweep_anomaly_counts,
)
from tcorca.rca import METHODS, RootCauseRanking
from tcorca.synth import Dependency, ScenarioSpec, random_scenario


def ranking_of(channels, method="ig"):
    entries = tuple((c, float(len(channels) - i))
                    for i, c in enumerate(channels))
    return RootCauseRanking(method, entries, top_n=max(1, len(channels)))


def trivial_spec(seed=0):
    """Two children of one source; the injected child is unambiguous."""
    return ScenarioSpec(
        n_channels=3, n_samples=2000, n_sources=1,
        dependencies=(Dependency(0, 1, 2, 1.0), Dependency(0, 2, 3, 1.2)),
        n_anomalies=1, anomaly_kinds=("level-shift",), anomaly_window=150,
        injectable_channels=(1,), anomaly_start=1700, seed=seed,
    )


# ---------------------------------------------------------------------------
# Overlap metrics
# ---------------------------------------------------------------------------

def test_metrics_on_a_perfect_prediction():
    assert precision_recall_f1(ranking_of([0, 1]), {0, 1}, 2) == (1.0, 1.0, 1.0)


def test_metrics_on_a_half_overlap():
    p, r, f1 = precision_recall_f1(ranking_of([0, 2]), {0, 1}, 2)
    assert (p, r, f1) == (0.5, 0.5, 0.5)


def test_metrics_on_a_null_prediction():
    assert precision_recall_f1(ranking_of([]), {0, 1}, 5) == (0.0, 0.0, 0.0)


def test_metrics_respect_the_cutoff():
    p, r, _ = precision_recall_f1(ranking_of([3, 0, 1]), {0, 1}, 1)
    assert (p, r) == (0.0, 0.0)


def test_metrics_reject_empty_truth_and_bad_cutoffs():
    with pytest.raises(UndefinedMetric):
        precision_recall_f1(ranking_of([0]), set(), 1)
    with pytest.raises(ValueError):
        precision_recall_f1(ranking_of([0]), {0}, 0)


@given(st.data())
def test_recall_is_monotone_in_the_cutoff(data):
    n_channels = data.draw(st.integers(2, 12))
    order = data.draw(st.permutations(list(range(n_channels))))
    truth = data.draw(st.sets(st.integers(0, n_channels - 1), min_size=1))
    ranking = ranking_of(order)
    recalls = [precision_recall_f1(ranking, truth, n)[1]
               for n in range(1, n_channels + 1)]
    assert all(b >= a for a, b in zip(recalls, recalls[1:]))
    assert recalls[-1] == 1.0


@given(st.data())
def test_f1_is_the_harmonic_mean(data):
    n_channels = data.draw(st.integers(1, 10))
    order = data.draw(st.permutations(list(range(n_channels))))
    keep = data.draw(st.integers(0, n_channels))
    truth = data.draw(st.sets(st.integers(0, n_channels - 1), min_size=1))
    p, r, f1 = precision_recall_f1(ranking_of(order[:keep]), truth,
                                   max(1, keep))
    if p + r == 0:
        assert f1 == 0.0
    else:
        assert f1 == pytest.approx(2 * p * r / (p + r))


# ---------------------------------------------------------------------------
# Benchmark pipeline
# ---------------------------------------------------------------------------

def test_every_method_solves_the_trivial_scenario():
    report = run_benchmark([trivial_spec()], methods=METHODS, top_n=None)
    assert not report.partial
    for row in report.rows:
        assert row.error is None
        assert row.recall == 1.0
    for method in METHODS:
        assert report.method_summary(method)["mean_recall"] == 1.0


def test_report_is_independent_of_parallelism():
    suite = [trivial_spec(seed=s) for s in (0, 1)]
    serial = run_benchmark(suite, methods=("threshold", "ig"), top_n=1)
    pooled = run_benchmark(suite, methods=("threshold", "ig"), top_n=1,
                           jobs=2)
    assert serial.rows == pooled.rows
    assert serial.aggregates == pooled.aggregates
    assert serial.config_fingerprint == pooled.config_fingerprint


def test_micro_aggregates_recompute_from_rows():
    report = run_benchmark([trivial_spec(seed=s) for s in (0, 1)],
                           methods=("ig",), top_n=2)
    rows = [r for r in report.rows if r.method == "ig" and r.error is None]
    tp = sum(r.tp for r in rows)
    fp = sum(r.fp for r in rows)
    fn = sum(r.fn for r in rows)
    summary = report.method_summary("ig")
    assert summary["n_scenarios"] == len(rows)
    assert summary["micro_precision"] == pytest.approx(tp / (tp + fp))
    assert summary["micro_recall"] == pytest.approx(tp / (tp + fn))


def test_scenarios_without_injections_become_error_rows():
    spec = random_scenario(n_channels=8, n_samples=600, n_anomalies=0, seed=3)
    report = run_benchmark([spec], methods=("threshold",))
    assert report.partial
    assert len(report.rows) == 1
    assert "UndefinedMetric" in report.rows[0].error
    assert report.method_summary("threshold")["n_scenarios"] == 0


def test_run_benchmark_rejects_bad_inputs():
    with pytest.raises(ValueError):
        run_benchmark([], methods=("ig",))
    with pytest.raises(ValueError):
        run_benchmark([trivial_spec()], methods=("oracle",))


def test_report_round_trips_through_json():
    report = run_benchmark([trivial_spec()], methods=("threshold", "ig"),
                           top_n=1)
    back = MetricReport.from_json(json.loads(json.dumps(report.to_json())))
    assert back.rows == report.rows
    assert back.aggregates == report.aggregates
    assert back.methods == report.methods
    assert back.top_n == report.top_n
    assert back.config_fingerprint == report.config_fingerprint
    stale = report.to_json()
    stale["format_version"] = 99
    with pytest.raises(FormatVersionError):
        MetricReport.from_json(stale)


def test_report_csv_has_one_line_per_row():
    report = run_benchmark([trivial_spec()], methods=("threshold", "ig"),
                           top_n=1)
    lines = report.to_csv().splitlines()
    assert lines[0].startswith("scenario_index,seed,")
    assert len(lines) == 1 + len(report.rows)


def test_fingerprint_tracks_config_and_suite():
    suite = [trivial_spec()]
    base = config_fingerprint(BenchmarkConfig(), suite, METHODS, 5)
    assert base == config_fingerprint(BenchmarkConfig(), suite, METHODS, 5)
    assert base != config_fingerprint(BenchmarkConfig(), suite, METHODS, 3)
    assert base != config_fingerprint(BenchmarkConfig(k_sigma=4.0), suite,
                                      METHODS, 5)
    assert base != config_fingerprint(BenchmarkConfig(),
                                      [trivial_spec(seed=9)], METHODS, 5)


# ---------------------------------------------------------------------------
# Suites, sweeps and the clustering audit
# ---------------------------------------------------------------------------

def test_default_suite_shape():
    suite = default_suite(n_seeds=20, n_anomalies=5)
    assert len(suite) == 20
    assert len({spec.seed for spec in suite}) == 20
    for spec in suite:
        assert spec.n_channels == 30
        assert spec.n_samples == 5000
        assert spec.n_anomalies == 5


def test_sweep_produces_one_report_per_count():
    reports = sweep_anomaly_counts(counts=(1, 2), n_seeds=1,
                                   methods=("threshold", "ig"),
                                   n_channels=12, n_samples=1200)
    assert sorted(reports) == [1, 2]
    for count, report in reports.items():
        assert report.top_n is None
        assert len(report.rows) == 2
        assert all(r.n_anomalies == count for r in report.rows)
    data = plot_data(reports)
    assert data["x"] == [1, 2]
    for method in ("threshold", "ig"):
        for metric in ("precision", "recall", "f1"):
            assert len(data["series"][method][metric]) == 2


def test_complexity_audit_reports_normalized_counts():
    audit = run_complexity_audit(d_values=(12, 20), n_seeds=1, n_samples=600)
    assert sorted(audit["counts"]) == [12, 20]
    for d, count in audit["counts"].items():
        assert count > 0
        assert audit["normalized"][d] == pytest.approx(count / d ** 1.5)
    assert audit["group_sizes"] == {12: 4, 20: 5}
    assert audit["n_seeds"] == 1
