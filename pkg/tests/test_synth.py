"""Synthetic scenario generation and anomaly injection."""

import math

import numpy as np
import pytest

from tcorca.errors import InvalidSpec
from tcorca.synth import (
    AMPLITUDE_FACTOR,
    Dependency,
    GroundTruth,
    ScenarioSpec,
    SHIFT_SIGMA,
    SPIKE_SIGMA,
    generate_panel,
    group_assignment,
    inject_anomalies,
    load_truth,
    planted_partition_scenario,
    random_scenario,
    save_truth,
    synthesize,
)


def chain_spec(**overrides):
    base = dict(
        n_channels=3,
        n_samples=1200,
        n_sources=1,
        dependencies=(Dependency(0, 1, 1, 1.0), Dependency(1, 2, 1, 1.0)),
        noise_std=0.02,
        seed=0,
    )
    base.update(overrides)
    return ScenarioSpec(**base)


# ---------------------------------------------------------------------------
# Spec validation
# ---------------------------------------------------------------------------

def test_cycle_is_rejected_and_named():
    with pytest.raises(InvalidSpec, match=r"dependency cycle: .*->.*->"):
        chain_spec(dependencies=(Dependency(0, 1, 1, 1.0),
                                 Dependency(1, 2, 1, 1.0),
                                 Dependency(2, 1, 1, 0.5)))


def test_zero_delay_is_rejected():
    with pytest.raises(InvalidSpec):
        chain_spec(dependencies=(Dependency(0, 1, 0, 1.0),))


def test_duplicate_tap_is_rejected_but_distinct_delays_are_not():
    with pytest.raises(InvalidSpec):
        chain_spec(dependencies=(Dependency(0, 1, 1, 1.0),
                                 Dependency(0, 1, 1, 0.5),
                                 Dependency(0, 2, 1, 1.0)))
    spec = chain_spec(dependencies=(Dependency(0, 1, 1, 1.0),
                                    Dependency(0, 1, 3, 0.5),
                                    Dependency(0, 2, 1, 1.0)))
    assert len(spec.dependencies) == 3


def test_free_channel_count_must_match_sources():
    with pytest.raises(InvalidSpec):
        chain_spec(n_sources=2)


def test_anomaly_budget_cannot_exceed_pool():
    with pytest.raises(InvalidSpec):
        chain_spec(n_anomalies=2, injectable_channels=(1,))


def test_anomaly_start_must_leave_room_for_window():
    with pytest.raises(InvalidSpec):
        chain_spec(n_anomalies=1, anomaly_window=150, anomaly_start=1100)


def test_unknown_anomaly_kind_is_rejected():
    with pytest.raises(InvalidSpec):
        chain_spec(n_anomalies=1, anomaly_kinds=("meltdown",))


def test_own_tone_frequency_must_be_in_band():
    with pytest.raises(InvalidSpec):
        chain_spec(own_tones=((1, 0.7, 0.5, 0.0),))
    with pytest.raises(InvalidSpec):
        chain_spec(own_tones=((9, 0.1, 0.5, 0.0),))


def test_spec_json_round_trip():
    spec = chain_spec(n_anomalies=1, anomaly_start=900,
                      own_tones=((1, 0.2, 0.4, 0.1),))
    back = ScenarioSpec.from_json(spec.to_json())
    assert back == spec
    bad = spec.to_json()
    bad["surprise"] = 1
    with pytest.raises(InvalidSpec):
        ScenarioSpec.from_json(bad)


# ---------------------------------------------------------------------------
# Panel generation
# ---------------------------------------------------------------------------

def test_generation_is_deterministic():
    spec = chain_spec(n_anomalies=1)
    p1, t1 = synthesize(spec)
    p2, t2 = synthesize(spec)
    assert np.array_equal(p1.values, p2.values)
    assert t1.to_json() == t2.to_json()


def test_dependent_channel_follows_parent():
    spec = chain_spec()
    panel, _ = generate_panel(spec)
    x = panel.values[:, 0]
    y = panel.values[:, 1]
    corr = np.corrcoef(x[:-1], y[1:])[0, 1]
    assert corr > 0.95


def test_truth_records_structure_and_sources():
    spec = chain_spec(n_anomalies=1)
    _, truth = synthesize(spec)
    assert truth.dependencies == spec.dependencies
    assert truth.source_channels == (0,)
    assert len(truth.windows) == 1 and len(truth.root_causes) == 1
    lo, hi = truth.windows[0]
    assert hi - lo == spec.anomaly_window
    assert lo >= math.ceil(0.7 * spec.n_samples)
    assert hi <= spec.n_samples
    assert set(truth.root_causes[0]) <= {1, 2}


def test_truth_json_round_trip(tmp_path):
    _, truth = synthesize(chain_spec(n_anomalies=1))
    path = tmp_path / "truth.json"
    save_truth(truth, path)
    back = load_truth(path)
    assert back.to_json() == truth.to_json()


# ---------------------------------------------------------------------------
# Injection mechanics
# ---------------------------------------------------------------------------

def clean_and_injected(kind, **overrides):
    spec = chain_spec(n_anomalies=1, anomaly_kinds=(kind,),
                      injectable_channels=(1,), anomaly_start=1000,
                      anomaly_window=100, **overrides)
    clean, _ = generate_panel(chain_spec(**{**overrides}))
    injected, truth = synthesize(spec)
    return clean, injected, truth, spec


def test_level_shift_magnitude_and_footprint():
    clean, injected, truth, spec = clean_and_injected("level-shift",
                                                      propagate=False)
    diff = injected.values - clean.values
    lo, hi = truth.windows[0]
    sigma = clean.values[:, 1].std()
    assert truth.root_causes[0] == (1,)
    inside = diff[lo:hi, 1]
    assert np.allclose(inside, SHIFT_SIGMA * sigma)
    diff[lo:hi, 1] = 0.0
    assert np.allclose(diff, 0.0)


def test_spike_is_short_and_tall():
    clean, injected, truth, _ = clean_and_injected("spike", propagate=False)
    diff = injected.values - clean.values
    lo, hi = truth.windows[0]
    hit = np.nonzero(diff[:, 1])[0]
    assert 1 <= hit.size <= 3
    assert lo <= hit.min() and hit.max() < hi
    sigma = clean.values[:, 1].std()
    assert np.allclose(diff[hit, 1], SPIKE_SIGMA * sigma)


def test_amplitude_scaling_stretches_around_the_mean():
    clean, injected, truth, _ = clean_and_injected("amplitude-change",
                                                   propagate=False)
    lo, hi = truth.windows[0]
    mu = clean.values[:, 1].mean()
    expected = mu + AMPLITUDE_FACTOR * (clean.values[lo:hi, 1] - mu)
    assert np.allclose(injected.values[lo:hi, 1], expected)


def test_propagation_carries_shift_downstream():
    clean, injected, truth, spec = clean_and_injected("level-shift",
                                                      propagate=True)
    diff = injected.values - clean.values
    lo, hi = truth.windows[0]
    sigma = clean.values[:, 1].std()
    shift = SHIFT_SIGMA * sigma
    # channel 2 reads channel 1 with delay 1 and gain 1
    assert np.allclose(diff[lo + 1:hi, 2], shift)
    assert np.allclose(diff[:lo, 2], 0.0)


def test_no_propagation_keeps_downstream_clean():
    clean, injected, truth, _ = clean_and_injected("level-shift",
                                                   propagate=False)
    diff = injected.values - clean.values
    assert np.allclose(diff[:, 2], 0.0)
    assert np.allclose(diff[:, 0], 0.0)


def test_overlapping_reinjection_on_same_channel_is_rejected():
    spec = chain_spec(n_anomalies=1, injectable_channels=(1,),
                      anomaly_start=1000, anomaly_window=100)
    panel, truth = synthesize(spec)
    with pytest.raises(InvalidSpec):
        inject_anomalies(panel, truth, spec)


def test_injection_windows_stay_in_late_panel():
    for seed in range(10):
        spec = chain_spec(n_anomalies=1, seed=seed)
        _, truth = synthesize(spec)
        lo, hi = truth.windows[0]
        assert lo >= math.ceil(0.7 * spec.n_samples)
        assert hi <= spec.n_samples


# ---------------------------------------------------------------------------
# Scenario factories
# ---------------------------------------------------------------------------

def test_random_scenario_shape_and_pool():
    spec = random_scenario(n_channels=20, n_samples=1500, n_sources=3,
                           n_anomalies=4, seed=5)
    assert spec.n_channels == 20
    assert spec.n_sources == 3
    assert spec.injectable_channels is not None
    assert len(spec.injectable_channels) >= spec.n_anomalies
    # injectable channels are dependents, never the free sources
    targets = {d.target for d in spec.dependencies}
    assert set(spec.injectable_channels) <= targets
    panel, truth = synthesize(spec)
    assert panel.n_samples == 1500 and panel.n_channels == 20
    assert len(truth.root_causes[0]) == 4


def test_random_scenario_is_deterministic():
    a = random_scenario(n_channels=14, n_samples=800, seed=9)
    b = random_scenario(n_channels=14, n_samples=800, seed=9)
    assert a == b


def test_random_scenario_needs_room_for_dependents():
    with pytest.raises(InvalidSpec):
        random_scenario(n_channels=4, n_sources=3, n_samples=800)


def test_random_scenario_guards_noise_against_private_tones():
    with pytest.raises(InvalidSpec):
        random_scenario(n_channels=12, n_samples=800, noise_std=3.0)


def test_planted_partition_groups_share_lineage():
    spec = planted_partition_scenario(n_channels=12, group_size=4,
                                      n_samples=600, seed=1)
    lineage = group_assignment(spec)
    assert set(lineage) == set(range(12))
    roots = {}
    for ch, root in lineage.items():
        roots.setdefault(root, set()).add(ch)
    assert sorted(len(g) for g in roots.values()) == [4, 4, 4]
    # each group is a star around its root source
    targets = {d.target for d in spec.dependencies}
    for root, members in roots.items():
        assert root not in targets
        assert all(m in targets for m in members - {root})
    panel, _ = synthesize(spec)
    assert panel.n_channels == 12


def test_planted_partition_handles_ragged_last_group():
    spec = planted_partition_scenario(n_channels=10, group_size=4,
                                      n_samples=600, seed=2)
    lineage = group_assignment(spec)
    sizes = sorted(
        sum(1 for r in lineage.values() if r == root)
        for root in set(lineage.values())
    )
    assert sum(sizes) == 10
    assert max(sizes) <= 4
