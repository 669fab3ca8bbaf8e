"""Root-cause analysis for multivariate KPI time series.

The pipeline: learn an invariant graph over channels (pairwise ARX models
admitted by fitness, organized by pivot clustering), detect anomalies as
windows where invariant edges break, then rank root causes by causal
discovery over the residual-error series. Baseline rankers (threshold,
IG, LBP-IG) and a synthetic benchmark generator round out the toolkit.
"""

from .causal import (
    CausalDiscoveryConfig,
    CausalEdge,
    CausalGraph,
    LaggedVariable,
    PcSkeleton,
    build_lagged_matrix,
    causal_graph_from_json,
    causal_graph_to_json,
    ci_test,
    discover,
    fisher_z,
    orient,
    partial_correlation,
    pc_skeleton,
    save_causal_graph,
)
from .config import (
    CONFIG_FORMAT_VERSION,
    RunConfig,
    dump_config,
    load_config,
)
from .detect import (
    AnomalyEvent,
    LinkStatus,
    detect_anomaly,
    evaluate_links,
    event_from_json,
    event_to_json,
    load_event,
    save_event,
    scan_windows,
)
from .errors import (
    DegenerateChannel,
    EmptyInput,
    FormatVersionError,
    InsufficientData,
    InvalidSpec,
    InvalidWindow,
    MalformedInput,
    NoInvariantsFound,
    TcorcaError,
    UndefinedMetric,
)
from .evaluation import (
    BenchmarkConfig,
    MetricReport,
    ScenarioRow,
    default_suite,
    plot_data,
    precision_recall_f1,
    run_benchmark,
    run_complexity_audit,
    sweep_anomaly_counts,
)
from .invariant import (
    ArxInvariant,
    Cluster,
    FccgConfig,
    InvariantGraph,
    default_cluster_cap,
    fccg_cluster,
    fit_arx,
    graph_from_json,
    graph_pair_fit_count,
    graph_to_json,
    load_graph,
    predict_residuals,
    save_graph,
)
from .panel import (
    ChannelStats,
    TimeSeriesPanel,
    apply_stats,
    compute_stats,
    destandardize,
    impute_missing,
    load_panel,
    make_panel,
    save_panel,
    smooth,
    standardize,
)
from .rca import (
    METHODS,
    LbpParams,
    LbpResult,
    RootCauseRanking,
    ig_rank,
    lbp_ig_rank,
    lbp_marginals,
    load_ranking,
    save_ranking,
    tcorca_rank,
    threshold_rank,
)
from .synth import (
    ANOMALY_KINDS,
    Dependency,
    GroundTruth,
    ScenarioSpec,
    generate_panel,
    group_assignment,
    inject_anomalies,
    load_truth,
    planted_partition_scenario,
    random_scenario,
    save_truth,
    synthesize,
)

__version__ = "0.1.0"
