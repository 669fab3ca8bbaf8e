"""Pairwise ARX invariants and the fitness-clustered invariant graph.

An invariant is an ARX model tying a target channel to a source channel:

    y(t) = sum_i a_i * y(t-i) + sum_j b_j * phi(x(t-k-j)) + c

with autoregressive order ``n``, exogenous order ``m`` and input delay
``k``. ``phi`` is the identity for the linear feature map; the quadratic
map adds squared exogenous terms. Fitness is ``1 - sqrt(SSE/SST)`` on the
training rows, so 1 means a perfect fit and values near or below 0 mean
the model explains nothing.

Graph construction avoids fitting all D*(D-1) pairs. Channels are grouped
greedily around randomly drawn pivots: each remaining channel is fitted
against the pivot in both directions and joins the pivot's cluster when
the better direction clears the fitness floor. Cluster sizes are capped at
ceil(sqrt(D)) so the total number of pair fits stays O(D * sqrt(D)).
Pivots of distinct clusters are then fitted pairwise to link the clusters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateChannel,
    FormatVersionError,
    InsufficientData,
    InvalidWindow,
    MalformedInput,
    NoInvariantsFound,
)
from .panel import TimeSeriesPanel, check_window

GRAPH_FORMAT_VERSION = 1

FEATURE_MAPS = ("linear", "quadratic")

# Threshold head-room over the worst training residual, and the smallest
# threshold we will ever emit (a perfectly fitted pair would otherwise
# produce epsilon = 0 and flag every future sample).
THRESHOLD_MARGIN = 1.1
THRESHOLD_FLOOR = 1e-9


@dataclass(frozen=True)
class ArxInvariant:
    """A fitted source -> target ARX relationship."""

    target: int
    source: int
    ar_order: int
    exo_order: int
    delay: int
    feature_map: str
    coeffs: np.ndarray
    fitness: float
    residual_threshold: float
    rank_deficient: bool = False

    def __post_init__(self) -> None:
        coeffs = np.ascontiguousarray(np.asarray(self.coeffs, dtype=np.float64))
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        expected = self.ar_order + self._n_exo_terms() + 1
        if coeffs.shape != (expected,):
            raise MalformedInput(
                f"expected {expected} coefficients, got {coeffs.shape}"
            )

    def _n_exo_terms(self) -> int:
        per_lag = 2 if self.feature_map == "quadratic" else 1
        return per_lag * (self.exo_order + 1)

    @property
    def warmup(self) -> int:
        """Rows needed before the first predictable sample."""
        return max(self.ar_order, self.delay + self.exo_order)

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "source": self.source,
            "ar_order": self.ar_order,
            "exo_order": self.exo_order,
            "delay": self.delay,
            "feature_map": self.feature_map,
            "coeffs": [float(c) for c in self.coeffs],
            "fitness": float(self.fitness),
            "residual_threshold": float(self.residual_threshold),
            "rank_deficient": bool(self.rank_deficient),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ArxInvariant":
        return cls(
            target=int(obj["target"]),
            source=int(obj["source"]),
            ar_order=int(obj["ar_order"]),
            exo_order=int(obj["exo_order"]),
            delay=int(obj["delay"]),
            feature_map=str(obj["feature_map"]),
            coeffs=np.asarray(obj["coeffs"], dtype=np.float64),
            fitness=float(obj["fitness"]),
            residual_threshold=float(obj["residual_threshold"]),
            rank_deficient=bool(obj["rank_deficient"]),
        )


def _design_matrix(y: np.ndarray, x: np.ndarray, n: int, m: int, k: int,
                   feature_map: str, warmup: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows warmup..L-1 of the regression problem for one delay k."""
    rows = np.arange(warmup, y.shape[0])
    cols: list[np.ndarray] = []
    for i in range(1, n + 1):
        cols.append(y[rows - i])
    for j in range(m + 1):
        cols.append(x[rows - k - j])
    if feature_map == "quadratic":
        for j in range(m + 1):
            cols.append(x[rows - k - j] ** 2)
    cols.append(np.ones(rows.shape[0]))
    return np.column_stack(cols), y[rows]


def fit_arx(panel: TimeSeriesPanel, source: int, target: int,
            ar_order: int = 0, exo_order: int = 2, max_delay: int = 5,
            feature_map: str = "linear",
            train_range: tuple[int, int] | None = None) -> ArxInvariant:
    """Fit the best-delay ARX invariant from ``source`` to ``target``.

    The delay k is searched over 0..max_delay; every candidate is fitted on
    the same rows (those beyond the worst-case warm-up) so fitness values
    are directly comparable, and ties prefer the smaller delay. Coefficients
    come from least squares (minimum-norm when the design is rank
    deficient, which is also flagged on the result).
    """
    if feature_map not in FEATURE_MAPS:
        raise ValueError(f"unknown feature map {feature_map!r}")
    if ar_order < 0 or exo_order < 0 or max_delay < 0:
        raise ValueError("orders and max_delay must be non-negative")
    if source == target:
        raise ValueError("source and target must differ")
    if train_range is None:
        train_range = (0, panel.n_samples)
    start, end = check_window(train_range, panel.n_samples)

    y = panel.values[start:end, target]
    x = panel.values[start:end, source]
    if np.isnan(y).any() or np.isnan(x).any():
        raise MalformedInput("training rows contain missing values; impute first")

    warmup = max(ar_order, max_delay + exo_order)
    n_rows = (end - start) - warmup
    per_lag = 2 if feature_map == "quadratic" else 1
    n_cols = ar_order + per_lag * (exo_order + 1) + 1
    if n_rows < n_cols:
        raise InsufficientData(
            f"{n_rows} usable rows for {n_cols} coefficients "
            f"(train range {start}..{end}, warm-up {warmup})"
        )
    yy = y[warmup:]
    sst = float(np.sum((yy - yy.mean()) ** 2))
    if sst == 0.0:
        raise DegenerateChannel(
            f"target channel {panel.channel_names[target]!r} is constant "
            "on the training rows"
        )

    best: tuple[float, int, np.ndarray, np.ndarray, bool] | None = None
    for k in range(max_delay + 1):
        design, rhs = _design_matrix(y, x, ar_order, exo_order, k,
                                     feature_map, warmup)
        coeffs, _, rank, _ = np.linalg.lstsq(design, rhs, rcond=None)
        resid = rhs - design @ coeffs
        sse = float(resid @ resid)
        fitness = 1.0 - math.sqrt(max(sse, 0.0) / sst)
        if best is None or fitness > best[0] + 1e-12:
            best = (fitness, k, coeffs, resid, rank < design.shape[1])

    fitness, delay, coeffs, resid, deficient = best
    threshold = max(THRESHOLD_MARGIN * float(np.max(np.abs(resid))),
                    THRESHOLD_FLOOR)
    return ArxInvariant(
        target=target, source=source, ar_order=ar_order, exo_order=exo_order,
        delay=delay, feature_map=feature_map, coeffs=coeffs,
        fitness=fitness, residual_threshold=threshold,
        rank_deficient=deficient,
    )


def predict_residuals(inv: ArxInvariant, panel: TimeSeriesPanel,
                      window: tuple[int, int]) -> np.ndarray:
    """One-step-ahead residuals y(t) - yhat(t) over panel rows [start, end).

    Lagged regressors may reach before ``start`` but must stay inside the
    panel, so ``start`` has to be at least the invariant's warm-up.
    """
    start, end = check_window(window, panel.n_samples)
    if start < inv.warmup:
        raise InvalidWindow(
            f"window start {start} is inside the warm-up ({inv.warmup} rows)"
        )
    y = panel.values[:, inv.target]
    x = panel.values[:, inv.source]
    rows = np.arange(start, end)
    pred = np.zeros(rows.shape[0])
    pos = 0
    for i in range(1, inv.ar_order + 1):
        pred += inv.coeffs[pos] * y[rows - i]
        pos += 1
    for j in range(inv.exo_order + 1):
        pred += inv.coeffs[pos] * x[rows - inv.delay - j]
        pos += 1
    if inv.feature_map == "quadratic":
        for j in range(inv.exo_order + 1):
            pred += inv.coeffs[pos] * x[rows - inv.delay - j] ** 2
            pos += 1
    pred += inv.coeffs[pos]
    return y[rows] - pred


# ---------------------------------------------------------------------------
# Clustered graph construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FccgConfig:
    """Knobs for invariant-graph construction."""

    fitness_min: float = 0.7
    ar_order: int = 0
    exo_order: int = 2
    max_delay: int = 5
    feature_map: str = "linear"
    max_cluster_size: int | None = None
    train_range: tuple[int, int] | None = None

    def to_json(self) -> dict:
        return {
            "fitness_min": float(self.fitness_min),
            "ar_order": int(self.ar_order),
            "exo_order": int(self.exo_order),
            "max_delay": int(self.max_delay),
            "feature_map": self.feature_map,
            "max_cluster_size": self.max_cluster_size,
            "train_range": list(self.train_range) if self.train_range else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FccgConfig":
        return cls(
            fitness_min=float(obj["fitness_min"]),
            ar_order=int(obj["ar_order"]),
            exo_order=int(obj["exo_order"]),
            max_delay=int(obj["max_delay"]),
            feature_map=str(obj["feature_map"]),
            max_cluster_size=(None if obj.get("max_cluster_size") is None
                              else int(obj["max_cluster_size"])),
            train_range=(None if obj.get("train_range") is None
                         else tuple(obj["train_range"])),
        )


@dataclass(frozen=True)
class Cluster:
    pivot: int
    members: tuple[int, ...]  # pivot included, ascending order


@dataclass(frozen=True)
class InvariantGraph:
    """Clusters plus the invariant edges kept during construction."""

    channel_names: tuple[str, ...]
    clusters: tuple[Cluster, ...]
    edges: tuple[ArxInvariant, ...]
    config: FccgConfig
    train_range: tuple[int, int]
    pair_fit_count: int
    seed: int
    skipped_channels: tuple[int, ...] = field(default=())
    pivot_order: tuple[int, ...] = field(default=())  # pivots in draw order

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    def edges_for_target(self, channel: int) -> list[ArxInvariant]:
        return [e for e in self.edges if e.target == channel]

    def incident_edges(self, channel: int) -> list[int]:
        return [i for i, e in enumerate(self.edges)
                if e.target == channel or e.source == channel]

    def node_set(self) -> set[int]:
        nodes: set[int] = set()
        for e in self.edges:
            nodes.add(e.source)
            nodes.add(e.target)
        return nodes


def graph_pair_fit_count(graph: InvariantGraph) -> int:
    """Number of directed pair fits spent building the graph (audit hook)."""
    return graph.pair_fit_count


def default_cluster_cap(n_channels: int) -> int:
    return max(1, math.ceil(math.sqrt(n_channels)))


def fccg_cluster(panel: TimeSeriesPanel, config: FccgConfig | None = None,
                 seed: int = 0,
                 pivot_sequence: Sequence[int] | None = None) -> InvariantGraph:
    """Build an invariant graph by fitness-clustered pairwise search.

    Loop: draw a pivot uniformly from the channels not yet in any cluster,
    fit pivot<->candidate in both directions for every other unassigned
    channel, and admit candidates whose better direction clears
    ``fitness_min`` (best first) until the cluster cap is reached. The
    stored model prefers the pivot-driving direction (so members own an
    edge targeting them), falling back to the reverse one when only that
    direction qualifies. Afterwards every pair of distinct pivots is
    fitted to bridge clusters, keeping the better direction. Constant
    channels never enter the search.

    ``pivot_sequence`` replays an explicit pivot order (channel indices)
    instead of drawing from the RNG; it exists so reproducibility checks
    can map a recorded pivot order through a channel permutation.
    """
    if config is None:
        config = FccgConfig()
    if not 0.0 < config.fitness_min <= 1.0:
        raise ValueError(f"fitness_min must be in (0, 1], got {config.fitness_min}")
    train_range = config.train_range or (0, panel.n_samples)
    start, end = check_window(train_range, panel.n_samples)

    train_vals = panel.values[start:end]
    if np.isnan(train_vals).any():
        raise MalformedInput("training rows contain missing values; impute first")
    stds = train_vals.std(axis=0)
    active = [j for j in range(panel.n_channels) if stds[j] > 0.0]
    skipped = tuple(j for j in range(panel.n_channels) if stds[j] == 0.0)
    if not active:
        raise NoInvariantsFound("every channel is constant on the training rows")

    cap = config.max_cluster_size or default_cluster_cap(panel.n_channels)
    rng = np.random.default_rng(seed)
    fit_count = 0

    def fit_pair(src: int, tgt: int) -> ArxInvariant:
        nonlocal fit_count
        fit_count += 1
        return fit_arx(panel, src, tgt,
                       ar_order=config.ar_order, exo_order=config.exo_order,
                       max_delay=config.max_delay,
                       feature_map=config.feature_map,
                       train_range=(start, end))

    unassigned = list(active)
    clusters: list[Cluster] = []
    edges: list[ArxInvariant] = []
    replay = list(pivot_sequence) if pivot_sequence is not None else None

    while unassigned:
        if replay is not None:
            if not replay:
                raise ValueError("pivot_sequence exhausted before all channels "
                                 "were assigned")
            wanted = replay.pop(0)
            if wanted not in unassigned:
                raise ValueError(f"pivot_sequence channel {wanted} is not "
                                 "unassigned at its turn")
            pivot = unassigned.pop(unassigned.index(wanted))
        else:
            pivot = unassigned.pop(int(rng.integers(len(unassigned))))
        scored: list[tuple[float, int, ArxInvariant]] = []
        for cand in unassigned:
            fwd = fit_pair(pivot, cand)   # pivot drives candidate
            bwd = fit_pair(cand, pivot)   # candidate drives pivot
            best = max(fwd.fitness, bwd.fitness)
            if best >= config.fitness_min:
                # Keep the better-fitting direction; exact ties resolve
                # to the pivot-driving model.
                inv = fwd if fwd.fitness >= bwd.fitness else bwd
                scored.append((best, cand, inv))
        scored.sort(key=lambda item: (-item[0], item[1]))
        admitted = scored[:max(0, cap - 1)]
        members = sorted([pivot] + [cand for _, cand, _ in admitted])
        clusters.append(Cluster(pivot=pivot, members=tuple(members)))
        taken = {cand for _, cand, _ in admitted}
        unassigned = [c for c in unassigned if c not in taken]
        edges.extend(inv for _, _, inv in admitted)

    pivots = sorted(c.pivot for c in clusters)
    for a_idx in range(len(pivots)):
        for b_idx in range(a_idx + 1, len(pivots)):
            p, q = pivots[a_idx], pivots[b_idx]
            fwd = fit_pair(p, q)
            bwd = fit_pair(q, p)
            inv = fwd if fwd.fitness >= bwd.fitness else bwd
            if inv.fitness >= config.fitness_min:
                edges.append(inv)

    pivot_order = tuple(c.pivot for c in clusters)
    clusters.sort(key=lambda c: c.members[0])
    return InvariantGraph(
        channel_names=panel.channel_names,
        clusters=tuple(clusters),
        edges=tuple(edges),
        config=replace(config, train_range=(start, end)),
        train_range=(start, end),
        pair_fit_count=fit_count,
        seed=seed,
        skipped_channels=skipped,
        pivot_order=pivot_order,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def graph_to_json(graph: InvariantGraph) -> dict:
    return {
        "format_version": GRAPH_FORMAT_VERSION,
        "channel_names": list(graph.channel_names),
        "clusters": [
            {"pivot": c.pivot, "members": list(c.members)}
            for c in graph.clusters
        ],
        "edges": [e.to_json() for e in graph.edges],
        "config": graph.config.to_json(),
        "train_range": list(graph.train_range),
        "pair_fit_count": graph.pair_fit_count,
        "seed": graph.seed,
        "skipped_channels": list(graph.skipped_channels),
        "pivot_order": list(graph.pivot_order),
    }


def graph_from_json(obj: dict) -> InvariantGraph:
    version = obj.get("format_version")
    if version != GRAPH_FORMAT_VERSION:
        raise FormatVersionError(
            f"graph format version {version!r}, expected {GRAPH_FORMAT_VERSION}"
        )
    return InvariantGraph(
        channel_names=tuple(obj["channel_names"]),
        clusters=tuple(Cluster(pivot=int(c["pivot"]),
                               members=tuple(int(m) for m in c["members"]))
                       for c in obj["clusters"]),
        edges=tuple(ArxInvariant.from_json(e) for e in obj["edges"]),
        config=FccgConfig.from_json(obj["config"]),
        train_range=tuple(obj["train_range"]),
        pair_fit_count=int(obj["pair_fit_count"]),
        seed=int(obj["seed"]),
        skipped_channels=tuple(int(j) for j in obj.get("skipped_channels", [])),
        pivot_order=tuple(int(p) for p in obj.get("pivot_order", [])),
    )


def save_graph(graph: InvariantGraph, dest,
               extra: dict | None = None) -> None:
    payload = graph_to_json(graph)
    if extra:
        overlap = set(extra) & set(payload)
        if overlap:
            raise ValueError(f"extra keys collide with graph fields: {overlap}")
        payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if hasattr(dest, "write"):
        dest.write(text + "\n")
    else:
        with open(dest, "w") as fh:
            fh.write(text + "\n")


def load_graph(source) -> InvariantGraph:
    if hasattr(source, "read"):
        obj = json.load(source)
    else:
        with open(source, "r") as fh:
            obj = json.load(fh)
    return graph_from_json(obj)


def load_graph_document(source) -> dict:
    """Raw JSON document for callers that need side-channel fields
    (for example the stats block the CLI stores next to the graph)."""
    if hasattr(source, "read"):
        return json.load(source)
    with open(source, "r") as fh:
        return json.load(fh)
