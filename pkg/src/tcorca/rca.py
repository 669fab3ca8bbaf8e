"""Root-cause ranking: three baselines and the causal-discovery ranker.

All rankers emit a :class:`RootCauseRanking` whose entries are (channel,
score) pairs sorted by score descending, ties broken by channel index.
Event-driven rankers only ever score channels the detector flagged.

* ``threshold_rank`` ignores the invariant graph entirely: any channel
  whose standardized deviation from its training mean exceeds ``k_sigma``
  is ranked by that deviation.
* ``ig_rank`` scores a flagged channel by the fraction of its incident
  invariant edges that broke.
* ``lbp_ig_rank`` refines the broken-incident ratios by loopy belief
  propagation on a binary Markov random field over the invariant graph:
  node state 1 means "root cause", unaries come from the broken-incident
  ratio, and edge potentials couple endpoints weakly through broken edges
  (propagation probability p) and strongly through intact ones (p/4).
* ``tcorca_rank`` runs time-lagged causal discovery on the event's
  residual series and promotes channels whose residuals drive many other
  flagged channels: score = (1 + #flagged descendants) * peak residual.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .causal import CausalDiscoveryConfig, discover
from .detect import AnomalyEvent
from .errors import FormatVersionError, MalformedInput
from .invariant import InvariantGraph
from .panel import ChannelStats, TimeSeriesPanel, check_window

RANKING_FORMAT_VERSION = 1

METHODS = ("threshold", "ig", "lbp-ig", "tcorca")


@dataclass(frozen=True)
class RootCauseRanking:
    method: str
    entries: tuple[tuple[int, float], ...]
    top_n: int
    window: tuple[int, int] | None = None
    converged: bool = True
    candidates: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        entries = tuple((int(c), float(s)) for c, s in self.entries)
        scores = [s for _, s in entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranking scores must be non-increasing")
        if len({c for c, _ in entries}) != len(entries):
            raise ValueError("ranking contains a duplicate channel")
        if len(entries) > self.top_n:
            raise ValueError(
                f"{len(entries)} entries exceed top_n={self.top_n}"
            )
        object.__setattr__(self, "entries", entries)

    def channels(self) -> tuple[int, ...]:
        return tuple(c for c, _ in self.entries)

    def to_json(self) -> dict:
        return {
            "format_version": RANKING_FORMAT_VERSION,
            "method": self.method,
            "entries": [[c, float(s)] for c, s in self.entries],
            "top_n": self.top_n,
            "window": list(self.window) if self.window else None,
            "converged": bool(self.converged),
            "candidates": list(self.candidates),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RootCauseRanking":
        version = obj.get("format_version")
        if version != RANKING_FORMAT_VERSION:
            raise FormatVersionError(
                f"ranking format version {version!r}, "
                f"expected {RANKING_FORMAT_VERSION}"
            )
        return cls(
            method=str(obj["method"]),
            entries=tuple((int(c), float(s)) for c, s in obj["entries"]),
            top_n=int(obj["top_n"]),
            window=tuple(obj["window"]) if obj.get("window") else None,
            converged=bool(obj.get("converged", True)),
            candidates=tuple(int(c) for c in obj.get("candidates", ())),
        )


def _ranked(scored: dict[int, float], top_n: int) -> tuple[tuple[int, float], ...]:
    order = sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(order[:top_n])


def save_ranking(ranking: RootCauseRanking, dest) -> None:
    text = json.dumps(ranking.to_json(), indent=2, sort_keys=True)
    if hasattr(dest, "write"):
        dest.write(text + "\n")
    else:
        with open(dest, "w") as fh:
            fh.write(text + "\n")


def load_ranking(source) -> RootCauseRanking:
    if hasattr(source, "read"):
        obj = json.load(source)
    else:
        with open(source, "r") as fh:
            obj = json.load(fh)
    return RootCauseRanking.from_json(obj)


# ---------------------------------------------------------------------------
# Baseline 1: per-channel sigma threshold
# ---------------------------------------------------------------------------


def threshold_rank(panel: TimeSeriesPanel, stats: ChannelStats,
                   window: tuple[int, int], k_sigma: float = 3.0,
                   top_n: int = 5) -> RootCauseRanking:
    """Rank channels by worst standardized excursion inside the window.

    Channels flagged constant at training time are skipped; only
    excursions of at least ``k_sigma`` score at all.
    """
    if stats.channel_names != panel.channel_names:
        raise MalformedInput("stats were fitted on different channels")
    start, end = check_window(window, panel.n_samples)
    seg = panel.values[start:end]
    dev = np.abs(seg - stats.mean) / stats.std
    scored: dict[int, float] = {}
    for c in range(panel.n_channels):
        if stats.constant[c]:
            continue
        score = float(np.max(dev[:, c]))
        if score >= k_sigma:
            scored[c] = score
    return RootCauseRanking(method="threshold", entries=_ranked(scored, top_n),
                            top_n=top_n, window=(start, end))


# ---------------------------------------------------------------------------
# Baseline 2: broken-incident ratio on the invariant graph
# ---------------------------------------------------------------------------


def _incident_ratios(event: AnomalyEvent, graph: InvariantGraph
                     ) -> dict[int, float]:
    total: dict[int, int] = {}
    broken: dict[int, int] = {}
    for status in event.statuses:
        for c in (status.source, status.target):
            total[c] = total.get(c, 0) + 1
            if status.broken:
                broken[c] = broken.get(c, 0) + 1
    return {c: broken.get(c, 0) / total[c] for c in total}


def ig_rank(event: AnomalyEvent, graph: InvariantGraph,
            top_n: int = 5) -> RootCauseRanking:
    """Score each flagged channel by broken incident edges / incident edges."""
    if graph.channel_names != event.channel_names:
        raise MalformedInput("event and graph come from different channel sets")
    ratios = _incident_ratios(event, graph)
    scored = {c: ratios[c] for c in event.anomalous_channels
              if ratios.get(c, 0.0) > 0.0}
    return RootCauseRanking(method="ig", entries=_ranked(scored, top_n),
                            top_n=top_n, window=event.window)


# ---------------------------------------------------------------------------
# Baseline 3: loopy belief propagation over the invariant graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LbpParams:
    propagation_p: float = 0.5
    damping: float = 0.3
    max_iters: int = 100
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 < self.propagation_p < 1.0:
            raise ValueError("propagation_p must be in (0, 1)")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")
        if self.max_iters < 1 or self.tol <= 0.0:
            raise ValueError("max_iters must be >= 1 and tol positive")


@dataclass(frozen=True)
class LbpResult:
    beliefs: dict[int, float]  # node -> P(state = 1)
    converged: bool
    n_iters: int


def lbp_marginals(nodes: list[int], edges: list[tuple[int, int, float]],
                  unary: dict[int, np.ndarray],
                  params: LbpParams | None = None) -> LbpResult:
    """Damped synchronous sum-product on a binary pairwise MRF.

    ``edges`` holds (u, v, coupling) with the symmetric potential
    [[1-c, c], [c, 1-c]]; ``unary[n]`` is the length-2 node potential.
    Returns the normalized marginal of state 1 per node. Exact on trees.
    """
    if params is None:
        params = LbpParams()
    psi: dict[tuple[int, int], np.ndarray] = {}
    neighbors: dict[int, list[int]] = {n: [] for n in nodes}
    for u, v, coupling in edges:
        if u == v:
            raise ValueError("self-loops are not allowed")
        if (u, v) in psi or (v, u) in psi:
            raise ValueError(f"duplicate edge between {u} and {v}")
        pot = np.array([[1.0 - coupling, coupling],
                        [coupling, 1.0 - coupling]])
        psi[(u, v)] = pot
        psi[(v, u)] = pot  # symmetric
        neighbors[u].append(v)
        neighbors[v].append(u)

    messages: dict[tuple[int, int], np.ndarray] = {}
    for u in nodes:
        for v in neighbors[u]:
            messages[(u, v)] = np.array([0.5, 0.5])

    converged = False
    n_iters = 0
    for it in range(params.max_iters):
        n_iters = it + 1
        updates: dict[tuple[int, int], np.ndarray] = {}
        diff = 0.0
        for (u, v), old in messages.items():
            incoming = unary[u].copy()
            for w in neighbors[u]:
                if w != v:
                    incoming *= messages[(w, u)]
            raw = psi[(u, v)].T @ incoming  # raw[x_v] = sum_{x_u} psi * inc
            total = raw.sum()
            if total > 0.0:
                raw = raw / total
            new = params.damping * old + (1.0 - params.damping) * raw
            updates[(u, v)] = new
            diff = max(diff, float(np.max(np.abs(new - old))))
        messages = updates
        if diff < params.tol:
            converged = True
            break

    beliefs: dict[int, float] = {}
    for n in nodes:
        b = unary[n].copy()
        for w in neighbors[n]:
            b *= messages[(w, n)]
        total = b.sum()
        beliefs[n] = float(b[1] / total) if total > 0.0 else 0.5
    return LbpResult(beliefs=beliefs, converged=converged, n_iters=n_iters)


def lbp_ig_rank(event: AnomalyEvent, graph: InvariantGraph,
                params: LbpParams | None = None,
                top_n: int = 5) -> RootCauseRanking:
    """Belief-propagation refinement of the broken-incident ratios.

    Unary potential of node c is [1 - a_c, a_c] with a_c its broken
    incident ratio (0 for unflagged nodes). Broken edges couple endpoints
    with probability p, intact edges with p/4, so suspicion flows further
    along broken links. Flagged channels are ranked by their posterior
    root-cause belief.
    """
    if params is None:
        params = LbpParams()
    if graph.channel_names != event.channel_names:
        raise MalformedInput("event and graph come from different channel sets")
    ratios = _incident_ratios(event, graph)
    nodes = sorted(graph.node_set())
    seen: dict[tuple[int, int], bool] = {}
    for status in event.statuses:
        key = (min(status.source, status.target),
               max(status.source, status.target))
        seen[key] = seen.get(key, False) or status.broken
    edges = [(u, v, params.propagation_p if broken else params.propagation_p / 4.0)
             for (u, v), broken in sorted(seen.items())]
    unary = {}
    for n in nodes:
        a = min(1.0, max(0.0, ratios.get(n, 0.0)))
        unary[n] = np.array([1.0 - a, a])
    result = lbp_marginals(nodes, edges, unary, params)
    scored = {c: result.beliefs[c] for c in event.anomalous_channels
              if c in result.beliefs}
    return RootCauseRanking(method="lbp-ig", entries=_ranked(scored, top_n),
                            top_n=top_n, window=event.window,
                            converged=result.converged)


# ---------------------------------------------------------------------------
# Causal-discovery ranker
# ---------------------------------------------------------------------------


def tcorca_rank(event: AnomalyEvent,
                config: CausalDiscoveryConfig | None = None,
                top_n: int = 5) -> RootCauseRanking:
    """Rank flagged channels by causal reach times residual magnitude.

    Discovery runs on the event's residual series only. A channel's score
    is (1 + number of flagged descendants) times its peak absolute
    residual, so upstream channels with large residuals dominate. The
    descendant count combines two kinds of reach: channels downstream in
    the discovered graph, and echoes the event already attributed to this
    channel (or to one of its descendants) while detecting. With no
    usable structure and no echoes this degrades to a pure peak-residual
    ranking. Channels without any incoming cross-channel directed edge
    are reported as source candidates.
    """
    if config is None:
        config = CausalDiscoveryConfig()
    channels = tuple(event.anomalous_channels)
    if not channels:
        return RootCauseRanking(method="tcorca", entries=(), top_n=top_n,
                                window=event.window)
    peaks = {c: float(np.max(np.abs(event.residual_series[c])))
             for c in channels}
    owned_echoes: dict[int, list[int]] = {}
    for echo, owner in event.echo_of.items():
        owned_echoes.setdefault(owner, []).append(echo)
    # Echo channels repeat some other channel's residual verbatim; feeding
    # those duplicates to the conditional-independence tests voids every
    # edge touching the original. Discover structure on channels that own
    # their series; echoes keep a bare peak score.
    owners = tuple(c for c in channels if c not in set(event.echo_channels))
    if len(owners) < 2:
        scored = {c: (1 + len(owned_echoes.get(c, ()))) * peaks[c]
                  for c in owners}
        for c in channels:
            if c not in scored:
                scored[c] = peaks[c]
        return RootCauseRanking(
            method="tcorca",
            entries=_ranked(scored, top_n),
            top_n=top_n,
            window=event.window,
            candidates=owners or channels,
        )
    series = np.column_stack([event.residual_series[c] for c in owners])
    graph = discover(series, config, channels=owners)
    scored: dict[int, float] = {}
    for c in owners:
        descendants = graph.descendants(c)
        reach = len(descendants)
        for d in (c, *descendants):
            reach += len(owned_echoes.get(d, ()))
        scored[c] = (1 + reach) * peaks[c]
    for c in channels:
        if c not in scored:
            scored[c] = peaks[c]
    return RootCauseRanking(
        method="tcorca",
        entries=_ranked(scored, top_n),
        top_n=top_n,
        window=event.window,
        candidates=graph.source_channels(),
    )
