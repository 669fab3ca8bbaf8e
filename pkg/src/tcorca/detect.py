"""Broken-link evaluation and anomaly events.

Each invariant edge carries a residual threshold learned at fit time. Over
an evaluation window the edge's violation ratio is the fraction of samples
whose absolute residual exceeds that threshold; the edge is broken when
the ratio reaches ``break_ratio_min``. A window becomes an anomaly event
when the broken fraction of all edges reaches ``system_threshold``, or
when any single edge is violated at every sample of the window (a
sustained total break, which must fire even if the graph is large).

An event also carries one residual series per anomalous channel: the
residuals of the highest-fitness edge *targeting* that channel, falling
back to the highest-fitness incident edge when nothing targets it. These
series feed the causal ranking stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import FormatVersionError, InvalidWindow, MalformedInput
from .invariant import InvariantGraph, predict_residuals
from .panel import TimeSeriesPanel, check_window

EVENT_FORMAT_VERSION = 1

DEFAULT_BREAK_RATIO_MIN = 0.2
DEFAULT_SYSTEM_THRESHOLD = 0.05


@dataclass(frozen=True)
class LinkStatus:
    """Health of one invariant edge over one window."""

    edge_index: int
    source: int
    target: int
    window: tuple[int, int]
    violation_ratio: float
    peak_residual: float
    threshold: float
    broken: bool

    def to_json(self) -> dict:
        return {
            "edge_index": self.edge_index,
            "source": self.source,
            "target": self.target,
            "window": list(self.window),
            "violation_ratio": float(self.violation_ratio),
            "peak_residual": float(self.peak_residual),
            "threshold": float(self.threshold),
            "broken": bool(self.broken),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinkStatus":
        return cls(
            edge_index=int(obj["edge_index"]),
            source=int(obj["source"]),
            target=int(obj["target"]),
            window=tuple(obj["window"]),
            violation_ratio=float(obj["violation_ratio"]),
            peak_residual=float(obj["peak_residual"]),
            threshold=float(obj["threshold"]),
            broken=bool(obj["broken"]),
        )


@dataclass(frozen=True)
class AnomalyEvent:
    """A window in which the invariant graph is materially broken.

    Every broken edge is attributed to the endpoint that itself deviates
    more inside the window (its standardized excursion from the training
    mean); that endpoint owns the break. Flagged channels that own no
    break are echoes: they were dragged in as the healthy side of someone
    else's broken invariant. ``echo_channels`` lists them and ``echo_of``
    maps each echo to the owner whose break flagged it.
    """

    window: tuple[int, int]
    statuses: tuple[LinkStatus, ...]
    anomalous_channels: tuple[int, ...]
    residual_series: Mapping[int, np.ndarray]
    system_broken_ratio: float
    channel_names: tuple[str, ...]
    echo_channels: tuple[int, ...] = ()
    echo_of: Mapping[int, int] = None  # set in __post_init__ when absent

    def __post_init__(self) -> None:
        if self.echo_of is None:
            object.__setattr__(self, "echo_of", {})

    def broken_statuses(self) -> tuple[LinkStatus, ...]:
        return tuple(s for s in self.statuses if s.broken)


def evaluate_links(graph: InvariantGraph, panel: TimeSeriesPanel,
                   window: tuple[int, int],
                   break_ratio_min: float = DEFAULT_BREAK_RATIO_MIN
                   ) -> list[LinkStatus]:
    """Violation ratio and broken flag for every edge over the window."""
    if not 0.0 < break_ratio_min <= 1.0:
        raise ValueError(f"break_ratio_min must be in (0, 1], got {break_ratio_min}")
    if graph.channel_names != panel.channel_names:
        raise MalformedInput("graph was fitted on different channels")
    start, end = check_window(window, panel.n_samples)
    max_warmup = max((e.warmup for e in graph.edges), default=0)
    if start < max_warmup:
        raise InvalidWindow(
            f"window start {start} is inside the longest edge warm-up "
            f"({max_warmup} rows)"
        )
    statuses: list[LinkStatus] = []
    for idx, edge in enumerate(graph.edges):
        resid = predict_residuals(edge, panel, (start, end))
        violations = np.abs(resid) > edge.residual_threshold
        ratio = float(violations.mean())
        statuses.append(LinkStatus(
            edge_index=idx,
            source=edge.source,
            target=edge.target,
            window=(start, end),
            violation_ratio=ratio,
            peak_residual=float(np.max(np.abs(resid))),
            threshold=edge.residual_threshold,
            broken=ratio >= break_ratio_min,
        ))
    return statuses


def _residual_series_for(graph: InvariantGraph, panel: TimeSeriesPanel,
                         window: tuple[int, int],
                         channels: tuple[int, ...]
                         ) -> dict[int, np.ndarray]:
    """One witness residual series per flagged channel.

    The series comes from the highest-fitness edge targeting the channel;
    channels nothing targets fall back to their highest-fitness incident
    edge. Fitness ties resolve to the lower edge index.
    """
    series: dict[int, np.ndarray] = {}
    for c in channels:
        candidates = [i for i, e in enumerate(graph.edges) if e.target == c]
        if not candidates:
            candidates = list(graph.incident_edges(c))
        idx = max(candidates, key=lambda i: (graph.edges[i].fitness, -i))
        series[c] = predict_residuals(graph.edges[idx], panel, window)
    return series


def _assign_ownership(graph: InvariantGraph, panel: TimeSeriesPanel,
                      window: tuple[int, int],
                      channels: tuple[int, ...],
                      statuses: list[LinkStatus]
                      ) -> tuple[tuple[int, ...], dict[int, int]]:
    """Attribute each broken edge to an endpoint; derive the echo map.

    A broken invariant is symmetric evidence: it names two channels but
    the fault sits on one side. The endpoint whose own series deviates
    more inside the window (standardized against the graph's training
    range) owns the break; exact ties go to the edge's target. Flagged
    channels owning no break are echoes of the owner of their best broken
    incident edge (highest fitness, then lower edge index).
    """
    broken = [s for s in statuses if s.broken]
    lo, hi = graph.train_range
    train = panel.values[lo:hi]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    segment = panel.values[window[0]:window[1]]
    deviation = np.max(np.abs((segment - mean) / std), axis=0)

    owner_of_edge: dict[int, int] = {}
    owners: set[int] = set()
    for s in broken:
        owner = (s.target if deviation[s.target] >= deviation[s.source]
                 else s.source)
        owner_of_edge[s.edge_index] = owner
        owners.add(owner)

    echo_of: dict[int, int] = {}
    for c in channels:
        if c in owners:
            continue
        incident = [s for s in broken if c in (s.source, s.target)]
        best = max(incident,
                   key=lambda s: (graph.edges[s.edge_index].fitness,
                                  -s.edge_index))
        echo_of[c] = owner_of_edge[best.edge_index]
    return tuple(sorted(echo_of)), echo_of


def detect_anomaly(graph: InvariantGraph, panel: TimeSeriesPanel,
                   window: tuple[int, int],
                   system_threshold: float = DEFAULT_SYSTEM_THRESHOLD,
                   break_ratio_min: float = DEFAULT_BREAK_RATIO_MIN
                   ) -> AnomalyEvent | None:
    """Evaluate one window; return an event if the graph is broken there.

    Returns None on healthy windows and on graphs without edges (an empty
    graph has nothing to break).
    """
    statuses = evaluate_links(graph, panel, window,
                              break_ratio_min=break_ratio_min)
    if not statuses:
        return None
    broken = [s for s in statuses if s.broken]
    ratio = len(broken) / len(statuses)
    total_break = any(s.violation_ratio == 1.0 for s in statuses)
    if ratio < system_threshold and not total_break:
        return None
    flagged = {s.source for s in broken} | {s.target for s in broken}
    flagged |= {s.source for s in statuses if s.violation_ratio == 1.0}
    flagged |= {s.target for s in statuses if s.violation_ratio == 1.0}
    channels = tuple(sorted(flagged))
    series = _residual_series_for(graph, panel, window, channels)
    echoes, echo_of = _assign_ownership(graph, panel, window, channels,
                                        statuses)
    return AnomalyEvent(
        window=tuple(window),
        statuses=tuple(statuses),
        anomalous_channels=channels,
        residual_series=series,
        system_broken_ratio=ratio,
        channel_names=graph.channel_names,
        echo_channels=echoes,
        echo_of=echo_of,
    )


def scan_windows(graph: InvariantGraph, panel: TimeSeriesPanel,
                 window_len: int, stride: int | None = None,
                 start: int | None = None, end: int | None = None,
                 system_threshold: float = DEFAULT_SYSTEM_THRESHOLD,
                 break_ratio_min: float = DEFAULT_BREAK_RATIO_MIN
                 ) -> list[AnomalyEvent]:
    """Slide a fixed window over the panel and collect events.

    The default stride is half the window so a fault cannot straddle two
    window edges unseen. Scanning starts at the longest edge warm-up (or at
    ``start`` if that is later) and the final partial window is dropped.
    """
    if window_len < 1:
        raise InvalidWindow(f"window length must be >= 1, got {window_len}")
    if stride is None:
        stride = max(1, window_len // 2)
    if stride < 1:
        raise InvalidWindow(f"stride must be >= 1, got {stride}")
    max_warmup = max((e.warmup for e in graph.edges), default=0)
    lo = max(max_warmup, start or 0)
    hi = panel.n_samples if end is None else min(end, panel.n_samples)
    events: list[AnomalyEvent] = []
    pos = lo
    while pos + window_len <= hi:
        event = detect_anomaly(graph, panel, (pos, pos + window_len),
                               system_threshold=system_threshold,
                               break_ratio_min=break_ratio_min)
        if event is not None:
            events.append(event)
        pos += stride
    return events


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def event_to_json(event: AnomalyEvent) -> dict:
    return {
        "format_version": EVENT_FORMAT_VERSION,
        "window": list(event.window),
        "statuses": [s.to_json() for s in event.statuses],
        "anomalous_channels": list(event.anomalous_channels),
        "residual_series": {
            str(c): [float(v) for v in r]
            for c, r in sorted(event.residual_series.items())
        },
        "system_broken_ratio": float(event.system_broken_ratio),
        "channel_names": list(event.channel_names),
        "echo_channels": list(event.echo_channels),
        "echo_of": {str(c): int(o)
                    for c, o in sorted(event.echo_of.items())},
    }


def event_from_json(obj: dict) -> AnomalyEvent:
    version = obj.get("format_version")
    if version != EVENT_FORMAT_VERSION:
        raise FormatVersionError(
            f"event format version {version!r}, expected {EVENT_FORMAT_VERSION}"
        )
    return AnomalyEvent(
        window=tuple(obj["window"]),
        statuses=tuple(LinkStatus.from_json(s) for s in obj["statuses"]),
        anomalous_channels=tuple(int(c) for c in obj["anomalous_channels"]),
        residual_series={int(c): np.asarray(r, dtype=np.float64)
                         for c, r in obj["residual_series"].items()},
        system_broken_ratio=float(obj["system_broken_ratio"]),
        channel_names=tuple(obj["channel_names"]),
        echo_channels=tuple(int(c) for c in obj.get("echo_channels", ())),
        echo_of={int(c): int(o)
                 for c, o in obj.get("echo_of", {}).items()},
    )


def save_event(event: AnomalyEvent, dest) -> None:
    text = json.dumps(event_to_json(event), indent=2, sort_keys=True)
    if hasattr(dest, "write"):
        dest.write(text + "\n")
    else:
        with open(dest, "w") as fh:
            fh.write(text + "\n")


def load_event(source) -> AnomalyEvent:
    if hasattr(source, "read"):
        obj = json.load(source)
    else:
        with open(source, "r") as fh:
            obj = json.load(fh)
    return event_from_json(obj)
