"""Multivariate KPI panels: container, CSV persistence, preprocessing.

A panel is a dense (T, D) float matrix on a uniform time grid plus a
boolean missing mask. Cells flagged missing hold NaN in ``values`` until
imputation fills them. All preprocessing functions return new panels;
nothing mutates in place.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateChannel,
    EmptyInput,
    FormatVersionError,
    InvalidWindow,
    MalformedInput,
)

STATS_FORMAT_VERSION = 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeriesPanel:
    """Immutable multivariate time series on a uniform grid.

    Attributes
    ----------
    timestamps : (T,) int64 array of epoch seconds, strictly increasing
        with a constant step.
    channel_names : unique channel labels, one per column.
    values : (T, D) float64 matrix; missing cells are NaN.
    missing_mask : (T, D) bool matrix, True where the cell is missing.
    """

    timestamps: np.ndarray
    channel_names: tuple[str, ...]
    values: np.ndarray
    missing_mask: np.ndarray

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.missing_mask, dtype=bool)
        names = tuple(str(n) for n in self.channel_names)
        if ts.ndim != 1:
            raise MalformedInput("timestamps must be one-dimensional")
        if vals.ndim != 2:
            raise MalformedInput("values must be a (T, D) matrix")
        if ts.shape[0] == 0 or vals.shape[1] == 0:
            raise EmptyInput("panel has no rows or no channels")
        if vals.shape[0] != ts.shape[0]:
            raise MalformedInput(
                f"values rows ({vals.shape[0]}) do not match "
                f"timestamps ({ts.shape[0]})"
            )
        if mask.shape != vals.shape:
            raise MalformedInput("missing_mask shape does not match values")
        if len(names) != vals.shape[1]:
            raise MalformedInput(
                f"{len(names)} channel names for {vals.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise MalformedInput("channel names must be unique")
        if ts.shape[0] > 1:
            steps = np.diff(ts)
            if np.any(steps <= 0):
                raise MalformedInput("timestamps must be strictly increasing")
            if np.any(steps != steps[0]):
                raise MalformedInput("timestamps must use a constant step")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "missing_mask", _frozen(mask))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def step_seconds(self) -> int:
        if self.n_samples < 2:
            return 0
        return int(self.timestamps[1] - self.timestamps[0])

    def channel_index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise KeyError(f"unknown channel {name!r}") from None

    def with_values(self, values: np.ndarray,
                    missing_mask: np.ndarray | None = None) -> "TimeSeriesPanel":
        """Copy of this panel with replaced values (and optionally mask)."""
        mask = self.missing_mask if missing_mask is None else missing_mask
        return TimeSeriesPanel(self.timestamps, self.channel_names, values, mask)

    def slice_rows(self, start: int, end: int) -> "TimeSeriesPanel":
        start, end = check_window((start, end), self.n_samples)
        return TimeSeriesPanel(
            self.timestamps[start:end],
            self.channel_names,
            self.values[start:end],
            self.missing_mask[start:end],
        )


def check_window(window: tuple[int, int], n_samples: int) -> tuple[int, int]:
    """Validate a half-open (start, end) row window against a panel length."""
    try:
        start, end = int(window[0]), int(window[1])
    except (TypeError, ValueError, IndexError):
        raise InvalidWindow(f"window must be a (start, end) pair, got {window!r}")
    if start < 0 or end > n_samples or start >= end:
        raise InvalidWindow(
            f"window ({start}, {end}) invalid for panel of length {n_samples}"
        )
    return start, end


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel training statistics used for standardization."""

    channel_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray
    train_range: tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_names",
                           tuple(str(n) for n in self.channel_names))
        object.__setattr__(self, "mean",
                           _frozen(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std",
                           _frozen(np.asarray(self.std, dtype=np.float64)))
        object.__setattr__(self, "constant",
                           _frozen(np.asarray(self.constant, dtype=bool)))
        object.__setattr__(self, "train_range",
                           (int(self.train_range[0]), int(self.train_range[1])))

    def to_json(self) -> dict:
        return {
            "format_version": STATS_FORMAT_VERSION,
            "channel_names": list(self.channel_names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "constant": [bool(v) for v in self.constant],
            "train_range": list(self.train_range),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChannelStats":
        version = obj.get("format_version")
        if version != STATS_FORMAT_VERSION:
            raise FormatVersionError(
                f"stats format version {version!r}, expected {STATS_FORMAT_VERSION}"
            )
        return cls(
            channel_names=tuple(obj["channel_names"]),
            mean=np.asarray(obj["mean"], dtype=np.float64),
            std=np.asarray(obj["std"], dtype=np.float64),
            constant=np.asarray(obj["constant"], dtype=bool),
            train_range=tuple(obj["train_range"]),
        )


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

_MISSING_TOKENS = {"", "nan", "NaN", "NAN", "null", "NULL"}


def load_panel(source) -> TimeSeriesPanel:
    """Read a panel from a CSV file path or text stream.

    Expected layout: a header row ``timestamp,<ch0>,<ch1>,...`` followed by
    one row per instant in increasing time order. Empty cells (or
    ``nan``/``null``) become missing. Non-uniform spacing is resolved by
    snapping rows to the nearest slot of a uniform grid whose step is the
    median observed gap, with unclaimed slots marked missing.
    """
    if hasattr(source, "read"):
        return _load_panel_stream(source)
    with open(source, "r", newline="") as fh:
        return _load_panel_stream(fh)


def _load_panel_stream(fh) -> TimeSeriesPanel:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInput("panel file is empty")
    if len(header) < 2:
        raise MalformedInput("header must name a timestamp column and "
                             "at least one channel")
    names = tuple(h.strip() for h in header[1:])
    if len(set(names)) != len(names):
        raise MalformedInput("duplicate channel names in header")

    times: list[int] = []
    rows: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(c.strip() == "" for c in row):
            continue
        if len(row) != len(header):
            raise MalformedInput(
                f"row {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        try:
            t = float(row[0])
        except ValueError:
            raise MalformedInput(f"row {lineno}: bad timestamp {row[0]!r}")
        if not float(t).is_integer():
            raise MalformedInput(
                f"row {lineno}: timestamp {row[0]!r} is not whole seconds"
            )
        vals = np.empty(len(names), dtype=np.float64)
        miss = np.zeros(len(names), dtype=bool)
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell in _MISSING_TOKENS:
                vals[j] = np.nan
                miss[j] = True
                continue
            try:
                v = float(cell)
            except ValueError:
                raise MalformedInput(
                    f"row {lineno}: non-numeric value {cell!r} "
                    f"in channel {names[j]!r}"
                )
            if np.isnan(v):
                vals[j] = np.nan
                miss[j] = True
            else:
                vals[j] = v
        times.append(int(t))
        rows.append(vals)
        masks.append(miss)

    if not rows:
        raise EmptyInput("panel file has a header but no data rows")

    ts = np.asarray(times, dtype=np.int64)
    values = np.vstack(rows)
    mask = np.vstack(masks)
    if np.any(np.diff(ts) <= 0):
        at = int(np.nonzero(np.diff(ts) <= 0)[0][0])
        raise MalformedInput(
            f"timestamps must be strictly increasing "
            f"({ts[at]} followed by {ts[at + 1]})"
        )

    if len(ts) > 1:
        steps = np.diff(ts)
        if np.any(steps != steps[0]):
            ts, values, mask = _snap_to_grid(ts, values, mask)
    return TimeSeriesPanel(ts, names, values, mask)


def _snap_to_grid(ts: np.ndarray, values: np.ndarray,
                  mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    step = int(np.median(np.diff(ts)))
    if step <= 0:
        raise MalformedInput("cannot infer a positive grid step")
    slots = np.rint((ts - ts[0]) / step).astype(np.int64)
    if np.any(np.diff(slots) < 1):
        raise MalformedInput("two rows snap to the same grid slot")
    n = int(slots[-1]) + 1
    grid_ts = ts[0] + step * np.arange(n, dtype=np.int64)
    grid_vals = np.full((n, values.shape[1]), np.nan)
    grid_mask = np.ones((n, values.shape[1]), dtype=bool)
    grid_vals[slots] = values
    grid_mask[slots] = mask
    return grid_ts, grid_vals, grid_mask


def save_panel(panel: TimeSeriesPanel, dest) -> None:
    """Write a panel as CSV. Floats use ``repr`` so that a save/load round
    trip reproduces every value bit for bit; missing cells are blank."""
    if hasattr(dest, "write"):
        _save_panel_stream(panel, dest)
    else:
        with open(dest, "w", newline="") as fh:
            _save_panel_stream(panel, fh)


def _save_panel_stream(panel: TimeSeriesPanel, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["timestamp", *panel.channel_names])
    for i in range(panel.n_samples):
        row: list[str] = [str(int(panel.timestamps[i]))]
        for j in range(panel.n_channels):
            if panel.missing_mask[i, j]:
                row.append("")
            else:
                row.append(repr(float(panel.values[i, j])))
        writer.writerow(row)


def panel_to_csv_text(panel: TimeSeriesPanel) -> str:
    buf = io.StringIO()
    _save_panel_stream(panel, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

IMPUTE_METHODS = ("linear", "hold-last", "channel-mean")


def impute_missing(panel: TimeSeriesPanel, method: str = "linear") -> TimeSeriesPanel:
    """Fill missing cells in ``values``; the mask is kept as provenance.

    ``linear`` interpolates between observed neighbours and holds the first
    or last observed value at the edges. ``hold-last`` forward-fills (the
    leading edge takes the first observed value). ``channel-mean`` replaces
    every gap with the channel's observed mean. A channel with no observed
    sample at all cannot be imputed. The returned panel carries no NaN but
    still marks which cells were originally missing.
    """
    if method not in IMPUTE_METHODS:
        raise ValueError(f"unknown imputation method {method!r}")
    values = np.array(panel.values, dtype=np.float64)
    mask = panel.missing_mask
    n = panel.n_samples
    idx = np.arange(n)
    for j in range(panel.n_channels):
        miss = mask[:, j]
        if not miss.any():
            continue
        obs = ~miss
        if not obs.any():
            raise DegenerateChannel(
                f"channel {panel.channel_names[j]!r} has no observed samples"
            )
        col = values[:, j]
        if method == "linear":
            col[miss] = np.interp(idx[miss], idx[obs], col[obs])
        elif method == "hold-last":
            # Index of the most recent observed sample at or before t;
            # leading gap falls back to the first observation.
            last = np.where(obs, idx, -1)
            last = np.maximum.accumulate(last)
            first_obs = idx[obs][0]
            last[last < 0] = first_obs
            col[miss] = col[last[miss]]
        else:  # channel-mean
            col[miss] = col[obs].mean()
        values[:, j] = col
    return panel.with_values(values)


def smooth(panel: TimeSeriesPanel, window: int) -> TimeSeriesPanel:
    """Centered moving average with shrinking edge windows.

    Output length equals input length; near the edges the average runs
    over however many of the ``window`` neighbours fall inside the panel.
    Missing cells must be imputed first (NaN would contaminate the mean).
    """
    if window < 1:
        raise InvalidWindow(f"smoothing window must be >= 1, got {window}")
    if window > panel.n_samples:
        raise InvalidWindow(
            f"smoothing window {window} exceeds panel length {panel.n_samples}"
        )
    if np.isnan(panel.values).any():
        raise MalformedInput("smooth requires an imputed panel (NaN cells present)")
    if window == 1:
        return panel
    n = panel.n_samples
    half_lo = (window - 1) // 2
    half_hi = window // 2
    lo = np.maximum(np.arange(n) - half_lo, 0)
    hi = np.minimum(np.arange(n) + half_hi + 1, n)
    csum = np.vstack([np.zeros((1, panel.n_channels)),
                      np.cumsum(panel.values, axis=0)])
    out = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    return panel.with_values(out)


def compute_stats(panel: TimeSeriesPanel,
                  train_range: tuple[int, int] | None = None) -> ChannelStats:
    """Mean/std over the training rows. Zero-variance channels are flagged
    constant and given std 1 so standardization maps them to zero offset."""
    if train_range is None:
        train_range = (0, panel.n_samples)
    start, end = check_window(train_range, panel.n_samples)
    train = panel.values[start:end]
    if np.isnan(train).any():
        raise MalformedInput("training rows contain missing values; impute first")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    constant = std == 0.0
    std = np.where(constant, 1.0, std)
    return ChannelStats(panel.channel_names, mean, std, constant, (start, end))


def standardize(panel: TimeSeriesPanel,
                train_range: tuple[int, int] | None = None
                ) -> tuple[TimeSeriesPanel, ChannelStats]:
    """Shift/scale every channel by statistics of the training rows only."""
    stats = compute_stats(panel, train_range)
    return apply_stats(panel, stats), stats


def apply_stats(panel: TimeSeriesPanel, stats: ChannelStats) -> TimeSeriesPanel:
    """Standardize a panel with previously fitted statistics."""
    if stats.channel_names != panel.channel_names:
        raise MalformedInput("stats were fitted on different channels")
    values = (panel.values - stats.mean) / stats.std
    return panel.with_values(values)


def destandardize(panel: TimeSeriesPanel, stats: ChannelStats) -> TimeSeriesPanel:
    """Inverse of :func:`apply_stats`."""
    if stats.channel_names != panel.channel_names:
        raise MalformedInput("stats were fitted on different channels")
    values = panel.values * stats.std + stats.mean
    return panel.with_values(values)


def save_stats(stats: ChannelStats, dest) -> None:
    payload = json.dumps(stats.to_json(), indent=2, sort_keys=True)
    if hasattr(dest, "write"):
        dest.write(payload + "\n")
    else:
        with open(dest, "w") as fh:
            fh.write(payload + "\n")


def load_stats(source) -> ChannelStats:
    if hasattr(source, "read"):
        obj = json.load(source)
    else:
        with open(source, "r") as fh:
            obj = json.load(fh)
    return ChannelStats.from_json(obj)


def make_panel(values: np.ndarray,
               channel_names: Sequence[str] | None = None,
               start_timestamp: int = 0,
               step_seconds: int = 60,
               missing_mask: np.ndarray | None = None) -> TimeSeriesPanel:
    """Convenience constructor used by the generator and by tests."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise MalformedInput("values must be (T, D)")
    t, d = values.shape
    if channel_names is None:
        channel_names = tuple(f"ch{j}" for j in range(d))
    ts = start_timestamp + step_seconds * np.arange(t, dtype=np.int64)
    if missing_mask is None:
        missing_mask = np.isnan(values)
    return TimeSeriesPanel(ts, tuple(channel_names), values, missing_mask)
