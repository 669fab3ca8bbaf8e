"""Synthetic KPI benchmark generator.

Base channels are sinusoids with seeded random frequency, amplitude and
phase; every channel additionally carries white Gaussian noise. Dependent
channels are lagged linear combinations of their parents' *observed*
series, so each dependent equals its structural equation exactly (its
deviation from the noiseless combination is precisely its own noise
draw). Channels may carry private tones on top (see
``ScenarioSpec.own_tones``). Generation runs on an axis extended into the
past by the longest cumulative delay so that row 0 of the emitted panel
is already in steady state.

Anomaly injection picks root-cause channels and transforms them inside
one shared window: an additive spike (+8 sigma for 1-3 samples), an
additive level shift (+5 sigma over the window) or an amplitude change
(x2.5 around the channel mean). Sigma is the clean channel's standard
deviation. With ``propagate`` enabled the whole system is re-derived from
the modified series, so descendants exhibit symptoms mechanically; the
ground truth records only the injected channels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatVersionError, InvalidSpec
from .panel import TimeSeriesPanel, make_panel

TRUTH_FORMAT_VERSION = 1

ANOMALY_KINDS = ("spike", "level-shift", "amplitude-change")

# Injection magnitudes, in units of the clean channel std (scale factor
# for amplitude changes).
SPIKE_SIGMA = 8.0
SHIFT_SIGMA = 5.0
AMPLITUDE_FACTOR = 2.5

_INJECT_STREAM = 0x1A9E


@dataclass(frozen=True)
class Dependency:
    source: int
    target: int
    delay: int
    gain: float

    def to_json(self) -> dict:
        return {"source": self.source, "target": self.target,
                "delay": self.delay, "gain": float(self.gain)}

    @classmethod
    def from_json(cls, obj: dict) -> "Dependency":
        return cls(source=int(obj["source"]), target=int(obj["target"]),
                   delay=int(obj["delay"]), gain=float(obj["gain"]))


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete, seedable description of one synthetic scenario.

    ``base_harmonics`` optionally enriches each source with second and
    third harmonics: one (h2, h3, phase2, phase3) tuple per source,
    relative to the fundamental. Absent, sources are pure sinusoids.

    ``own_tones`` optionally adds private sinusoids on top of individual
    channels: each entry is (channel, frequency, amplitude, phase), with
    frequency in cycles per sample. The tone is part of the channel's
    observed series, so dependents read it like any other content, but it
    is injected after the structural combination of the parents (a
    channel's tone never comes from upstream).
    """

    n_channels: int
    n_samples: int
    n_sources: int
    dependencies: tuple[Dependency, ...]
    noise_std: float = 0.04
    n_anomalies: int = 0
    anomaly_kinds: tuple[str, ...] = ("level-shift",)
    anomaly_window: int = 150
    propagate: bool = True
    seed: int = 0
    injectable_channels: tuple[int, ...] | None = None
    anomaly_start: int | None = None
    base_freqs: tuple[float, ...] | None = None
    base_amps: tuple[float, ...] | None = None
    base_phases: tuple[float, ...] | None = None
    base_harmonics: tuple[tuple[float, float, float, float], ...] | None = None
    own_tones: tuple[tuple[int, float, float, float], ...] | None = None
    start_timestamp: int = 0
    step_seconds: int = 60

    def __post_init__(self) -> None:
        object.__setattr__(self, "dependencies", tuple(self.dependencies))
        object.__setattr__(self, "anomaly_kinds", tuple(self.anomaly_kinds))
        if self.injectable_channels is not None:
            object.__setattr__(self, "injectable_channels",
                               tuple(sorted(set(self.injectable_channels))))
        if self.base_harmonics is not None:
            object.__setattr__(self, "base_harmonics",
                               tuple(tuple(float(x) for x in h)
                                     for h in self.base_harmonics))
        if self.own_tones is not None:
            object.__setattr__(self, "own_tones",
                               tuple((int(t[0]), float(t[1]), float(t[2]),
                                      float(t[3])) for t in self.own_tones))
        validate_spec(self)

    @property
    def source_channels(self) -> tuple[int, ...]:
        targets = {d.target for d in self.dependencies}
        return tuple(c for c in range(self.n_channels) if c not in targets)

    def parents_of(self, channel: int) -> tuple[Dependency, ...]:
        return tuple(d for d in self.dependencies if d.target == channel)

    def to_json(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "n_samples": self.n_samples,
            "n_sources": self.n_sources,
            "dependencies": [d.to_json() for d in self.dependencies],
            "noise_std": float(self.noise_std),
            "n_anomalies": self.n_anomalies,
            "anomaly_kinds": list(self.anomaly_kinds),
            "anomaly_window": self.anomaly_window,
            "propagate": self.propagate,
            "seed": self.seed,
            "injectable_channels": (None if self.injectable_channels is None
                                    else list(self.injectable_channels)),
            "anomaly_start": self.anomaly_start,
            "base_freqs": (None if self.base_freqs is None
                           else [float(v) for v in self.base_freqs]),
            "base_amps": (None if self.base_amps is None
                          else [float(v) for v in self.base_amps]),
            "base_phases": (None if self.base_phases is None
                            else [float(v) for v in self.base_phases]),
            "base_harmonics": (None if self.base_harmonics is None
                               else [list(h) for h in self.base_harmonics]),
            "own_tones": (None if self.own_tones is None
                          else [[t[0], float(t[1]), float(t[2]), float(t[3])]
                                for t in self.own_tones]),
            "start_timestamp": self.start_timestamp,
            "step_seconds": self.step_seconds,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise InvalidSpec(f"unknown scenario keys: {sorted(unknown)}")
        kwargs = dict(obj)
        kwargs["dependencies"] = tuple(
            Dependency.from_json(d) for d in obj.get("dependencies", ())
        )
        for key in ("anomaly_kinds",):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        for key in ("injectable_channels", "base_freqs", "base_amps",
                    "base_phases"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("base_harmonics") is not None:
            kwargs["base_harmonics"] = tuple(
                tuple(h) for h in kwargs["base_harmonics"]
            )
        if kwargs.get("own_tones") is not None:
            kwargs["own_tones"] = tuple(tuple(t) for t in kwargs["own_tones"])
        return cls(**kwargs)


def _find_cycle(spec: ScenarioSpec) -> list[int] | None:
    parents: dict[int, list[int]] = {}
    for d in spec.dependencies:
        parents.setdefault(d.target, []).append(d.source)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {c: WHITE for c in range(spec.n_channels)}
    stack_path: list[int] = []

    def visit(c: int) -> list[int] | None:
        color[c] = GRAY
        stack_path.append(c)
        for p in parents.get(c, ()):
            if color[p] == GRAY:
                i = stack_path.index(p)
                return stack_path[i:] + [p]
            if color[p] == WHITE:
                cyc = visit(p)
                if cyc is not None:
                    return cyc
        stack_path.pop()
        color[c] = BLACK
        return None

    for c in range(spec.n_channels):
        if color[c] == WHITE:
            cyc = visit(c)
            if cyc is not None:
                return cyc
    return None


def validate_spec(spec: ScenarioSpec) -> None:
    if spec.n_channels < 1 or spec.n_samples < 1:
        raise InvalidSpec("n_channels and n_samples must be positive")
    if not 0 <= spec.n_sources <= spec.n_channels:
        raise InvalidSpec(f"n_sources {spec.n_sources} out of range")
    if spec.noise_std < 0:
        raise InvalidSpec("noise_std must be >= 0")
    if not 0 <= spec.n_anomalies <= spec.n_channels:
        raise InvalidSpec(f"n_anomalies {spec.n_anomalies} out of range")
    for d in spec.dependencies:
        if not (0 <= d.source < spec.n_channels
                and 0 <= d.target < spec.n_channels):
            raise InvalidSpec(f"dependency endpoint out of range: {d}")
        if d.source == d.target:
            raise InvalidSpec(f"self-dependency on channel {d.target}")
        if d.delay < 1:
            raise InvalidSpec(f"dependency delay must be >= 1: {d}")
        if not math.isfinite(d.gain):
            raise InvalidSpec(f"dependency gain must be finite: {d}")
    # The same channel pair may be linked at several delays (a multi-tap
    # response); only an exact (source, target, delay) repeat is redundant.
    tap_seen = set()
    for d in spec.dependencies:
        key = (d.source, d.target, d.delay)
        if key in tap_seen:
            raise InvalidSpec(
                f"duplicate dependency {d.source}->{d.target} at delay {d.delay}"
            )
        tap_seen.add(key)
    cycle = _find_cycle(spec)
    if cycle is not None:
        path = " -> ".join(str(c) for c in cycle)
        raise InvalidSpec(f"dependency cycle: {path}")
    targets = {d.target for d in spec.dependencies}
    n_free = spec.n_channels - len(targets)
    if n_free != spec.n_sources:
        raise InvalidSpec(
            f"n_sources {spec.n_sources} does not match the "
            f"{n_free} channels without parents"
        )
    if spec.anomaly_kinds and any(k not in ANOMALY_KINDS
                                  for k in spec.anomaly_kinds):
        raise InvalidSpec(f"unknown anomaly kind in {spec.anomaly_kinds}")
    if spec.n_anomalies > 0:
        if not spec.anomaly_kinds:
            raise InvalidSpec("anomaly_kinds empty with n_anomalies > 0")
        if not 1 <= spec.anomaly_window <= spec.n_samples:
            raise InvalidSpec(
                f"anomaly_window {spec.anomaly_window} does not fit "
                f"in {spec.n_samples} samples"
            )
        pool = (spec.injectable_channels
                if spec.injectable_channels is not None
                else tuple(range(spec.n_channels)))
        if any(not 0 <= c < spec.n_channels for c in pool):
            raise InvalidSpec("injectable channel out of range")
        if spec.n_anomalies > len(pool):
            raise InvalidSpec(
                f"n_anomalies {spec.n_anomalies} exceeds the "
                f"{len(pool)} injectable channels"
            )
        if spec.anomaly_start is not None:
            if not 0 <= spec.anomaly_start <= spec.n_samples - spec.anomaly_window:
                raise InvalidSpec("anomaly_start leaves no room for the window")
    for name in ("base_freqs", "base_amps", "base_phases", "base_harmonics"):
        vals = getattr(spec, name)
        if vals is not None and len(vals) != spec.n_sources:
            raise InvalidSpec(
                f"{name} must list one value per source channel "
                f"({spec.n_sources}), got {len(vals)}"
            )
    if spec.base_harmonics is not None:
        for h in spec.base_harmonics:
            if len(h) != 4:
                raise InvalidSpec(
                    "each base_harmonics entry must be "
                    "(h2, h3, phase2, phase3)"
                )
    if spec.own_tones is not None:
        for t in spec.own_tones:
            if len(t) != 4:
                raise InvalidSpec(
                    "each own_tones entry must be "
                    "(channel, frequency, amplitude, phase)"
                )
            channel, freq, amp, phase = t
            if not 0 <= channel < spec.n_channels:
                raise InvalidSpec(f"own_tones channel {channel} out of range")
            if not 0.0 < freq < 0.5:
                raise InvalidSpec(
                    f"own_tones frequency {freq} outside (0, 0.5) "
                    "cycles per sample"
                )
            if not (math.isfinite(amp) and math.isfinite(phase)):
                raise InvalidSpec("own_tones amplitude and phase must be finite")


@dataclass(frozen=True)
class GroundTruth:
    """What was actually injected, plus the structural DAG."""

    dependencies: tuple[Dependency, ...]
    source_channels: tuple[int, ...]
    windows: tuple[tuple[int, int], ...] = ()
    root_causes: tuple[tuple[int, ...], ...] = ()
    kinds: tuple[tuple[str, ...], ...] = ()

    def to_json(self) -> dict:
        return {
            "format_version": TRUTH_FORMAT_VERSION,
            "dependencies": [d.to_json() for d in self.dependencies],
            "source_channels": list(self.source_channels),
            "windows": [list(w) for w in self.windows],
            "root_causes": [list(rc) for rc in self.root_causes],
            "kinds": [list(k) for k in self.kinds],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        version = obj.get("format_version")
        if version != TRUTH_FORMAT_VERSION:
            raise FormatVersionError(
                f"truth format version {version!r}, expected {TRUTH_FORMAT_VERSION}"
            )
        return cls(
            dependencies=tuple(Dependency.from_json(d)
                               for d in obj["dependencies"]),
            source_channels=tuple(int(c) for c in obj["source_channels"]),
            windows=tuple(tuple(w) for w in obj["windows"]),
            root_causes=tuple(tuple(int(c) for c in rc)
                              for rc in obj["root_causes"]),
            kinds=tuple(tuple(k) for k in obj["kinds"]),
        )


def save_truth(truth: GroundTruth, dest) -> None:
    text = json.dumps(truth.to_json(), indent=2, sort_keys=True)
    if hasattr(dest, "write"):
        dest.write(text + "\n")
    else:
        with open(dest, "w") as fh:
            fh.write(text + "\n")


def load_truth(source) -> GroundTruth:
    if hasattr(source, "read"):
        obj = json.load(source)
    else:
        with open(source, "r") as fh:
            obj = json.load(fh)
    return GroundTruth.from_json(obj)


# ---------------------------------------------------------------------------
# Generation internals
# ---------------------------------------------------------------------------


def _topo_order(spec: ScenarioSpec) -> list[int]:
    parents = {c: spec.parents_of(c) for c in range(spec.n_channels)}
    depth: dict[int, int] = {}

    def resolve(c: int) -> int:
        if c in depth:
            return depth[c]
        deps = parents[c]
        depth[c] = 0 if not deps else 1 + max(resolve(d.source) for d in deps)
        return depth[c]

    for c in range(spec.n_channels):
        resolve(c)
    return sorted(range(spec.n_channels), key=lambda c: (depth[c], c))


def _extension(spec: ScenarioSpec) -> int:
    """Longest cumulative delay along any dependency path."""
    cum: dict[int, int] = {}
    for c in _topo_order(spec):
        deps = spec.parents_of(c)
        cum[c] = 0 if not deps else max(cum[d.source] + d.delay for d in deps)
    return max(cum.values(), default=0)


def _base_params(spec: ScenarioSpec, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Frequency/amplitude/phase per source channel, honoring overrides.

    Draw order is pinned: for each source channel in ascending index,
    frequency then amplitude then phase (skipping whichever are
    overridden), so scenarios are reproducible across implementations of
    this documented sequence. Harmonics are never drawn here; they exist
    only when the spec carries an explicit ``base_harmonics`` override,
    and default to zero (pure sinusoids).
    """
    n = spec.n_sources
    freqs = np.empty(n)
    amps = np.empty(n)
    phases = np.empty(n)
    for j in range(n):
        if spec.base_freqs is not None:
            freqs[j] = spec.base_freqs[j]
        else:
            freqs[j] = rng.uniform(0.01, 0.1)
        if spec.base_amps is not None:
            amps[j] = spec.base_amps[j]
        else:
            amps[j] = rng.uniform(0.5, 2.0)
        if spec.base_phases is not None:
            phases[j] = spec.base_phases[j]
        else:
            phases[j] = rng.uniform(0.0, 2.0 * math.pi)
    if spec.base_harmonics is not None:
        harmonics = np.asarray(spec.base_harmonics, dtype=float)
    else:
        harmonics = np.zeros((n, 4))
    return freqs, amps, phases, harmonics


def _derive(spec: ScenarioSpec, ext: int,
            freqs: np.ndarray, amps: np.ndarray, phases: np.ndarray,
            harmonics: np.ndarray, noise: np.ndarray,
            transforms: dict[int, object] | None = None,
            propagate: bool = True) -> np.ndarray:
    """Fill the extended (n_samples + ext, D) value matrix.

    ``transforms`` maps channel -> callable(series) -> series applied to
    the channel's own values right after derivation (propagate=True) or to
    the finished clean matrix (propagate=False).
    """
    total = spec.n_samples + ext
    values = np.empty((total, spec.n_channels))
    t_ext = np.arange(total) - ext  # row ext corresponds to sample 0
    sources = spec.source_channels
    src_pos = {c: j for j, c in enumerate(sources)}
    tones: dict[int, list[tuple[float, float, float]]] = {}
    for entry in spec.own_tones or ():
        tones.setdefault(entry[0], []).append(entry[1:])

    order = _topo_order(spec)
    for c in order:
        deps = spec.parents_of(c)
        if not deps:
            j = src_pos[c]
            w = 2.0 * math.pi * freqs[j] * t_ext
            h2, h3, ph2, ph3 = harmonics[j]
            series = np.sin(w + phases[j])
            if h2 != 0.0:
                series = series + h2 * np.sin(2.0 * w + ph2)
            if h3 != 0.0:
                series = series + h3 * np.sin(3.0 * w + ph3)
            series = amps[j] * series + noise[:, c]
        else:
            series = noise[:, c].copy()
            for d in deps:
                series[d.delay:] += d.gain * values[:total - d.delay, d.source]
                # Rows whose parent lag reaches before the extended axis
                # are never emitted nor read (extension covers all paths),
                # but keep them finite.
                series[:d.delay] += d.gain * values[0, d.source]
        for freq, amp, phase in tones.get(c, ()):
            series = series + amp * np.sin(2.0 * math.pi * freq * t_ext + phase)
        if propagate and transforms and c in transforms:
            series = transforms[c](series)
        values[:, c] = series

    if not propagate and transforms:
        for c, fn in transforms.items():
            values[:, c] = fn(values[:, c])
    return values


def _materialize(spec: ScenarioSpec) -> tuple[np.ndarray, int]:
    """Clean extended value matrix, fully determined by the spec."""
    ext = _extension(spec)
    rng = np.random.default_rng(spec.seed)
    freqs, amps, phases, harmonics = _base_params(spec, rng)
    noise = (rng.normal(0.0, spec.noise_std,
                        size=(spec.n_samples + ext, spec.n_channels))
             if spec.noise_std > 0
             else np.zeros((spec.n_samples + ext, spec.n_channels)))
    return _derive(spec, ext, freqs, amps, phases, harmonics, noise), ext


def _materialize_with(spec: ScenarioSpec,
                      transforms: dict[int, object]) -> np.ndarray:
    ext = _extension(spec)
    rng = np.random.default_rng(spec.seed)
    freqs, amps, phases, harmonics = _base_params(spec, rng)
    noise = (rng.normal(0.0, spec.noise_std,
                        size=(spec.n_samples + ext, spec.n_channels))
             if spec.noise_std > 0
             else np.zeros((spec.n_samples + ext, spec.n_channels)))
    return _derive(spec, ext, freqs, amps, phases, harmonics, noise,
                   transforms=transforms, propagate=spec.propagate)


def generate_panel(spec: ScenarioSpec) -> tuple[TimeSeriesPanel, GroundTruth]:
    """Clean panel plus structural ground truth (no anomalies yet)."""
    values, ext = _materialize(spec)
    panel = make_panel(values[ext:], start_timestamp=spec.start_timestamp,
                       step_seconds=spec.step_seconds)
    truth = GroundTruth(dependencies=spec.dependencies,
                        source_channels=spec.source_channels)
    return panel, truth


def inject_anomalies(panel: TimeSeriesPanel, truth: GroundTruth,
                     spec: ScenarioSpec) -> tuple[TimeSeriesPanel, GroundTruth]:
    """Apply the spec's injections to a freshly generated panel.

    Channel choice, window placement, kinds and spike geometry all come
    from a dedicated RNG stream keyed on (seed, constant) so that the
    clean panel and the injection plan are independently reproducible.
    """
    if spec.n_anomalies == 0:
        return panel, truth
    rng = np.random.default_rng([spec.seed, _INJECT_STREAM])
    pool = (spec.injectable_channels if spec.injectable_channels is not None
            else tuple(range(spec.n_channels)))
    channels = tuple(sorted(
        int(c) for c in rng.choice(len(pool), size=spec.n_anomalies,
                                   replace=False)
    ))
    channels = tuple(pool[i] for i in channels)

    if spec.anomaly_start is not None:
        start = spec.anomaly_start
    else:
        lo = min(int(math.ceil(0.7 * spec.n_samples)),
                 spec.n_samples - spec.anomaly_window)
        hi = spec.n_samples - spec.anomaly_window
        start = int(rng.integers(lo, hi + 1))
    window = (start, start + spec.anomaly_window)

    for old_window, old_channels in zip(truth.windows, truth.root_causes):
        overlap = not (window[1] <= old_window[0] or old_window[1] <= window[0])
        if overlap and set(old_channels) & set(channels):
            raise InvalidSpec(
                f"window {window} overlaps {old_window} on a shared channel"
            )

    ext = _extension(spec)
    clean = panel.values
    kinds: list[str] = []
    transforms: dict[int, object] = {}
    lo_ext, hi_ext = ext + window[0], ext + window[1]
    for c in channels:
        kind = str(rng.choice(list(spec.anomaly_kinds)))
        kinds.append(kind)
        sigma = float(np.std(clean[:, c]))
        mu = float(np.mean(clean[:, c]))
        if sigma == 0.0:
            sigma = 1.0
        if kind == "spike":
            duration = int(rng.integers(1, 4))
            offset = int(rng.integers(0, spec.anomaly_window - duration + 1))
            a, b = lo_ext + offset, lo_ext + offset + duration
            delta = SPIKE_SIGMA * sigma

            def fn(series, a=a, b=b, delta=delta):
                out = series.copy()
                out[a:b] += delta
                return out
        elif kind == "level-shift":
            delta = SHIFT_SIGMA * sigma

            def fn(series, a=lo_ext, b=hi_ext, delta=delta):
                out = series.copy()
                out[a:b] += delta
                return out
        else:  # amplitude-change
            def fn(series, a=lo_ext, b=hi_ext, mu=mu):
                out = series.copy()
                out[a:b] = mu + AMPLITUDE_FACTOR * (out[a:b] - mu)
                return out
        transforms[c] = fn

    values = _materialize_with(spec, transforms)
    new_panel = make_panel(values[ext:], channel_names=panel.channel_names,
                           start_timestamp=spec.start_timestamp,
                           step_seconds=spec.step_seconds)
    new_truth = GroundTruth(
        dependencies=truth.dependencies,
        source_channels=truth.source_channels,
        windows=truth.windows + (window,),
        root_causes=truth.root_causes + (channels,),
        kinds=truth.kinds + (tuple(kinds),),
    )
    return new_panel, new_truth


def synthesize(spec: ScenarioSpec) -> tuple[TimeSeriesPanel, GroundTruth]:
    """generate_panel followed by inject_anomalies."""
    panel, truth = generate_panel(spec)
    return inject_anomalies(panel, truth, spec)


# ---------------------------------------------------------------------------
# Scenario construction helpers
# ---------------------------------------------------------------------------

_STRUCTURE_STREAM = 0x57C7

# Variance share of a channel's private tone (the tributary flow only that
# channel and its mirror carry). A pairwise model of two channels with
# unrelated tributaries cannot explain this share of the target, which caps
# its fitness at 1 - sqrt(share) = 0.5, safely under the admission floor.
_PRIVATE_SHARE = 0.25

# Private tone frequencies live above every lineage's third harmonic
# (3 x 0.09 = 0.27 cycles/sample) so tributaries never alias driver content.
_TONE_BAND = (0.30, 0.44)


def random_scenario(n_channels: int = 30, n_samples: int = 5000,
                    n_sources: int = 3,
                    n_anomalies: int = 0,
                    anomaly_kinds: tuple[str, ...] = ("level-shift",),
                    anomaly_window: int = 150,
                    noise_std: float = 0.05,
                    propagate: bool = True,
                    seed: int = 0) -> ScenarioSpec:
    """Benchmark topology: gauge pairs on shared drivers, plus relays.

    Channel layout (ascending index): ``n_sources`` driver channels, then
    gauge pairs interleaved as (primary, mirror, primary, mirror, ...),
    then relays. Roughly one fifth of the non-driver budget becomes
    relays; the rest is split into pairs.

    Drivers emit a fundamental plus second and third harmonics. Each
    gauge pair measures one driver at two points of the same path: the
    mirror sees exactly what the primary saw, delayed one or two steps
    and rescaled. Both carry the same private tributary tone (delayed
    alike), so the mirror is a noiseless-exact delayed copy of the
    primary and a short exogenous-lag model links them almost perfectly.
    Every other pairing is blocked: the target's own tributary is a fixed
    variance share that no other channel contains, which caps cross-pair,
    gauge-to-driver and relay fits well below the admission floor.

    Relays aggregate one primary gauge with its own reflection ``L``
    steps later, ``L`` chosen as half the lineage's fundamental period.
    The reflection cancels the fundamental and third harmonic but doubles
    any sustained level change, so a fault on the parent gauge moves the
    relay about twice as many standard deviations as it moves the gauge
    itself, while the relay supports no pairwise invariant (its two taps
    are farther apart than a short lag window spans). Relays are where
    pure deviation ranking overshoots the true cause.

    Injected channels are drawn from the primary gauges: each carries an
    invariant against its mirror (a local fault is observable as exactly
    one broken relationship) and may feed a relay (faults propagate
    beyond the invariant graph).
    """
    if n_sources < 1:
        raise InvalidSpec("need at least one source channel")
    budget = n_channels - n_sources
    if budget < 2:
        raise InvalidSpec("need room for at least one gauge pair")
    n_relays = budget // 5
    n_pairs = (budget - n_relays) // 2
    n_relays += budget - n_relays - 2 * n_pairs  # odd leftover becomes a relay
    if _PRIVATE_SHARE * 0.8 ** 2 <= noise_std ** 2:
        raise InvalidSpec("noise_std swamps the private-tone budget")

    rng = np.random.default_rng([seed, _STRUCTURE_STREAM])

    lo, hi = 0.02, 0.09
    spacing = (hi - lo) / n_sources
    src_freqs = sorted(
        lo + (j + 0.5) * spacing + float(rng.uniform(-0.15, 0.15)) * spacing
        for j in range(n_sources)
    )
    src_amps = [float(rng.uniform(0.8, 1.6)) for _ in range(n_sources)]
    src_phases = [float(rng.uniform(0.0, 2.0 * math.pi))
                  for _ in range(n_sources)]
    harmonics = tuple(
        (float(rng.uniform(0.35, 0.55)), float(rng.uniform(0.35, 0.55)),
         float(rng.uniform(0.0, 2.0 * math.pi)),
         float(rng.uniform(0.0, 2.0 * math.pi)))
        for _ in range(n_sources)
    )
    # Observed driver variance: the three sinusoids plus measurement noise.
    src_var = [
        src_amps[j] ** 2 * (1.0 + harmonics[j][0] ** 2
                            + harmonics[j][1] ** 2) / 2.0 + noise_std ** 2
        for j in range(n_sources)
    ]

    n_tones = n_pairs + n_relays
    t_lo, t_hi = _TONE_BAND
    t_spacing = (t_hi - t_lo) / n_tones
    tone_freqs = [t_lo + (k + 0.5) * t_spacing for k in range(n_tones)]

    deps: list[Dependency] = []
    own_tones: list[tuple[int, float, float, float]] = []
    primaries: list[int] = []
    # Per pair: values the relay construction reads back.
    pair_lineage: list[int] = []
    pair_gain: list[float] = []
    pair_tone_amp: list[float] = []
    pair_delay: list[int] = []

    for i in range(n_pairs):
        prim = n_sources + 2 * i
        mirror = prim + 1
        j = i % n_sources
        d_prim = int(rng.integers(1, 3))
        d_gap = int(rng.integers(1, 3))
        amp_prim = float(rng.uniform(0.8, 1.6))
        amp_mirror = float(rng.uniform(0.8, 1.6))
        tone_phase = float(rng.uniform(0.0, 2.0 * math.pi))

        freq = tone_freqs[i]
        g_prim = amp_prim * math.sqrt(1.0 - _PRIVATE_SHARE) / math.sqrt(src_var[j])
        q_prim = math.sqrt(2.0 * (_PRIVATE_SHARE * amp_prim ** 2
                                  - noise_std ** 2))
        # The mirror reuses the primary's tone scaled by the gain ratio, so
        # its noiseless part is exactly the primary's, delayed by d_gap.
        ratio = amp_mirror / amp_prim
        g_mirror = ratio * g_prim
        q_mirror = ratio * q_prim

        deps.append(Dependency(source=j, target=prim, delay=d_prim,
                               gain=g_prim))
        deps.append(Dependency(source=j, target=mirror,
                               delay=d_prim + d_gap, gain=g_mirror))
        own_tones.append((prim, freq, q_prim,
                          tone_phase - 2.0 * math.pi * freq * d_prim))
        own_tones.append((mirror, freq, q_mirror,
                          tone_phase - 2.0 * math.pi * freq * (d_prim + d_gap)))
        primaries.append(prim)
        pair_lineage.append(j)
        pair_gain.append(g_prim)
        pair_tone_amp.append(q_prim)
        pair_delay.append(d_prim)

    relay_base = n_sources + 2 * n_pairs
    relay_parents = [int(p) for p in rng.choice(n_pairs, size=n_relays,
                                                replace=False)] \
        if n_relays else []
    for k, p in enumerate(relay_parents):
        relay = relay_base + k
        j = pair_lineage[p]
        d_relay = int(rng.integers(1, 3))
        amp_relay = float(rng.uniform(0.8, 1.6))
        tone_phase = float(rng.uniform(0.0, 2.0 * math.pi))

        lag = int(round(1.0 / (2.0 * src_freqs[j])))
        # Tone inventory of the parent primary, used to price the
        # two-tap aggregate analytically: each tone of frequency f and
        # amplitude a contributes 2 a^2 cos^2(pi f L) of variance, white
        # noise contributes twice its variance.
        g = pair_gain[p]
        parent_tones = [
            (src_freqs[j], g * src_amps[j]),
            (2.0 * src_freqs[j], g * src_amps[j] * harmonics[j][0]),
            (3.0 * src_freqs[j], g * src_amps[j] * harmonics[j][1]),
            (tone_freqs[p], pair_tone_amp[p]),
        ]
        comb_var = sum(
            2.0 * a ** 2 * math.cos(math.pi * f * lag) ** 2
            for f, a in parent_tones
        ) + 2.0 * (1.0 + g ** 2) * noise_std ** 2
        c_relay = amp_relay * math.sqrt(1.0 - _PRIVATE_SHARE) / math.sqrt(comb_var)
        q_relay = math.sqrt(2.0 * (_PRIVATE_SHARE * amp_relay ** 2
                                   - noise_std ** 2))

        parent = primaries[p]
        deps.append(Dependency(source=parent, target=relay, delay=d_relay,
                               gain=c_relay))
        deps.append(Dependency(source=parent, target=relay,
                               delay=d_relay + lag, gain=c_relay))
        own_tones.append((relay, tone_freqs[n_pairs + k], q_relay, tone_phase))

    return ScenarioSpec(
        n_channels=n_channels,
        n_samples=n_samples,
        n_sources=n_sources,
        dependencies=tuple(deps),
        noise_std=noise_std,
        n_anomalies=n_anomalies,
        anomaly_kinds=anomaly_kinds,
        anomaly_window=anomaly_window,
        propagate=propagate,
        seed=seed,
        injectable_channels=tuple(primaries),
        base_freqs=tuple(src_freqs),
        base_amps=tuple(src_amps),
        base_phases=tuple(src_phases),
        base_harmonics=harmonics,
        own_tones=tuple(own_tones),
    )


def planted_partition_scenario(n_channels: int, group_size: int,
                               n_samples: int = 2000, seed: int = 0,
                               noise_std: float = 0.04,
                               gain_range: tuple[float, float] = (0.8, 1.2)
                               ) -> ScenarioSpec:
    """Disjoint star groups with strong in-group coupling and none across.

    Each group is one source plus ``group_size - 1`` direct dependents.
    Group base frequencies are spread evenly over [0.01, 0.1] with a
    small seeded jitter so groups never alias each other.
    """
    if group_size < 1:
        raise InvalidSpec("group_size must be >= 1")
    n_groups = int(math.ceil(n_channels / group_size))
    rng = np.random.default_rng([seed, _STRUCTURE_STREAM])
    lo, hi = 0.01, 0.1
    spacing = (hi - lo) / n_groups
    freqs = [lo + (g + 0.5) * spacing
             + float(rng.uniform(-0.2, 0.2)) * spacing
             for g in range(n_groups)]
    amps = [float(rng.uniform(0.8, 1.5)) for _ in range(n_groups)]
    phases = [float(rng.uniform(0.0, 2.0 * math.pi)) for _ in range(n_groups)]

    deps: list[Dependency] = []
    source_ids: list[int] = []
    for g in range(n_groups):
        base = g * group_size
        if base >= n_channels:
            break
        source_ids.append(base)
        for member in range(base + 1, min(base + group_size, n_channels)):
            delay = int(rng.integers(1, 3))
            gain = float(rng.uniform(gain_range[0], gain_range[1]))
            deps.append(Dependency(source=base, target=member,
                                   delay=delay, gain=gain))

    return ScenarioSpec(
        n_channels=n_channels,
        n_samples=n_samples,
        n_sources=len(source_ids),
        dependencies=tuple(deps),
        noise_std=noise_std,
        seed=seed,
        base_freqs=tuple(freqs[:len(source_ids)]),
        base_amps=tuple(amps[:len(source_ids)]),
        base_phases=tuple(phases[:len(source_ids)]),
    )


def group_assignment(spec: ScenarioSpec) -> dict[int, int]:
    """Channel -> root-source lineage (the planted partition labels)."""
    lineage: dict[int, int] = {}
    for c in _topo_order(spec):
        deps = spec.parents_of(c)
        if not deps:
            lineage[c] = c
        else:
            roots = {lineage[d.source] for d in deps}
            lineage[c] = min(roots)
    return lineage
