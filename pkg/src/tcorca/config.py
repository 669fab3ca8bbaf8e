"""Run configuration: one JSON document drives every CLI command.

The document is strictly validated: unknown keys are rejected at every
level, missing keys take documented defaults, and the format version is
checked on load. All randomness in a run flows from the single top-level
``seed``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .causal import CausalDiscoveryConfig
from .errors import FormatVersionError, InvalidSpec
from .evaluation import DEFAULT_SWEEP, BenchmarkConfig
from .invariant import FccgConfig
from .panel import IMPUTE_METHODS
from .rca import METHODS, LbpParams

CONFIG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PathsConfig:
    panel: str | None = None
    model: str | None = None
    event: str | None = None
    truth: str | None = None
    out_dir: str = "."


@dataclass(frozen=True)
class ScenarioConfig:
    """Arguments for the stock random benchmark scenario.

    ``file`` points at an explicit ScenarioSpec JSON and overrides the
    generated topology entirely.
    """

    file: str | None = None
    n_channels: int = 30
    n_samples: int = 5000
    n_sources: int = 3
    n_anomalies: int = 5
    anomaly_kinds: tuple[str, ...] = ("level-shift",)
    anomaly_window: int = 150
    noise_std: float = 0.05
    propagate: bool = True


@dataclass(frozen=True)
class PreprocessConfig:
    impute: str = "linear"
    smooth_window: int = 1

    def __post_init__(self) -> None:
        if self.impute not in IMPUTE_METHODS:
            raise InvalidSpec(
                f"impute must be one of {IMPUTE_METHODS}, got {self.impute!r}"
            )
        if self.smooth_window < 1:
            raise InvalidSpec("smooth_window must be >= 1")


@dataclass(frozen=True)
class DetectConfig:
    window: int = 150
    stride: int | None = None
    system_threshold: float = 0.05
    break_ratio_min: float = 0.2


@dataclass(frozen=True)
class RcaConfig:
    method: str = "tcorca"
    top_n: int = 5
    k_sigma: float = 3.0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise InvalidSpec(
                f"method must be one of {METHODS}, got {self.method!r}"
            )
        if self.top_n < 1:
            raise InvalidSpec("top_n must be >= 1")


@dataclass(frozen=True)
class BenchConfig:
    n_seeds: int = 20
    n_anomalies: int = 5
    sweep: tuple[int, ...] = ()
    methods: tuple[str, ...] = METHODS
    train_frac: float = 0.6
    jobs: int = 1

    def __post_init__(self) -> None:
        for m in self.methods:
            if m not in METHODS:
                raise InvalidSpec(f"unknown benchmark method {m!r}")
        if self.n_seeds < 1:
            raise InvalidSpec("n_seeds must be >= 1")
        if self.jobs < 1:
            raise InvalidSpec("jobs must be >= 1")


_TUPLE_FIELDS = {"anomaly_kinds", "sweep", "methods"}


def _build_section(cls, obj: dict, context: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise InvalidSpec(f"unknown keys in {context}: {sorted(unknown)}")
    kwargs = {}
    for key, value in obj.items():
        if key in _TUPLE_FIELDS and value is not None:
            value = tuple(value)
        if key == "train_range" and value is not None:
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    fccg: FccgConfig = field(default_factory=FccgConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    causal: CausalDiscoveryConfig = field(default_factory=CausalDiscoveryConfig)
    lbp: LbpParams = field(default_factory=LbpParams)
    rca: RcaConfig = field(default_factory=RcaConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_json(self) -> dict:
        doc = {"format_version": CONFIG_FORMAT_VERSION, "seed": self.seed}
        for name in ("paths", "scenario", "preprocess", "fccg", "detect",
                     "causal", "lbp", "rca", "bench"):
            section = asdict(getattr(self, name))
            doc[name] = {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in section.items()}
        return doc

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        sections = {
            "paths": PathsConfig,
            "scenario": ScenarioConfig,
            "preprocess": PreprocessConfig,
            "fccg": FccgConfig,
            "detect": DetectConfig,
            "causal": CausalDiscoveryConfig,
            "lbp": LbpParams,
            "rca": RcaConfig,
            "bench": BenchConfig,
        }
        known = {"format_version", "seed"} | set(sections)
        unknown = set(obj) - known
        if unknown:
            raise InvalidSpec(f"unknown config keys: {sorted(unknown)}")
        version = obj.get("format_version", CONFIG_FORMAT_VERSION)
        if version != CONFIG_FORMAT_VERSION:
            raise FormatVersionError(
                f"config format version {version!r}, "
                f"expected {CONFIG_FORMAT_VERSION}"
            )
        kwargs = {"seed": int(obj.get("seed", 0))}
        for name, section_cls in sections.items():
            section_obj = obj.get(name, {})
            if not isinstance(section_obj, dict):
                raise InvalidSpec(f"config section {name!r} must be an object")
            kwargs[name] = _build_section(section_cls, section_obj, name)
        return cls(**kwargs)

    def benchmark_config(self) -> BenchmarkConfig:
        return BenchmarkConfig(
            train_frac=self.bench.train_frac,
            fccg=self.fccg,
            causal=self.causal,
            lbp=self.lbp,
            k_sigma=self.rca.k_sigma,
            system_threshold=self.detect.system_threshold,
            break_ratio_min=self.detect.break_ratio_min,
        )


def load_config(path) -> RunConfig:
    if hasattr(path, "read"):
        obj = json.load(path)
    else:
        with open(path, "r") as fh:
            obj = json.load(fh)
    return RunConfig.from_json(obj)


def dump_config(config: RunConfig) -> str:
    return json.dumps(config.to_json(), indent=2, sort_keys=True)
