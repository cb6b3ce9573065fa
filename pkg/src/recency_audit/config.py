"""Declarative run configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backend import MOCK_KINDS, BackendConfig, MockSpec, stable_hash
from .experiment import DEFAULT_LEVEL_MAP, WindowPlan, check_level_map
from .injection import DateSchedule
from .metrics import DEFAULT_KS
from .protocol import REPAIR, STRICT


class ConfigError(ValueError):
    def __init__(self, field_name: str, reason: str, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{field_name}: {reason}")
        self.field = field_name
        self.reason = reason
        self.path = path


@dataclass
class PathsConfig:
    runs: str = ""
    qrels: str = ""
    passages: str = ""
    topics: str = ""
    output: str = "runs/audit"


@dataclass
class BackendSection:
    kind: str = "remote"
    label: str = ""
    endpoint: str = BackendConfig.endpoint
    model: str = BackendConfig.model
    top_p: float = 1.0
    temperature: float = 0.0
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrency: int = 4
    requests_per_minute: float | None = None
    api_key_env: str = "OPENAI_API_KEY"
    lam: float | None = None
    seed: int = 0
    noise: float = 0.0

    @property
    def display_name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "remote":
            return self.model
        return f"{self.kind}(λ={self.lam})" if self.kind == "recency_greedy" else self.kind

    def remote_config(self) -> BackendConfig:
        return BackendConfig(
            endpoint=self.endpoint, model=self.model, top_p=self.top_p, temperature=self.temperature,
            frequency_penalty=self.frequency_penalty, presence_penalty=self.presence_penalty,
            timeout=self.timeout, max_retries=self.max_retries, max_concurrency=self.max_concurrency,
            api_key_env=self.api_key_env, requests_per_minute=self.requests_per_minute,
        )

    def mock_spec(self) -> MockSpec:
        return MockSpec(self.kind, lam=self.lam, seed=self.seed, noise=self.noise)


@dataclass
class ScheduleSection:
    newest_year: int = 2025
    month_day: str = "01/01"
    step_years: int = 1
    template: str = "Published on {DATE}. "
    old_year: int = 1980
    fresh_year: int = 2025

    def date_schedule(self) -> DateSchedule:
        return DateSchedule(self.newest_year, self.month_day, self.step_years, self.template)


@dataclass
class ExperimentSection:
    listwise: bool = True
    pairwise: bool = False
    top_k: int = 100
    ks: list[int] = field(default_factory=lambda: list(DEFAULT_KS))
    level_map: dict[int, int] = field(default_factory=lambda: dict(DEFAULT_LEVEL_MAP))
    max_grade: int = 3
    pair_cap: int | None = None
    seed: int = 0
    parse_mode: str = REPAIR
    workers: int = 4


@dataclass
class RunConfig:
    collection: str = "collection"
    paths: PathsConfig = field(default_factory=PathsConfig)
    backend: BackendSection = field(default_factory=BackendSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    window: WindowPlan = field(default_factory=WindowPlan)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["experiment"]["level_map"] = {str(k): v for k, v in self.experiment.level_map.items()}
        return d

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())[:16]


_SECTIONS = {
    "paths": PathsConfig,
    "backend": BackendSection,
    "schedule": ScheduleSection,
    "window": WindowPlan,
    "experiment": ExperimentSection,
}


def _build(cls, data, section: str, source):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(section, "must be a mapping", source)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", "unknown field", source)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, str(exc), source) from None


def config_from_dict(data: dict, source=None, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping", source)
    unknown = sorted(set(data) - set(_SECTIONS) - {"collection"})
    if unknown:
        raise ConfigError(unknown[0], "unknown section", source)
    sections = {name: _build(cls, data.get(name), name, source) for name, cls in _SECTIONS.items()}
    exp = sections["experiment"]
    try:
        exp.level_map = {int(k): int(v) for k, v in exp.level_map.items()}
    except (TypeError, ValueError, AttributeError):
        raise ConfigError("experiment.level_map", "keys and values must be integers", source) from None
    if base_dir is not None:
        paths = sections["paths"]
        for name in ("runs", "qrels", "passages", "topics", "output"):
            value = getattr(paths, name)
            if value and not Path(value).is_absolute():
                setattr(paths, name, str((base_dir / value).resolve()))
    cfg = RunConfig(collection=str(data.get("collection", "collection")), **sections)
    validate_fields(cfg, source)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text("utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"unparseable config: {exc}", path) from None
    return config_from_dict(data or {}, source=path, base_dir=path.parent)


def save_snapshot(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", "utf-8")


def load_snapshot(path) -> RunConfig:
    return config_from_dict(json.loads(Path(path).read_text("utf-8")), source=path)


def validate_fields(cfg: RunConfig, source=None) -> None:
    b, exp, sch = cfg.backend, cfg.experiment, cfg.schedule
    if b.kind != "remote" and b.kind not in MOCK_KINDS:
        raise ConfigError("backend.kind", f"unknown backend {b.kind!r}", source)
    try:
        b.remote_config() if b.kind == "remote" else b.mock_spec()
    except ValueError as exc:
        raise ConfigError("backend", str(exc), source) from None
    try:
        sch.date_schedule()
    except ValueError as exc:
        raise ConfigError("schedule", str(exc), source) from None
    if exp.parse_mode not in (STRICT, REPAIR):
        raise ConfigError("experiment.parse_mode", "must be 'strict' or 'repair'", source)
    if exp.top_k < 1:
        raise ConfigError("experiment.top_k", "must be >= 1", source)
    if list(exp.ks) != sorted(set(exp.ks)) or not exp.ks or exp.ks[0] < 1:
        raise ConfigError("experiment.ks", "must be strictly ascending positive integers", source)
    if exp.ks[-1] > exp.top_k:
        raise ConfigError("experiment.ks", f"K={exp.ks[-1]} exceeds top_k={exp.top_k}", source)
    if exp.workers < 1:
        raise ConfigError("experiment.workers", "must be >= 1", source)
    try:
        check_level_map(exp.level_map)
    except ValueError as exc:
        raise ConfigError("experiment.level_map", str(exc), source) from None
    if exp.pairwise and sch.old_year >= sch.fresh_year:
        raise ConfigError("schedule.old_year", "must be earlier than fresh_year", source)
    oldest = sch.newest_year - (exp.top_k - 1) * sch.step_years
    if oldest <= 0:
        raise ConfigError("schedule.newest_year", f"top_k={exp.top_k} would produce year {oldest}", source)


def validate_paths(cfg: RunConfig, source=None) -> None:
    p = cfg.paths
    # qrels are always needed: only judged topics are audited
    for name in ("runs", "qrels", "passages", "topics"):
        value = getattr(p, name)
        if not value:
            raise ConfigError(f"paths.{name}", "not set", source)
        if not Path(value).exists():
            raise ConfigError(f"paths.{name}", f"file not found: {value}", source)
