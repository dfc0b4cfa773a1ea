"""Pipeline configuration: one TOML document plus ``E11_`` environment overrides.

Overrides use ``E11_<SECTION>__<KEY>`` (double underscore between section
and key), e.g. ``E11_FORECAST__L2=0.5``; top-level keys drop the section,
e.g. ``E11__SEED=3``. Values are parsed as TOML literals when possible.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corpus import DEFAULT_MIN_DATE, FilterConfig
from .embedder import EmbeddingProviderConfig
from .trend import LoessConfig

ENV_PREFIX = "E11_"


class ConfigError(ValueError):
    pass


@dataclass
class PathsSection:
    corpus: list = field(default_factory=list)
    item_bank: str = ""
    cache: str = ""
    output: str = "out"


@dataclass
class EmbedderSection:
    kind: str = "stub"
    url: str = ""
    model_id: str = "stub-bow"
    dim: int = 256
    batch_size: int = 64
    normalize: bool = True
    seed: int = 0
    max_in_flight: int = 4
    posts_per_batch: int = 256
    length_weighted: bool = False


@dataclass
class FiltersSection:
    min_words: int = 10
    min_date: str = "2010-01-01"
    require_lang: str = "en"
    forum_allowlist: list = field(default_factory=list)
    lenient: bool = False


@dataclass
class CohortsSection:
    target_forums: list = field(default_factory=lambda: ["Incels"])
    joiner_min_posts: int = 10
    joiner_min_active_months: int = 10
    joiner_window_months: int = 12
    control_min_posts: int = 10
    control_min_active_months: int = 0
    control_window_months: int = 0


@dataclass
class EfaSection:
    iters: int = 100
    quantile: float = 0.95
    k_override: int = 0
    rotation: str = "varimax"
    factor_names: list = field(default_factory=list)
    top_m: int = 10


@dataclass
class ProfileSection:
    group_by: str = "forum"
    banned_forums: list = field(default_factory=list)
    not_banned_forums: list = field(default_factory=list)
    ttest: str = "student_pooled"


@dataclass
class ForecastSection:
    offsets: list = field(default_factory=lambda: list(range(12, -1, -1)))
    folds: int = 5
    l2: float = 1.0
    seed: int = 0
    lookback_months: float = 0.0


@dataclass
class TrendSection:
    frac: float = 0.3
    degree: int = 1
    grid_points: int = 100
    window: list = field(default_factory=lambda: [-12.0, 12.0])
    per_user: bool = False
    factor: str = ""
    randomize_control_t0: bool = True


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: PathsSection = field(default_factory=PathsSection)
    embedder: EmbedderSection = field(default_factory=EmbedderSection)
    filters: FiltersSection = field(default_factory=FiltersSection)
    cohorts: CohortsSection = field(default_factory=CohortsSection)
    efa: EfaSection = field(default_factory=EfaSection)
    profile: ProfileSection = field(default_factory=ProfileSection)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    trend: TrendSection = field(default_factory=TrendSection)
    base_dir: Path = field(default_factory=Path.cwd)

    # -- derived objects -------------------------------------------------
    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else (self.base_dir / path)

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.paths.output)

    def corpus_paths(self) -> list[Path]:
        return [self.resolve(p) for p in self.paths.corpus]

    def filter_config(self) -> FilterConfig:
        f = self.filters
        return FilterConfig(
            min_words=f.min_words,
            min_date=parse_date(f.min_date),
            require_lang=f.require_lang or None,
            forum_allowlist=frozenset(f.forum_allowlist) if f.forum_allowlist else None,
        )

    def provider_config(self) -> EmbeddingProviderConfig:
        e = self.embedder
        kind = {"cache": "file_cache"}.get(e.kind, e.kind)
        return EmbeddingProviderConfig(
            kind=kind,
            url=e.url or None,
            path=str(self.resolve(self.paths.cache)) if self.paths.cache else None,
            model_id=e.model_id,
            dim=e.dim or None,
            batch_size=e.batch_size,
            normalize=e.normalize,
            seed=e.seed,
            max_in_flight=e.max_in_flight,
        )

    def loess_config(self) -> LoessConfig:
        t = self.trend
        return LoessConfig(frac=t.frac, degree=t.degree, grid_points=t.grid_points)

    def as_dict(self, include_paths: bool = True) -> dict:
        d = {f.name: (asdict(getattr(self, f.name)) if f.name not in ("seed", "base_dir") else getattr(self, f.name))
             for f in fields(self) if f.name != "base_dir"}
        if not include_paths:
            d.pop("paths")
        return d

    def fingerprint(self) -> str:
        """Hash of every setting except file locations."""
        blob = json.dumps(self.as_dict(include_paths=False), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def validate(self, need_corpus: bool = False) -> None:
        try:
            self.filter_config()
            self.provider_config()
            self.loess_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if need_corpus:
            if not self.paths.corpus:
                raise ConfigError("paths.corpus is empty")
            for p in self.corpus_paths():
                if not p.exists():
                    raise ConfigError(f"corpus file {p} does not exist")
        if self.paths.item_bank and not self.resolve(self.paths.item_bank).exists():
            raise ConfigError(f"item bank {self.resolve(self.paths.item_bank)} does not exist")
        if self.embedder.kind in ("cache", "file_cache") and not self.paths.cache:
            raise ConfigError("embedder kind 'cache' needs paths.cache")
        if self.forecast.folds < 2:
            raise ConfigError("forecast.folds must be >= 2")
        if not self.forecast.offsets:
            raise ConfigError("forecast.offsets is empty")
        if len(self.trend.window) != 2 or self.trend.window[0] >= self.trend.window[1]:
            raise ConfigError("trend.window must be [low, high] with low < high")
        if self.profile.ttest not in ("student_pooled", "welch"):
            raise ConfigError(f"unknown t-test variant {self.profile.ttest!r}")


def parse_date(value) -> int:
    if isinstance(value, int):
        return value
    try:
        d = datetime.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"bad date {value!r}") from None
    if d.tzinfo is None:
        d = d.replace(tzinfo=timezone.utc)
    return int(d.timestamp())


_SECTIONS = {
    "paths": PathsSection, "embedder": EmbedderSection, "filters": FiltersSection,
    "cohorts": CohortsSection, "efa": EfaSection, "profile": ProfileSection,
    "forecast": ForecastSection, "trend": TrendSection,
}


def _parse_literal(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _env_overrides(doc: dict, environ) -> None:
    for name, raw in environ.items():
        if not name.startswith("E11__") and not (name.startswith(ENV_PREFIX) and "__" in name[4:]):
            continue
        if name.startswith("E11__"):
            doc[name[5:].lower()] = _parse_literal(raw)
            continue
        section, _, key = name[len(ENV_PREFIX):].partition("__")
        doc.setdefault(section.lower(), {})[key.lower()] = _parse_literal(raw)


def from_dict(doc: dict, base_dir: Optional[Path] = None) -> PipelineConfig:
    cfg = PipelineConfig(base_dir=Path(base_dir) if base_dir else Path.cwd())
    for key, value in doc.items():
        if key == "seed":
            cfg.seed = int(value)
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a table")
        cls = _SECTIONS[key]
        known = {f.name: f for f in fields(cls)}
        current = getattr(cfg, key)
        for k, v in value.items():
            if k not in known:
                raise ConfigError(f"unknown key {key}.{k}")
            default = getattr(current, k)
            if isinstance(default, bool) and not isinstance(v, bool):
                raise ConfigError(f"{key}.{k} must be true or false")
            if isinstance(default, (int, float)) and not isinstance(default, bool):
                if not isinstance(v, (int, float)) or isinstance(v, bool):
                    raise ConfigError(f"{key}.{k} must be a number")
                if isinstance(default, int) and v != int(v):
                    raise ConfigError(f"{key}.{k} must be an integer")
                v = type(default)(v)
            if isinstance(default, list) and not isinstance(v, list):
                if key != "paths":
                    raise ConfigError(f"{key}.{k} must be a list")
                v = [v]
            setattr(current, k, v)
    return cfg


def load_config(path=None, environ=None) -> PipelineConfig:
    """Read a TOML config (or defaults when ``path`` is None) and apply env overrides."""
    doc: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.resolve().parent
    _env_overrides(doc, os.environ if environ is None else environ)
    return from_dict(doc, base)


__all__ = ["ConfigError", "PipelineConfig", "load_config", "from_dict", "parse_date", "DEFAULT_MIN_DATE"]
