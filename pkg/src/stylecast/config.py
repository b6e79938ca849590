"""Pipeline configuration: one TOML file, with environment overrides for paths and secrets."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .classify import ClassifyParams
from .generation import DEFAULT_CEILINGS, DEFAULT_FEW_SHOT
from .media import HighlightParams
from .providers import ProviderConfig
from .scoring import DEFAULT_SIGMA_L
from .selection import SelectionParams
from .textutil import LENGTH_BANDS
from .textutil import load_prompt

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_CONFIG = "stylecast.toml"
ENV_WORKDIR = "STYLECAST_WORKDIR"


@dataclass(frozen=True)
class PlatformSettings:
    kind: str = "mock"  # "mock" reads fixture dirs; "live" uses the official APIs
    fixtures_dir: str | None = None
    rate_per_s: float | None = 2.0
    top_k: int = 5

    def __post_init__(self):
        if self.kind not in ("mock", "live"):
            raise ValueError(f"unknown platform kind: {self.kind}")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")


@dataclass(frozen=True)
class FrameSettings:
    highlight_fps: float = 10.0
    normal_fps: float = 0.5
    max_width: int = 640
    jpeg_quality: int = 90


@dataclass(frozen=True)
class DescribeSettings:
    max_frames: int = 32
    prompt: str = "describe-v1"


@dataclass(frozen=True)
class DatasetSettings:
    path: str | None = None  # curated bundle used for classification and selection
    per_cell: int | None = 20


@dataclass(frozen=True)
class GenerationSettings:
    few_shot_k: int = DEFAULT_FEW_SHOT
    ceilings: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_CEILINGS))
    prompt: str = "generate-v1"


@dataclass(frozen=True)
class ScoringSettings:
    sigma: float | None = None
    sigma_l: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SIGMA_L))
    bands: Mapping[str, tuple[int, int]] = field(default_factory=lambda: dict(LENGTH_BANDS))
    bench: str | None = None
    train: str | None = None


@dataclass
class PipelineConfig:
    workdir: str = "work"
    manifest: str | None = None
    seed: int = 0
    jobs: int = 1
    platform: PlatformSettings = field(default_factory=PlatformSettings)
    highlight: HighlightParams = field(default_factory=HighlightParams)
    frames: FrameSettings = field(default_factory=FrameSettings)
    describe: DescribeSettings = field(default_factory=DescribeSettings)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    classify: ClassifyParams = field(default_factory=ClassifyParams)
    selection: SelectionParams = field(default_factory=SelectionParams)
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    scoring: ScoringSettings = field(default_factory=ScoringSettings)
    providers: ProviderConfig = field(default_factory=ProviderConfig)
    base_dir: str = "."

    def __post_init__(self):
        for version in (self.describe.prompt, self.generation.prompt, "judge-v1"):
            load_prompt(version)

    def resolve(self, path: str | None) -> Path | None:
        """Resolve a config-relative path."""
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def workdir_path(self) -> Path:
        return self.resolve(self.workdir)


_SECTIONS = {
    "platform": PlatformSettings,
    "highlight": HighlightParams,
    "frames": FrameSettings,
    "describe": DescribeSettings,
    "dataset": DatasetSettings,
    "classify": ClassifyParams,
    "selection": SelectionParams,
    "generation": GenerationSettings,
    "scoring": ScoringSettings,
}


def _build(cls, data: Mapping[str, Any], section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {', '.join(unknown)}")
    return cls(**data)


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> PipelineConfig:
    data = dict(data)
    kwargs: dict[str, Any] = {"base_dir": str(base_dir)}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build(cls, data.pop(name), name)
    if "providers" in data:
        kwargs["providers"] = ProviderConfig.from_dict(data.pop("providers"))
    for key in ("workdir", "manifest", "seed", "jobs"):
        if key in data:
            kwargs[key] = data.pop(key)
    if data:
        raise ValueError(f"unknown config keys: {', '.join(sorted(data))}")
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> PipelineConfig:
    """Load ``path`` (default ``stylecast.toml``); a missing default file means all defaults.

    Relative paths inside the file resolve against the file's directory.
    ``STYLECAST_WORKDIR`` overrides the workdir; API keys are always read
    from the environment variables named in the provider bindings.
    """
    env = os.environ if env is None else env
    explicit = path is not None
    path = Path(path or DEFAULT_CONFIG)
    if path.exists():
        with open(path, "rb") as fh:
            cfg = config_from_dict(tomllib.load(fh), base_dir=path.parent)
    elif explicit:
        raise FileNotFoundError(f"config file not found: {path}")
    else:
        cfg = PipelineConfig()
    if env.get(ENV_WORKDIR):
        cfg.workdir = str(Path(env[ENV_WORKDIR]).resolve())
    return cfg
