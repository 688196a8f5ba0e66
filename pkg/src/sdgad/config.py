"""Versioned run configuration with a lossless JSON round trip."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .boundary import BoundaryConfig
from .events import SplitSpec
from .injection import InjectionPlan
from .restriction import HypersphereConfig
from .trainer import ModelConfig, TrainingConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    """Where events come from: a CSV/JSONL file, or the built-in toy generator."""

    source: str = "file"
    path: str | None = None
    format: str | None = None
    feature_dim: int = 0
    toy: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in ("file", "toy"):
            raise ConfigError(f"data.source must be 'file' or 'toy', got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ConfigError("data.path is required when data.source is 'file'")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    injection: InjectionPlan | None = field(default_factory=InjectionPlan)
    model: ModelConfig = field(default_factory=ModelConfig)
    sphere: HypersphereConfig = field(default_factory=HypersphereConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    output_dir: str = "results"

    def seeds(self) -> list[int]:
        return [self.training.seed + i for i in range(self.training.num_runs)]

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = asdict(value) if hasattr(value, "__dataclass_fields__") else value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = dict(raw)
        version = raw.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        sections = {
            "data": DataConfig, "split": SplitSpec, "injection": InjectionPlan, "model": ModelConfig,
            "sphere": HypersphereConfig, "boundary": BoundaryConfig, "training": TrainingConfig,
        }
        unknown = set(raw) - set(sections) - {"output_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, typ in sections.items():
            if key not in raw:
                continue
            value = raw[key]
            if value is None and key == "injection":
                kwargs[key] = None
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            try:
                kwargs[key] = typ(**value)
            except TypeError as exc:
                raise ConfigError(f"config section {key!r}: {exc}") from None
            except ValueError as exc:
                raise ConfigError(f"config section {key!r}: {exc}") from None
        if "output_dir" in raw:
            kwargs["output_dir"] = str(raw["output_dir"])
        return cls(**kwargs)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)


def toy_config(output_dir: str = "results/toy", **training) -> RunConfig:
    """The end-to-end toy experiment: 1% injected anomalies (T and S halves) in test only."""
    return RunConfig(
        data=DataConfig(source="toy", toy={"num_events": 2000, "num_nodes": 50, "seed": 0}),
        injection=InjectionPlan(train_rate_T=0.0, val_rate_T=0.0, test_rate_T=0.005, test_rate_S=0.005, seed=0),
        training=TrainingConfig(**training),
        output_dir=output_dir,
    )
