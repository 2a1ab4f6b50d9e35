"""Run configuration: one JSON-serializable bundle of every module's settings."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .adasyn import AdasynConfig
from .errors import ConfigError
from .models import KnnConfig, MlpConfig, TransformerConfig
from .preprocessing import BandpassSpec
from .synthetic import AnnotatorConfig, GeneratorConfig
from .training import ExperimentConfig, SplitSpec, TrainSpec


@dataclass
class RunConfig:
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    bandpass: BandpassSpec = field(default_factory=BandpassSpec)
    annotator: AnnotatorConfig = field(default_factory=AnnotatorConfig)
    adasyn: AdasynConfig = field(default_factory=AdasynConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainSpec = field(default_factory=TrainSpec)

    SECTIONS = ("generator", "bandpass", "annotator", "adasyn", "transformer", "mlp", "knn", "split", "train")

    def validate(self) -> None:
        self.generator.validate()
        self.bandpass.validate(self.generator.sample_rate_hz)
        for name in ("adasyn", "transformer", "mlp", "knn", "split", "train"):
            getattr(self, name).validate()

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(self.transformer, self.mlp, self.knn, self.adasyn, self.split, self.train)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for key, value in data.items():
            if key == "seed":
                cfg.seed = int(value)
            elif key in cls.SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                for name, v in value.items():
                    cfg.set(f"{key}.{name}", v)
            else:
                raise ConfigError(f"unknown config key {key!r}; sections: seed, {', '.join(cls.SECTIONS)}")
        return cfg

    def set(self, dotted: str, value: Any) -> None:
        """Assign ``section.field``, coercing to the field's declared type."""
        section, _, name = dotted.partition(".")
        if section not in self.SECTIONS or not name:
            raise ConfigError(f"bad config path {dotted!r}; expected <section>.<field>")
        obj = getattr(self, section)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        if name not in fields:
            raise ConfigError(f"unknown field {name!r} in section {section!r}; known: {', '.join(fields)}")
        setattr(obj, name, _coerce(getattr(obj, name), value, dotted))


def _coerce(current: Any, value: Any, where: str) -> Any:
    if isinstance(value, str) and not isinstance(current, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}: cannot parse {value!r}") from exc
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            return tuple(int(v) for v in value)
        if isinstance(current, dict):
            if not isinstance(value, dict):
                raise TypeError
            return dict(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: invalid value {value!r}") from exc
    if current is None:
        return None if value is None else float(value)
    return value


def load_config(path: Optional[str | Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return RunConfig.from_dict(data)
