"""Flat ``key=value`` run configuration.

Every ``ModelConfig`` field plus the training and path settings.  Omitted
keys take their defaults, unknown keys are rejected, and overrides (e.g.
from command-line flags) are applied last.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_data: str = ""
    eval_data: str = ""
    out_dir: str = "runs/default"

    PATH_KEYS = ("train_data", "eval_data", "out_dir")

    @classmethod
    def keys(cls) -> list[str]:
        return ([f.name for f in fields(ModelConfig)] + [f.name for f in fields(TrainConfig)]
                + list(cls.PATH_KEYS))

    def to_text(self) -> str:
        lines = []
        for obj in (self.model, self.train):
            for f in fields(obj):
                lines.append(f"{f.name}={format_value(getattr(obj, f.name))}")
        for k in self.PATH_KEYS:
            lines.append(f"{k}={getattr(self, k)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, overrides: dict[str, str] | None = None) -> "RunConfig":
        values = parse_pairs(text)
        values.update(overrides or {})
        return cls.from_pairs(values)

    @classmethod
    def from_pairs(cls, values: dict[str, str]) -> "RunConfig":
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        model_kw = _coerce(ModelConfig, values)
        train_kw = _coerce(TrainConfig, values)
        try:
            model = ModelConfig(**model_kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        paths = {k: values[k] for k in cls.PATH_KEYS if k in values}
        return cls(model, TrainConfig(**train_kw), **paths)

    @classmethod
    def load(cls, path, overrides: dict[str, str] | None = None) -> "RunConfig":
        return cls.from_text(Path(path).read_text(), overrides)


def format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_pairs(text: str) -> dict[str, str]:
    """``key=value`` per line; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(cls, values: dict[str, str]) -> dict:
    kw = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        raw, default = values[f.name], f.default
        try:
            if isinstance(default, tuple):
                kw[f.name] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif isinstance(default, bool):
                kw[f.name] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kw[f.name] = int(raw)
            elif isinstance(default, float):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        except ValueError:
            raise ConfigError(f"bad value for {f.name}: {raw!r}") from None
    return kw


def model_config_text(cfg: ModelConfig) -> str:
    return "".join(f"{f.name}={format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def model_config_from_text(text: str) -> ModelConfig:
    values = parse_pairs(text)
    unknown = sorted(set(values) - {f.name for f in fields(ModelConfig)})
    if unknown:
        raise ConfigError(f"unknown model key(s): {', '.join(unknown)}")
    return ModelConfig(**_coerce(ModelConfig, values))
