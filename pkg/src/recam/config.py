"""Run configuration: INI sections mirroring the module configs, plus provenance.

Each value remembers where it came from (``default``, ``file`` or ``flag``).
The resolved file written next to a run's outputs replays that run on its own.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    train_path: str | None = None
    val_path: str | None = None
    min_count: int = 1


@dataclass
class BenchSection:
    lengths: str = "256,512,1024,2048,4096"
    window: int = 33
    globals: int = 16
    repetitions: int = 1
    width: int = 64
    heads: int = 1
    memory_budget_mb: int = 2048
    seed: int = 0


@dataclass
class RunSection:
    seed: int = 0
    output_dir: str | None = None


_MODEL_FIELDS = [f for f in dataclasses.fields(ModelConfig) if f.name != "vocab_size"]
SECTIONS: dict[str, list[dataclasses.Field]] = {
    "model": _MODEL_FIELDS,
    "train": [f for f in dataclasses.fields(TrainConfig) if f.name != "seed"],
    "data": list(dataclasses.fields(DataSection)),
    "bench": list(dataclasses.fields(BenchSection)),
    "run": list(dataclasses.fields(RunSection)),
}
_HINTS = {
    "model": typing.get_type_hints(ModelConfig),
    "train": typing.get_type_hints(TrainConfig),
    "data": typing.get_type_hints(DataSection),
    "bench": typing.get_type_hints(BenchSection),
    "run": typing.get_type_hints(RunSection),
}


def _default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        return f.default_factory()  # type: ignore[misc]
    return None


def _parse(section: str, key: str, raw: str):
    hint = _HINTS[section][key]
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    optional = type(None) in typing.get_args(hint)
    base = args[0] if args else hint
    text = raw.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if base is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {getattr(base, '__name__', base)}") from None


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    @classmethod
    def defaults(cls) -> RunConfig:
        cfg = cls()
        for section, fields in SECTIONS.items():
            cfg.values[section] = {f.name: _default(f) for f in fields}
            for f in fields:
                cfg.provenance[f"{section}.{f.name}"] = "default"
        return cfg

    def set(self, dotted: str, raw: str, source: str) -> None:
        if "." not in dotted:
            raise ConfigError(f"expected section.key, got {dotted!r}")
        section, key = dotted.split(".", 1)
        if section not in self.values:
            raise ConfigError(f"unknown section [{section}]; known: {', '.join(self.values)}")
        if key not in self.values[section]:
            raise ConfigError(f"unknown field {key!r} in [{section}]")
        self.values[section][key] = _parse(section, key, raw)
        self.provenance[dotted] = source

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> RunConfig:
        cfg = cls.defaults()
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
            try:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except (OSError, configparser.Error) as exc:
                raise ConfigError(f"{path}: {exc}") from None
            for section in parser.sections():
                for key, raw in parser.items(section):
                    cfg.set(f"{section}.{key}", raw, "file")
        for dotted, raw in (overrides or {}).items():
            cfg.set(dotted, raw, "flag")
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.model_config(vocab_size=64)
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.values["model"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.values["train"])

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.values[name])

    def to_ini(self) -> str:
        lines = ["# resolved run configuration; comments give each value's source"]
        for section, fields in self.values.items():
            lines.append("")
            lines.append(f"[{section}]")
            for key, value in fields.items():
                lines.append(f"# {self.provenance[f'{section}.{key}']}")
                lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")
