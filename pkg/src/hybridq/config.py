"""Run configuration: INI files with ``[model]``, ``[training]``, ``[data]``,
``[noise]`` and ``[eval]`` sections.

Precedence, lowest first: built-in defaults, the config file, command-line
flags.  ``write_echo`` emits a file that ``load_config`` reads back to the
same RunConfig, so every run directory can be replayed.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigurationError
from .gan import ModelConfig, TrainConfig
from .qsim import NoiseConfig


@dataclass(frozen=True)
class DataConfig:
    counts: tuple[int, ...] = (64, 64, 64)
    image_size: int = 16
    seed: int = 0
    data_dir: str = ""
    class_label: str = "0"  # an index, or "all"
    test_counts: tuple[int, ...] = (100, 100, 100)
    test_seed: int = 1


@dataclass(frozen=True)
class EvalConfig:
    fid_samples: int = 256
    extractor_seed: int = 0
    alphas: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 0.9)
    harness_epochs: int = 40
    harness_batch: int = 32
    sample_every: int = 10
    sample_count: int = 16


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        if self.model.image_size != self.data.image_size:
            raise ConfigurationError(
                f"model.image_size ({self.model.image_size}) != data.image_size ({self.data.image_size})"
            )
        if self.data.class_label != "all":
            try:
                int(self.data.class_label)
            except ValueError:
                raise ConfigurationError("data.class_label must be an integer or 'all'") from None
        for a in self.eval.alphas:
            if not 0.0 <= a < 1.0:
                raise ConfigurationError(f"eval.alphas entries must lie in [0, 1), got {a}")


SECTIONS = ("model", "training", "data", "noise", "eval")


def _parse_value(section: str, key: str, raw: str, default: Any):
    name = f"{section}.{key}"
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = float if (default and isinstance(default[0], float)) or key == "alphas" else int
            return tuple(kind(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"{name}: cannot parse {raw!r}") from None


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _build(cls, section: str, values: dict[str, Any]):
    try:
        return cls(**values)
    except ConfigurationError as exc:
        raise ConfigurationError(f"[{section}] {exc}") from None
    except TypeError as exc:
        raise ConfigurationError(f"[{section}] {exc}") from None


def apply_overrides(cfg: RunConfig, overrides: dict[str, dict[str, Any]]) -> RunConfig:
    """Replace fields given as ``{section: {key: value}}``; values may be strings."""
    parts = {}
    for section in SECTIONS:
        current = getattr(cfg, section)
        known = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
        updates = overrides.get(section, {})
        for key, value in updates.items():
            if key not in known:
                raise ConfigurationError(f"{section}.{key}: unknown key")
            if isinstance(value, str):
                value = _parse_value(section, key, value, known[key])
            known[key] = value
        parts[section] = _build(type(current), section, known) if updates else current
    out = RunConfig(**parts)
    out.validate()
    return out


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    overrides = {s: dict(parser.items(s)) for s in parser.sections()}
    return apply_overrides(RunConfig(), overrides)


def write_echo(cfg: RunConfig, path) -> None:
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
