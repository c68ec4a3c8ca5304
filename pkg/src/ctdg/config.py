"""Run configuration: sectioned ``key = value`` files plus ``section.key=value`` overrides.

Grammar (parsed with configparser): ``[section]`` headers, one ``key = value``
per line, ``#`` or ``;`` comments. Tuples are comma separated. Unknown sections
or keys are errors. Sections map onto the dataclasses below.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .denoiser import DenoiserConfig
from .schedule import NoiseSchedule
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    kind: str = "planar"  # planar | sbm
    count: int = 250
    n_min: int = 12
    n_max: int = 16
    train_frac: float = 0.8
    val_frac: float = 0.1
    block_sizes: tuple = (6, 6)
    p_in: float = 0.7
    p_out: float = 0.05

    def __post_init__(self):
        if self.kind not in ("planar", "sbm"):
            raise ValueError(f"unknown data kind {self.kind!r}")
        if self.count < 1 or not 3 <= self.n_min <= self.n_max:
            raise ValueError("need count >= 1 and 3 <= n_min <= n_max")
        if self.train_frac < 0 or self.val_frac < 0 or self.train_frac + self.val_frac > 1:
            raise ValueError("split fractions must be non-negative and sum to <= 1")


@dataclass(frozen=True)
class SampleConfig:
    count: int = 100
    steps: int = 100
    corrector_steps: int = 0
    tau_c: float = 0.7
    corrector_window: float = 0.1
    guidance_s: float = 0.0
    batch_size: int = 256
    workers: int = 1


@dataclass(frozen=True)
class EvalConfig:
    validity: str = "planar"  # planar | none

    def __post_init__(self):
        if self.validity not in ("planar", "none"):
            raise ValueError(f"unknown validity {self.validity!r}")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _apply(cfg: RunConfig, section: str, key: str, raw: str) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    if section not in names:
        raise ConfigError(f"unknown section [{section}]")
    sub = getattr(cfg, section)
    fields = {f.name for f in dataclasses.fields(sub)}
    if key not in fields:
        raise ConfigError(f"unknown key {section}.{key}")
    value = _coerce(raw, getattr(sub, key), f"{section}.{key}")
    try:
        sub = dataclasses.replace(sub, **{key: value})
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None
    return dataclasses.replace(cfg, **{section: sub})


def parse_config(text: str, overrides: Sequence[str] = ()) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg = _apply(cfg, section, key, raw)
    for item in overrides:
        lhs, sep, raw = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        cfg = _apply(cfg, section, key, raw)
    return cfg


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> RunConfig:
    text = ""
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def _render(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(map(str, v))
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: RunConfig) -> str:
    """Effective config as text; ``parse_config(dump_config(c)) == c``."""
    lines = []
    for f in dataclasses.fields(cfg):
        sub = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        lines.extend(f"{k.name} = {_render(getattr(sub, k.name))}" for k in dataclasses.fields(sub))
        lines.append("")
    return "\n".join(lines)
