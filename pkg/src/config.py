"""
Run configuration: INI file sections mapped onto the per-module config
dataclasses, CLI overrides, the provenance echo and the run-directory lock.
"""

import configparser
import logging
import os
from dataclasses import dataclass, field, fields

from decoding import DecodeConfig
from errors import ConfigError, RunLockError
from model import ModelConfig
from training import TrainConfig


@dataclass
class DataConfig:
    train_src: str = ""
    train_tgt: str = ""
    dev_src: str = ""
    dev_tgt: str = ""
    test_src: str = ""
    test_tgt: str = ""
    vocab_size: int = 0
    min_freq: int = 1
    stride: int = 0

    def effective_stride(self, k):
        stride = self.stride or k
        if stride > k:
            raise ConfigError(f"stride {stride} is larger than k={k}; sentences would fall between chunks")
        return stride


@dataclass
class RunSettings:
    seed: int = 0
    run_dir: str = "runs/default"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    decoding: DecodeConfig = field(default_factory=DecodeConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def seed(self):
        return self.run.seed

    @property
    def run_dir(self):
        return self.run.run_dir


SECTIONS = {
    "model": ModelConfig,
    "data": DataConfig,
    "training": TrainConfig,
    "decoding": DecodeConfig,
    "run": RunSettings,
}


def _convert(section, key, raw, kind, default):
    text = raw.strip()
    if default is None and text.lower() in ("", "none"):
        return None
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "yes", "true", "on"):
                return True
            if lowered in ("0", "no", "false", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None
    return text


def _section_values(section, cls, items):
    known = {f.name: f for f in fields(cls)}
    values = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        f = known[key]
        values[key] = _convert(section, key, str(raw), f.type, f.default)
    return values


def build_config(sections):
    """RunConfig from {section: {key: raw string}}; missing keys keep defaults"""
    unknown = set(sections) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    parts = {name: cls(**_section_values(name, cls, sections.get(name, {}))) for name, cls in SECTIONS.items()}
    return RunConfig(**parts)


def read_sections(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    return {name: dict(parser.items(name)) for name in parser.sections()}


def load_config(path=None, overrides=None):
    """Read an INI config (optional) and apply `section.key` -> value overrides"""
    sections = read_sections(path) if path else {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        sections.setdefault(section, {})[key] = str(value)
    config = build_config(sections)
    logging.info(f"Loaded configuration from {path or 'defaults'} with {len(overrides or {})} overrides")
    return config


def to_sections(config):
    sections = {}
    for name in SECTIONS:
        part = getattr(config, name)
        sections[name] = {
            f.name: "none" if getattr(part, f.name) is None else str(getattr(part, f.name))
            for f in fields(part)
        }
    return sections


def write_echo(config, path):
    """Write the effective configuration in the same INI syntax it is read from"""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, values in to_sections(config).items():
        parser[name] = values
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)


class RunLock:
    """Exclusive `.lock` file in the run directory; stale locks are reported, never removed"""

    def __init__(self, run_dir):
        self.path = os.path.join(run_dir, ".lock")
        self.acquired = False

    def acquire(self):
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            with open(self.path, "r", encoding="utf-8") as f:
                owner = f.read().strip() or "unknown"
            raise RunLockError(
                f"{self.path} is held by pid {owner}; remove it if that process is gone"
            ) from None
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(str(os.getpid()))
        self.acquired = True
        return self

    def release(self):
        if self.acquired:
            os.remove(self.path)
            self.acquired = False

    def __enter__(self):
        return self.acquire()

    def __exit__(self, exc_type, exc, tb):
        self.release()
        return False
