"""Run configuration: defaults, INI-style config files, and flag overrides.

Precedence is defaults < file < flags. Unknown sections or keys are rejected
by name. The single `run.seed` propagates to the data generator and trainer
unless those seeds are set explicitly.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .augment import AugmentConfig
from .backbone import BackboneConfig, make_backbone_config
from .network import COMPOSITIONS, setting_spec
from .synth import SynthConfig
from .trainer import TrainConfig


class ConfigError(Exception):
    pass


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "runs/run"
    data_dir: str = ""
    preset: str = "toy"
    composition: str = ""       # empty = choose per setting
    protocol: str = "ir->vis"
    plots: bool = False


def _default_synth() -> SynthConfig:
    # the stock dataset carries held-out eval poses so that the plain
    # generate-data -> train -> evaluate flow works without extra flags
    return SynthConfig(eval_images_per_identity=2)


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    synth: SynthConfig = field(default_factory=_default_synth)
    backbone: dict = field(default_factory=dict)    # overrides applied to preset
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def build_backbone(self) -> BackboneConfig:
        return make_backbone_config(self.run.preset, **self.backbone)

    def validate(self) -> None:
        self.synth.validate()
        self.train.validate()
        self.build_backbone()
        if self.run.composition and self.run.composition not in COMPOSITIONS:
            raise ConfigError(f"unknown composition {self.run.composition!r}")
        if self.run.protocol not in ("ir->vis", "vis->ir"):
            raise ConfigError(f"unknown protocol {self.run.protocol!r}")
        setting_spec(self.train.setting)

    def composition_or_none(self) -> str | None:
        return self.run.composition or None

    def to_text(self) -> str:
        """The fully resolved configuration as INI text."""
        parser = configparser.ConfigParser()
        for section, obj in (("run", self.run), ("synth", self.synth),
                             ("train", self.train), ("augment", self.augment)):
            parser[section] = {f.name: _render(getattr(obj, f.name))
                               for f in fields(obj)}
        parser["backbone"] = {k: _render(v) for k, v in self.backbone.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _render(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce(raw: str, default, key: str):
    """Parse a string according to the default value's type."""
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected an integer, got {raw!r}")
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected a number, got {raw!r}")
    if isinstance(default, tuple):
        parts = [p for p in raw.split(",") if p.strip() != ""]
        elem = default[0] if default else 0
        return tuple(_coerce(p, elem, key) for p in parts)
    return raw


_SECTIONS = ("run", "synth", "backbone", "train", "augment")


def _section_fields(cfg: RunConfig, section: str) -> dict[str, dataclasses.Field]:
    obj = getattr(cfg, section)
    return {f.name: f for f in fields(obj)}


def _backbone_defaults() -> dict:
    return {f.name: getattr(BackboneConfig(), f.name)
            for f in fields(BackboneConfig)}


def apply_setting(cfg: RunConfig, section: str, key: str, raw_value) -> None:
    """Set one key, coercing strings by the default field type."""
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    if section == "backbone":
        defaults = _backbone_defaults()
        if key not in defaults or key == "preset":
            raise ConfigError(f"unknown key {key!r} in section [backbone]")
        value = (_coerce(raw_value, defaults[key], key)
                 if isinstance(raw_value, str) else raw_value)
        cfg.backbone[key] = value
        return
    obj = getattr(cfg, section)
    known = _section_fields(cfg, section)
    if key not in known:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    current = getattr(obj, key)
    value = _coerce(raw_value, current, key) if isinstance(raw_value, str) \
        else raw_value
    setattr(obj, key, value)


def parse_config(path: Path | str | None = None,
                 overrides: dict[tuple[str, str], object] | None = None
                 ) -> RunConfig:
    """defaults < file < flag overrides; returns a validated RunConfig."""
    cfg = RunConfig()
    explicit_seeds: set[str] = set()

    def note_seed(section, key):
        if key == "seed" and section in ("synth", "train"):
            explicit_seeds.add(section)

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"config file {path} does not parse: {e}")
        for section in parser.sections():
            for key, raw in parser[section].items():
                apply_setting(cfg, section, key, raw)
                note_seed(section, key)

    for (section, key), value in (overrides or {}).items():
        apply_setting(cfg, section, key, value)
        note_seed(section, key)

    # one seed drives everything unless a module seed was pinned explicitly
    if "synth" not in explicit_seeds:
        cfg.synth.seed = cfg.run.seed
    if "train" not in explicit_seeds:
        cfg.train.seed = cfg.run.seed

    try:
        cfg.validate()
    except (ValueError, ConfigError) as e:
        raise ConfigError(str(e))
    return cfg
