"""Run configuration: one JSON document with a section per stage.

Unknown keys are rejected and every numeric field is range-checked at load,
so a typo fails loudly instead of silently using a default.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .classifier.models import ARCHS, ClassifierConfig
from .hmi import CONTEXTS
from .segmentation import SegmentConfig, SkinRange
from .tracking import constant_velocity_model


class ConfigError(ValueError):
    pass


@dataclass
class SegmentationSection:
    hue_lo: float = 340.0
    hue_hi: float = 35.0
    sat_lo: float = 0.15
    sat_hi: float = 0.9
    val_lo: float = 0.2
    val_hi: float = 1.0
    diff_threshold: int = 30
    cut_factor: float = 1.6
    min_area_frac: float = 0.01
    input_side: int = 64
    open_kernel: int = 5

    def validate(self):
        _in("segmentation.hue_lo", self.hue_lo, 0, 360)
        _in("segmentation.hue_hi", self.hue_hi, 0, 360)
        for name in ("sat", "val"):
            lo, hi = getattr(self, name + "_lo"), getattr(self, name + "_hi")
            if not 0 <= lo <= hi <= 1:
                raise ConfigError(f"segmentation.{name}_lo/{name}_hi must satisfy 0 <= lo <= hi <= 1")
        _in("segmentation.diff_threshold", self.diff_threshold, 1, 255, integer=True)
        _in("segmentation.cut_factor", self.cut_factor, 0.5, 10)
        _in("segmentation.min_area_frac", self.min_area_frac, 0, 1)
        if self.input_side not in (64, 128):
            raise ConfigError(f"segmentation.input_side must be 64 or 128, got {self.input_side}")
        _in("segmentation.open_kernel", self.open_kernel, 1, 31, integer=True)
        if self.open_kernel % 2 == 0:
            raise ConfigError("segmentation.open_kernel must be odd")

    def build(self) -> SegmentConfig:
        skin = SkinRange(self.hue_lo, self.hue_hi, self.sat_lo, self.sat_hi, self.val_lo, self.val_hi)
        return SegmentConfig(skin_range=skin, diff_threshold=self.diff_threshold,
                             cut_factor=self.cut_factor, min_area_frac=self.min_area_frac,
                             input_side=self.input_side, open_kernel=self.open_kernel)


@dataclass
class ClassifierSection:
    arch: str = "tiny_cnn"
    batch_size: int = 64
    epochs: int = 30
    lr0: float = 1e-4
    lr_after_epoch10: float | None = None
    lr_switch_epoch: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    patch: int = 6
    proj_dim: int = 64
    heads: int = 4
    layers: int = 8
    transformer_mlp: int = 128
    dropout: float = 0.5
    mlp_head: list = field(default_factory=lambda: [2048, 1024])
    cnn_channels: list = field(default_factory=lambda: [8, 16, 32])
    cnn_hidden: int = 64

    def validate(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"classifier.arch must be one of {ARCHS}, got {self.arch!r}")
        _in("classifier.batch_size", self.batch_size, 1, 1 << 16, integer=True)
        _in("classifier.epochs", self.epochs, 1, 10000, integer=True)
        _in("classifier.lr0", self.lr0, 0, 1, low_open=True)
        if self.lr_after_epoch10 is not None:
            _in("classifier.lr_after_epoch10", self.lr_after_epoch10, 0, 1, low_open=True)
        _in("classifier.lr_switch_epoch", self.lr_switch_epoch, 0, 10000, integer=True)
        _in("classifier.adam_beta1", self.adam_beta1, 0, 1, high_open=True)
        _in("classifier.adam_beta2", self.adam_beta2, 0, 1, high_open=True)
        _in("classifier.adam_eps", self.adam_eps, 0, 1, low_open=True)
        _in("classifier.patch", self.patch, 1, 64, integer=True)
        _in("classifier.proj_dim", self.proj_dim, 1, 4096, integer=True)
        _in("classifier.heads", self.heads, 1, 64, integer=True)
        if self.proj_dim % self.heads:
            raise ConfigError("classifier.heads must divide classifier.proj_dim")
        _in("classifier.layers", self.layers, 1, 64, integer=True)
        _in("classifier.transformer_mlp", self.transformer_mlp, 1, 1 << 16, integer=True)
        _in("classifier.dropout", self.dropout, 0, 1, high_open=True)
        for name in ("mlp_head", "cnn_channels"):
            vals = getattr(self, name)
            if not isinstance(vals, list) or not vals or not all(
                    isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in vals):
                raise ConfigError(f"classifier.{name} must be a non-empty list of positive integers")
        _in("classifier.cnn_hidden", self.cnn_hidden, 1, 1 << 16, integer=True)

    def build(self, n_classes: int, input_side: int, seed: int) -> ClassifierConfig:
        try:
            return ClassifierConfig(n_classes=n_classes, input_side=input_side, seed=seed, **asdict(self))
        except ValueError as exc:
            raise ConfigError(f"classifier: {exc}") from None


@dataclass
class TrackingSection:
    dt: float = 1.0
    q: float = 0.05
    r: float = 4.0
    p0: float = 100.0
    max_coast: int = 10
    screen_w: int = 1920
    screen_h: int = 1080

    def validate(self):
        _in("tracking.dt", self.dt, 0, 1e3, low_open=True)
        _in("tracking.q", self.q, 0, 1e6, low_open=True)
        _in("tracking.r", self.r, 0, 1e6, low_open=True)
        _in("tracking.p0", self.p0, 0, 1e9, low_open=True)
        _in("tracking.max_coast", self.max_coast, 0, 1e6, integer=True)
        _in("tracking.screen_w", self.screen_w, 1, 1 << 16, integer=True)
        _in("tracking.screen_h", self.screen_h, 1, 1 << 16, integer=True)

    def model(self):
        return constant_velocity_model(self.dt, self.q, self.r)


@dataclass
class HMISection:
    context: str = "vlc"
    map: str | None = None
    k: int = 5
    conf_min: float = 0.8
    fps: float = 30.0

    def validate(self):
        if self.context not in CONTEXTS:
            raise ConfigError(f"hmi.context must be one of {CONTEXTS}, got {self.context!r}")
        _in("hmi.k", self.k, 1, 1000, integer=True)
        _in("hmi.conf_min", self.conf_min, 0, 1)
        _in("hmi.fps", self.fps, 0, 1000, low_open=True)


@dataclass
class IOSection:
    data: str | None = None
    out: str | None = None
    weights: str | None = None
    trace: str | None = None
    frames: str | None = None
    background: str | None = None

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not isinstance(v, str):
                raise ConfigError(f"io.{f.name} must be a path string or null")


SECTIONS = {"segmentation": SegmentationSection, "classifier": ClassifierSection,
            "tracking": TrackingSection, "hmi": HMISection, "io": IOSection}


@dataclass
class RunConfig:
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    tracking: TrackingSection = field(default_factory=TrackingSection)
    hmi: HMISection = field(default_factory=HMISection)
    io: IOSection = field(default_factory=IOSection)
    seed: int = 0

    def validate(self) -> "RunConfig":
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _in(name, value, lo, hi, integer=False, low_open=False, high_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    below = value <= lo if low_open else value < lo
    above = value >= hi if high_open else value > hi
    if below or above:
        lb = "(" if low_open else "["
        rb = ")" if high_open else "]"
        raise ConfigError(f"{name}={value!r} outside {lb}{lo}, {hi}{rb}")


def _section(cls, name, obj):
    if not isinstance(obj, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {unknown}; known: {sorted(known)}")
    return cls(**obj)


def from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(obj) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}; known: {sorted(SECTIONS) + ['seed']}")
    kw = {name: _section(cls, name, obj[name]) for name, cls in SECTIONS.items() if name in obj}
    if "seed" in obj:
        kw["seed"] = obj["seed"]
    return RunConfig(**kw).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return from_dict(obj)


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    obj = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if path == "seed":
            obj["seed"] = value
            continue
        section, _, key = path.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(f"override {item!r}: expected section.key with section in {sorted(SECTIONS)}")
        if key not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"override {item!r}: unknown key {key!r} in section {section!r}")
        obj[section][key] = value
    return from_dict(obj)


def with_section(cfg: RunConfig, section: str, **values) -> RunConfig:
    """Copy of ``cfg`` with some keys of one section replaced (None values skipped)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    new = replace(getattr(cfg, section), **values)
    out = replace(cfg, **{section: new})
    return out.validate()
