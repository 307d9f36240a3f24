"""JSON run configuration with strict validation (unknown keys are errors)."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import SynthConfig
from .errors import ConfigError
from .lcn import LcnConfig, default_groups
from .model import NetworkConfig
from .training import TrainSchedule


@dataclass
class DataPaths:
    train: str | None = None
    test: str | None = None


@dataclass
class RunConfig:
    # desk-scale defaults sized for the 4-class synthetic set
    network: NetworkConfig = field(
        default_factory=lambda: NetworkConfig(depth=2, features=16, num_classes=4))
    lcn: LcnConfig | None = None  # None -> one group for RGB, singletons beyond
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataPaths = field(default_factory=DataPaths)
    palette: str | None = None
    seed: int = 0
    hidden_width: int = 64
    base_dir: str = field(default=".", metadata={"internal": True})

    def lcn_config(self):
        if self.lcn is not None:
            return self.lcn
        return LcnConfig(groups=default_groups(self.network.in_channels))

    def resolve(self, path):
        """Paths inside the config are relative to the config file."""
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_NESTED = {
    "network": NetworkConfig,
    "lcn": LcnConfig,
    "schedule": TrainSchedule,
    "synth": SynthConfig,
    "data": DataPaths,
}


def _build(cls, raw, where, default=None):
    """Instantiate ``cls`` from ``raw``, layered over ``default`` when given."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    try:
        if default is not None:
            return dataclasses.replace(default, **raw)
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(raw: dict, base_dir=".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(RunConfig) if not f.metadata.get("internal")}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}; allowed: {sorted(allowed)}")
    kwargs = {}
    defaults = RunConfig()
    for key, value in raw.items():
        if key in _NESTED and value is not None:
            kwargs[key] = _build(_NESTED[key], value, key, getattr(defaults, key))
        else:
            kwargs[key] = value
    cfg = RunConfig(**kwargs, base_dir=str(base_dir))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    for key in ("seed", "hidden_width"):
        if not isinstance(getattr(cfg, key), int) or getattr(cfg, key) < 0:
            raise ConfigError(f"{key} must be a non-negative integer")
    for section in (cfg.network, cfg.schedule, cfg.synth):
        for f in dataclasses.fields(section):
            v = getattr(section, f.name)
            if isinstance(f.default, int) and not isinstance(f.default, bool) and isinstance(v, float):
                raise ConfigError(f"{type(section).__name__}.{f.name} must be an integer, got {v}")
    cfg.network.validate()
    cfg.schedule.validate(cfg.network.depth)
    cfg.synth.validate()
    cfg.lcn_config().validate(cfg.network.in_channels)


def load_config(path=None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        validate(cfg)
        return cfg
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)
