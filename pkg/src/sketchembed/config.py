"""Run configuration: one YAML file drives training, indexing, and serving.

Unknown keys are rejected with the offending path so a typo in a field
name fails loudly instead of silently falling back to a default.
"""

from __future__ import annotations

import dataclasses
import difflib
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .models import PAIRINGS, SHARING_MODES
from .training import PhaseConfig

ENV_PREFIX = "SKETCHEMBED_"
ENV_OVERRIDES = {
    "DATA_ROOT": "data_root",
    "MANIFEST": "manifest",
    "CHECKPOINT_DIR": "checkpoint_dir",
    "INDEX_PATH": "index_path",
    "PORT": "port",
}


class ConfigError(ValueError):
    """Bad configuration; the message names the file, field, or line."""


@dataclass
class AppConfig:
    data_root: Path
    manifest: Path = None
    checkpoint_dir: Path = Path("out/checkpoints")
    index_path: Path = Path("out/index.sbi")
    preset: str = "mini"
    scheme: str = "half_share"
    pairing: str = "sketch_edgemap"
    seed: int = 0
    phases: list = field(default_factory=list)
    port: int = 8000
    top_k: int = 10

    def __post_init__(self):
        for name in ("data_root", "manifest", "checkpoint_dir",
                     "index_path"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, Path(value))
        if self.manifest is None:
            self.manifest = self.data_root / "manifest.csv"
        if self.scheme not in SHARING_MODES:
            raise ConfigError(f"scheme must be one of {SHARING_MODES}, "
                              f"got {self.scheme!r}")
        if self.pairing not in PAIRINGS:
            raise ConfigError(f"pairing must be one of {PAIRINGS}, "
                              f"got {self.pairing!r}")
        if not 1 <= int(self.port) <= 65535:
            raise ConfigError(f"port must be in 1-65535, got {self.port}")
        self.port = int(self.port)
        if int(self.top_k) < 1:
            raise ConfigError(f"top_k must be positive, got {self.top_k}")
        self.top_k = int(self.top_k)
        self.seed = int(self.seed)


_TOP_KEYS = {f.name for f in dataclasses.fields(AppConfig)}
_PHASE_KEYS = {f.name for f in dataclasses.fields(PhaseConfig)}


def _reject_unknown(given, allowed, where):
    for key in given:
        if key in allowed:
            continue
        close = difflib.get_close_matches(str(key), allowed, n=1)
        hint = f" (did you mean {close[0]!r}?)" if close else ""
        raise ConfigError(f"unknown key {key!r} in {where}{hint}; "
                          f"valid keys: {sorted(allowed)}")


def _parse_phase(raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping, got "
                          f"{type(raw).__name__}")
    _reject_unknown(raw, _PHASE_KEYS, where)
    kwargs = dict(raw)
    if "frozen_layers" in kwargs:
        layers = kwargs["frozen_layers"]
        if not isinstance(layers, (list, tuple)):
            raise ConfigError(f"{where}.frozen_layers must be a list")
        kwargs["frozen_layers"] = tuple(layers)
    try:
        return PhaseConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(raw: dict, source: str = "<dict>") -> AppConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping, got "
                          f"{type(raw).__name__}")
    _reject_unknown(raw, _TOP_KEYS, source)
    if "data_root" not in raw:
        raise ConfigError(f"{source}: data_root is required")
    kwargs = dict(raw)
    phases = kwargs.pop("phases", [])
    if not isinstance(phases, list):
        raise ConfigError(f"{source}: phases must be a list")
    parsed = [_parse_phase(p, f"{source}: phases[{i}]")
              for i, p in enumerate(phases)]
    try:
        cfg = AppConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg.phases = parsed
    return cfg


def load_config(path, env=None) -> AppConfig:
    """Parse a YAML config file, then apply SKETCHEMBED_* overrides.

    Overrides cover the path fields and the port; everything else comes
    from the file.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        at = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}: invalid YAML{at}: {exc}") from exc
    if raw is None:
        raw = {}
    env = os.environ if env is None else env
    for suffix, key in ENV_OVERRIDES.items():
        value = env.get(ENV_PREFIX + suffix)
        if value is not None:
            raw = dict(raw)
            raw[key] = value
    return config_from_dict(raw, source=str(path))
