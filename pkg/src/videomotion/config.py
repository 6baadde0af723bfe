"""Experiment configuration: nested dataclasses, strict parsing, hashing, seeds.

Configs load from YAML (or start from defaults), accept dot-path overrides
from the command line, reject unknown keys, and hash to a short id embedded
in every artifact so reruns are attributable. All randomness derives from the
root seed through a named-component scheme (sha256 of "<seed>:<component>").
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .motion import FAMILIES
from .sequence import ARConfig
from .tokenizer import TokenizerConfig
from .video import RenderConfig, VideoTokenizerConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    count: int = 256
    frames: int = 16
    families: tuple = FAMILIES
    fps: float = 30.0
    holdout: int = 32          # records reserved for evaluation
    store_clips: int = 4       # rendered clips persisted by gen-data
    video_tokenizer_clips: int = 96  # clips used to fit the video codebook


@dataclass
class SamplingConfig:
    v2m_mode: str = "greedy"
    i2vm_temperature: float = 0.9
    i2vm_top_k: int = 50
    units: int = 1             # 16-frame units per generated sequence


@dataclass
class EvalConfig:
    samples: int = 64          # generated sequences for distribution checks
    utilization_samples: int = 100


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    body_seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    motion_tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    video_tokenizer: VideoTokenizerConfig = field(default_factory=VideoTokenizerConfig)
    ar: ARConfig = field(default_factory=ARConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _merge(instance, data: dict, path: str):
    """Apply a nested dict onto a dataclass instance, rejecting unknown keys.

    Coercion follows the default value's type (tuples accept YAML lists).
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(instance)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    updates = {}
    for name, value in data.items():
        current = getattr(instance, name)
        here = f"{path}.{name}" if path else name
        if is_dataclass(current):
            updates[name] = _merge(current, value, here)
            continue
        if isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{here}: expected a list")
            updates[name] = tuple(value)
            continue
        if isinstance(current, bool) and not isinstance(value, bool):
            raise ConfigError(f"{here}: expected a boolean")
        if isinstance(current, (int, float)) and not isinstance(value, (int, float)) \
                or isinstance(value, bool) and not isinstance(current, bool):
            raise ConfigError(f"{here}: expected a number, got {value!r}")
        if isinstance(current, str) and not isinstance(value, str):
            raise ConfigError(f"{here}: expected a string, got {value!r}")
        updates[name] = value
    return dataclasses.replace(instance, **updates)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _merge(ExperimentConfig(), data or {}, "")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def convert(obj):
        if is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj
    return convert(cfg)


def config_hash(cfg: ExperimentConfig) -> str:
    """Short content hash; the output location does not affect identity."""
    payload = config_to_dict(cfg)
    payload.pop("out_dir", None)
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """YAML file (optional) + KEY.PATH=value overrides -> validated config."""
    data: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is not None:
            data = loaded
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, _, raw = item.partition("=")
        value = yaml.safe_load(raw)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} conflicts with a scalar at {part!r}")
        node[parts[-1]] = value
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


def component_seed(root_seed: int, component: str) -> int:
    """Deterministic per-component seed: sha256 of "<root>:<component>"."""
    digest = hashlib.sha256(f"{root_seed}:{component}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)
