"""Experiment configuration: one declarative key-value file (YAML or JSON)."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..bagsim import FAMILIES
from ..encoder import EncoderConfig, SALevel
from ..errors import ConfigError
from ..policy import PolicyConfig

OUTPUT_ENV = "BAGKNOT_OUTPUT_ROOT"

COLUMNS = ("VC&HC", "DC", "TF", "IF")
COLUMN_FAMILIES = {"VC&HC": ("VC", "HC"), "DC": ("DC",), "TF": ("TF",), "IF": ("IF",)}


def desk_encoder(**overrides) -> EncoderConfig:
    base = dict(epochs=10)
    base.update(overrides)
    return EncoderConfig.desk(**base)


def desk_policy(**overrides) -> PolicyConfig:
    """Policy used by the full desk experiment (larger than the unit-test config)."""
    base = dict(D=64, layers=2, heads=4, batch_size=64, steps=10000, lr=2e-3)
    base.update(overrides)
    return PolicyConfig(**base)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    seen_templates: tuple = (0, 1, 2, 3, 4, 5)
    demo_templates: tuple = (0, 1, 2)
    unseen_templates: tuple = (100, 101, 102)
    demo_families: tuple = ("VC", "HC")
    eval_families: tuple = FAMILIES
    corr_families: tuple = FAMILIES
    ablation_excluded: tuple = ("TF", "IF")
    corr_sequences: int = 2  # per (template, family)
    corr_frames: int = 50
    p_m: float = 0.001
    n_pc: int = 1024
    demos_per_family: int = 9  # per demo template
    attempts: int = 3  # per (bag, deformation) cell entry
    task_gain: float = 0.15
    task_offset: float = 0.5
    encoder: EncoderConfig = field(default_factory=desk_encoder)
    policy: PolicyConfig = field(default_factory=desk_policy)

    def __post_init__(self):
        if set(self.seen_templates) & set(self.unseen_templates):
            raise ConfigError("seen and unseen template seeds must be disjoint")
        if not set(self.demo_templates) <= set(self.seen_templates):
            raise ConfigError("demonstration templates must be seen templates")
        if not self.demo_families:
            raise ConfigError("at least one demonstration family is required")
        for name in ("demo_families", "eval_families", "corr_families", "ablation_excluded"):
            bad = set(getattr(self, name)) - set(FAMILIES)
            if bad:
                raise ConfigError(f"{name}: unknown families {sorted(bad)}")
        if not 0 < self.p_m <= 1:
            raise ConfigError("p_m must lie in (0, 1]")
        for name in ("corr_sequences", "demos_per_family", "attempts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.corr_frames < 2:
            raise ConfigError("corr_frames must be >= 2")
        if self.n_pc < 64:
            raise ConfigError("n_pc must be >= 64")

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k == "encoder":
                kw[k] = _encoder_from(v)
            elif k == "policy":
                kw[k] = _policy_from(v)
            elif isinstance(v, list):
                kw[k] = tuple(v)
            else:
                kw[k] = v
        return cls(**kw)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


def _encoder_from(v) -> EncoderConfig:
    if isinstance(v, EncoderConfig):
        return v
    v = dict(v or {})
    if "sa_levels" in v:
        v["sa_levels"] = tuple(
            s if isinstance(s, SALevel) else SALevel(int(s["num_centroids"]), float(s["radius"]), int(s["neighbors"]), tuple(s["widths"]))
            for s in v["sa_levels"]
        )
    for k in ("fp_widths",):
        if k in v:
            v[k] = tuple(tuple(w) for w in v[k])
    if "head_widths" in v:
        v["head_widths"] = tuple(v["head_widths"])
    try:
        return desk_encoder(**v)
    except TypeError as exc:
        raise ConfigError(f"encoder config: {exc}") from exc


def _policy_from(v) -> PolicyConfig:
    if isinstance(v, PolicyConfig):
        return v
    try:
        return desk_policy(**dict(v or {}))
    except TypeError as exc:
        raise ConfigError(f"policy config: {exc}") from exc


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a YAML/JSON config file (missing keys take desk defaults)."""
    data = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def output_root(default="runs") -> Path:
    return Path(os.environ.get(OUTPUT_ENV, default))
