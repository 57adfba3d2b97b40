"""Run configuration: one JSON document drives every training phase.

The document is validated against CONFIG_SCHEMA, merged over a preset
("desk" keeps everything small enough for a single CPU; "paper" restores
the full-scale hyperparameters), and hashed so checkpoints and run
manifests can name the exact configuration that produced them. The seed
is mandatory: no phase is allowed to run unseeded.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ConfigError

_SECTION = {"type": "object"}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["seed"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "preset": {"enum": ["desk", "paper"]},
        "schedule": {
            "type": "object",
            "properties": {
                "T": {"type": "integer", "minimum": 1},
                "beta_start": {"type": "number", "exclusiveMinimum": 0},
                "beta_end": {"type": "number", "exclusiveMinimum": 0},
                "eta": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "denoiser": _SECTION,
        "gdm": _SECTION,
        "align": _SECTION,
        "emotion": _SECTION,
        "fgd": _SECTION,
        "guidance": {
            "type": "object",
            "properties": {
                "alpha": {"type": "number", "minimum": 0},
                "band": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "n_frames": {"type": "integer", "minimum": 2},
        "seed_frames": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

_PRESETS = {
    "desk": {
        "schedule": {"T": 100, "beta_start": 1e-4, "beta_end": 2e-2, "eta": 0.0},
        "denoiser": {"layers": 4, "width": 256, "heads": 4},
        "gdm": {"steps": 2000, "batch_size": 16, "lr": 3e-4},
        "align": {"vae_steps": 200, "joint_steps": 350},
        "emotion": {"steps": 500, "batch_size": 32},
        "fgd": {"steps": 400, "batch_size": 32},
        "guidance": {"alpha": 50.0, "band": 0.8},
    },
    "paper": {
        "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 2e-2, "eta": 0.0},
        "denoiser": {"layers": 12, "width": 512, "heads": 8},
        "gdm": {"steps": 100_000, "batch_size": 64, "lr": 3e-4},
        "align": {"vae_steps": 2000, "joint_steps": 4000},
        "emotion": {"steps": 4000, "batch_size": 64},
        "fgd": {"steps": 3000, "batch_size": 64},
        "guidance": {"alpha": 50.0, "band": 0.8},
    },
}


@dataclass
class RunConfig:
    seed: int
    preset: str = "desk"
    schedule: dict = field(default_factory=dict)
    denoiser: dict = field(default_factory=dict)
    gdm: dict = field(default_factory=dict)
    align: dict = field(default_factory=dict)
    emotion: dict = field(default_factory=dict)
    fgd: dict = field(default_factory=dict)
    guidance: dict = field(default_factory=dict)
    n_frames: int = 180
    seed_frames: int = 20

    def __post_init__(self):
        if self.preset not in _PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.seed_frames >= self.n_frames:
            raise ConfigError("seed_frames must be shorter than n_frames")
        base = copy.deepcopy(_PRESETS[self.preset])
        for section in ("schedule", "denoiser", "gdm", "align", "emotion",
                        "fgd", "guidance"):
            merged = base[section]
            merged.update(getattr(self, section))
            setattr(self, section, merged)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "preset": self.preset,
            "schedule": self.schedule, "denoiser": self.denoiser,
            "gdm": self.gdm, "align": self.align, "emotion": self.emotion,
            "fgd": self.fgd, "guidance": self.guidance,
            "n_frames": self.n_frames, "seed_frames": self.seed_frames,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path | None = None, *, seed: int | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Read and validate a run configuration.

    A missing file means "defaults only", but the seed must then arrive
    via the seed argument. Overrides (CLI flags) are applied on top of the
    document, section by section, before validation.
    """
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    if seed is not None:
        doc["seed"] = seed
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            doc.setdefault(key, {}).update(value)
        elif value is not None:
            doc[key] = value
    if "seed" not in doc:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"invalid config: {e.message}") from e
    return RunConfig(**doc)
