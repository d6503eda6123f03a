"""Experiment configuration: JSON schema, defaults and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import zlib
from pathlib import Path

import jsonschema
import numpy as np

from .backbone import BackboneConfig
from .losses import LossWeights
from .prototypes import SIZE_PROFILES, Ablation

_OPTIM = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "optimizer": {"enum": ["sgd", "adam"]},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "steps": {"type": "integer", "minimum": 0},
        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
        "clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "decay": {"enum": ["linear", "none"]},
    },
}

_NONNEG = {"type": "number", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["datasets"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "datasets": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "generate": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "profile": {"enum": ["indoor-like", "outdoor-like"]},
                "gap": _NONNEG,
                "n_train": {"type": "integer", "minimum": 1},
                "n_eval": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "batch_size": {"type": "integer", "minimum": 1},
        "pretrain": _OPTIM,
        "adapt": _OPTIM,
        "modes": {
            "type": "array",
            "items": {"enum": ["incremental", "agnostic"]},
            "minItems": 1,
            "uniqueItems": True,
        },
        "set_sizes": {
            "oneOf": [
                {"enum": sorted(SIZE_PROFILES)},
                {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
            ]
        },
        "prototype_jitter": _NONNEG,
        "descriptor_subset": {"type": "integer", "minimum": 1},
        "descriptor_w_scale": {"type": "number", "exclusiveMinimum": 0},
        "eval_scale": {"type": "number", "exclusiveMinimum": 0},
        "loss_weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _NONNEG for k in ("w_ph", "w_sz", "w_sm", "w_dr", "w_co", "w_st")},
        },
        "ablation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "boolean"} for k in ("disable_global_A", "free_keys_no_W", "no_stop_grad")},
        },
        "backbone": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enc_channels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
                "bottleneck": {"type": "integer", "minimum": 1},
                "dec_hidden": {"type": "integer", "minimum": 1},
                "d_min": {"type": "number", "exclusiveMinimum": 0},
                "d_max": {"type": "number", "exclusiveMinimum": 0},
                "slope": {"type": "number", "minimum": 0},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/default",
    "generate": None,
    "batch_size": 8,
    "pretrain": {"optimizer": "sgd", "lr": 0.01, "steps": 400, "momentum": 0.9, "clip": 1.0, "decay": "linear"},
    "adapt": {"optimizer": "adam", "lr": 0.01, "steps": 300, "momentum": 0.9, "clip": None, "decay": "linear"},
    "modes": ["incremental", "agnostic"],
    "set_sizes": "indoor",
    "prototype_jitter": 0.2,
    "descriptor_subset": 64,
    "descriptor_w_scale": 4.0,
    "eval_scale": 1000.0,
    "loss_weights": {},
    "ablation": {},
    "backbone": {},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class ExperimentConfig:
    """Validated experiment settings; ``raw`` keeps the fully merged JSON."""

    def __init__(self, raw: dict):
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from exc
        self.raw = _merge(DEFAULTS, raw)
        r = self.raw
        self.seed = r["seed"]
        self.datasets = list(r["datasets"])
        self.generate = r["generate"]
        self.batch_size = r["batch_size"]
        self.pretrain = r["pretrain"]
        self.adapt = r["adapt"]
        self.modes = list(r["modes"])
        sizes = r["set_sizes"]
        self.set_sizes = tuple(SIZE_PROFILES[sizes]) if isinstance(sizes, str) else tuple(sizes)
        self.prototype_jitter = r["prototype_jitter"]
        self.descriptor_subset = r["descriptor_subset"]
        self.descriptor_w_scale = r["descriptor_w_scale"]
        self.eval_scale = r["eval_scale"]
        try:
            self.loss_weights = LossWeights(**r["loss_weights"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.ablation = Ablation(**r["ablation"])
        bb = dict(r["backbone"])
        if "enc_channels" in bb:
            bb["enc_channels"] = tuple(bb["enc_channels"])
        self.backbone = BackboneConfig(seed=self.seed, **bb)
        if self.backbone.d_min >= self.backbone.d_max:
            raise ConfigError("backbone d_min must be below d_max")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls(raw)

    def with_overrides(self, **over) -> "ExperimentConfig":
        raw = _merge(self.raw, over)
        return ExperimentConfig(raw)

    @property
    def output_dir(self) -> Path:
        root = os.environ.get("PROTO_OUT")
        out = Path(self.raw["output_dir"])
        return Path(root) / out.name if root else out

    def config_hash(self) -> str:
        """Hash of everything that influences results (the output location is excluded)."""
        body = {k: v for k, v in self.raw.items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def pretrain_hash(self) -> str:
        keys = ("seed", "datasets", "generate", "batch_size", "pretrain", "loss_weights", "backbone")
        body = {k: self.raw[k] for k in keys}
        body["datasets"] = body["datasets"][:1]
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def rng(self, stream: str) -> np.random.Generator:
        """Named random substream derived from the single config seed."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(stream.encode())]))
