"""Run configuration: one JSON document for synthesis, training, tracking and evaluation."""
from __future__ import annotations

import json
import types
import typing
from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path

import jsonschema

from .datagen.augment import AugmentConfig
from .datagen.dataset import DatasetConfig
from .network import VIPoseConfig
from .tracker import ReinitPolicy, TrackConfig
from .training import Step1Config, Step2Config, TrainConfig


class ConfigError(ValueError):
    """Config failed schema or value validation."""


SCENE_KEYS = ("object", "n_sequences", "n_test", "train_episodes", "episode_len", "full_occlusion_prob",
              "test_episodes")
TRAJECTORY_KEYS = ("duration", "test_duration", "camera_rate", "imu_rate", "radius", "height", "angular_speed", "jitter_pos",
                   "jitter_att")
IMU_KEYS = ("accel_sigma", "gyro_sigma")


def _json_type(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        subs = [_json_type(a) for a in typing.get_args(tp)]
        return {"anyOf": subs}
    if tp is type(None):
        return {"type": "null"}
    if tp is bool:
        return {"type": "boolean"}
    if tp is int:
        return {"type": "integer"}
    if tp is float:
        return {"type": "number"}
    if tp is str:
        return {"type": "string"}
    if tp is tuple or origin is tuple:
        return {"type": "array"}
    if hasattr(tp, "__dataclass_fields__"):
        return _object_schema(tp)
    raise TypeError(f"no schema for {tp}")


def _object_schema(cls, only=None):
    hints = typing.get_type_hints(cls)
    props = {f.name: _json_type(hints[f.name]) for f in fields(cls)
             if f.init and (only is None or f.name in only)}
    return {"type": "object", "properties": props, "additionalProperties": False}


def run_schema() -> dict:
    return {
        "$schema": "http://json-schema.org/draft-07/schema#",
        "type": "object",
        "required": ["seed"],
        "additionalProperties": False,
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "scene": _object_schema(DatasetConfig, SCENE_KEYS),
            "trajectory": _object_schema(DatasetConfig, TRAJECTORY_KEYS),
            "imu": _object_schema(DatasetConfig, IMU_KEYS),
            "network": _object_schema(VIPoseConfig),
            "training": _object_schema(TrainConfig, [f.name for f in fields(TrainConfig) if f.name != "seed"]),
            "tracker": {"type": "object", "additionalProperties": False, "properties": {
                "window_len": {"type": "integer"}, "rot_threshold_deg": {"type": "number"},
                "trans_threshold": {"type": "number"}, "expand": {"type": "number"}}},
            "eval": {"type": "object", "additionalProperties": False, "properties": {
                "max_threshold": {"type": "number", "exclusiveMinimum": 0},
                "max_points": {"type": "integer", "minimum": 1}}},
        },
    }


@dataclass
class RunConfig:
    seed: int
    dataset: DatasetConfig
    network: VIPoseConfig
    training: TrainConfig
    policy: ReinitPolicy
    track: TrackConfig
    max_threshold: float = 0.10
    max_points: int = 512
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            jsonschema.validate(doc, run_schema())
        except jsonschema.ValidationError as e:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"config {where}: {e.message}") from None
        seed = doc["seed"]
        try:
            ds = DatasetConfig.from_dict({**doc.get("scene", {}), **doc.get("trajectory", {}),
                                          **doc.get("imu", {}), "seed": seed})
            net = VIPoseConfig.from_dict(doc.get("network", {}))
            train = TrainConfig.from_dict({**doc.get("training", {}), "seed": seed})
            tr = dict(doc.get("tracker", {}))
            expand = tr.pop("expand", 1.4)
            policy = ReinitPolicy(**tr)
            track = TrackConfig(net.input_h, net.input_w, expand)
            ev = doc.get("eval", {})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config: {e}") from None
        return cls(seed, ds, net, train, policy, track, ev.get("max_threshold", 0.10), ev.get("max_points", 512),
                   doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"{path}: no such config file") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(doc)


def default_config(seed: int = 0) -> RunConfig:
    return RunConfig.from_dict({"seed": seed})
