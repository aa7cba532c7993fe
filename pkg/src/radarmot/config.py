"""Pipeline configuration: nested dataclasses with strict YAML overlay.

A config file only needs the keys it overrides; everything else keeps the
built-in defaults. Unknown keys anywhere in the tree are rejected with
their full path. Ablation switches live in their own section and are
applied when the effective model configuration is built.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .losses import LossConfig
from .metrics import EvalConfig
from .model import ModelConfig
from .pipeline import TrackerConfig
from .training import TrainSchedule
from .transforms import ValidationError


@dataclass(frozen=True)
class TrackerSettings:
    matcher: str = "learned"              # learned | greedy | hungarian
    baseline_gate: float = 2.0
    new_track_confidence: float = 0.5
    gru_reset_gap: int = 1

    def validate(self) -> "TrackerSettings":
        if self.matcher not in ("learned", "greedy", "hungarian"):
            raise ValidationError(f"unknown matcher: {self.matcher}")
        if self.gru_reset_gap < 1:
            raise ValidationError("gru_reset_gap must be >= 1")
        return self


@dataclass(frozen=True)
class AblationConfig:
    disable_motion_module: bool = False
    disable_velocity_features: bool = False
    detector: str = "internal"            # internal | external

    def validate(self) -> "AblationConfig":
        if self.detector not in ("internal", "external"):
            raise ValidationError(f"unknown detector mode: {self.detector}")
        return self


@dataclass(frozen=True)
class PipelineConfig:
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    train: TrainSchedule = TrainSchedule()
    eval: EvalConfig = EvalConfig()
    tracker: TrackerSettings = TrackerSettings()
    ablations: AblationConfig = AblationConfig()
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        self.loss.validate()
        self.train.validate()
        self.eval.validate()
        self.tracker.validate()
        self.ablations.validate()
        self.model_config()  # validates the composed model too
        return self

    def model_config(self) -> ModelConfig:
        """Effective architecture after applying the ablation switches."""
        return replace(
            self.model,
            use_velocity_features=not self.ablations.disable_velocity_features,
            use_motion_module=not self.ablations.disable_motion_module,
        ).validate()

    def tracker_config(self, cheat_mode: bool = False) -> TrackerConfig:
        return TrackerConfig(
            model=self.model_config(),
            matcher=self.tracker.matcher,
            baseline_gate=self.tracker.baseline_gate,
            new_track_confidence=self.tracker.new_track_confidence,
            gru_reset_gap=self.tracker.gru_reset_gap,
            cheat_mode=cheat_mode,
            external_detector=self.ablations.detector == "external",
        ).validate()


def _coerce(value, default, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{path}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{path}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{path}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"{path}: expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ValidationError(f"{path}: expected a list")
        if len(value) != len(default):
            raise ValidationError(f"{path}: expected {len(default)} entries")
        return tuple(_coerce(v, d, f"{path}[{i}]")
                     for i, (v, d) in enumerate(zip(value, default)))
    raise ValidationError(f"{path}: unsupported value")


def _overlay(instance, data, path: str = ""):
    if not isinstance(data, dict):
        raise ValidationError(f"{path or 'config'}: expected a mapping")
    names = {f.name for f in dataclasses.fields(instance)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ValidationError(f"unknown config key: {path}{key}")
        default = getattr(instance, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _overlay(default, value, f"{path}{key}.")
        else:
            kwargs[key] = _coerce(value, default, f"{path}{key}")
    return replace(instance, **kwargs)


def load_config(path) -> PipelineConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if data is None:
        data = {}
    cfg = _overlay(PipelineConfig(), data)
    return cfg.validate()
