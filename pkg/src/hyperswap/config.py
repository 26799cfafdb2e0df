"""Experiment configuration: a strict YAML schema.

Top-level sections (all optional except where noted)::

    mode: grid | pt | diffusion | gibbs-check | calibrate-c
    objective:   {kind: mlp | potential, mlp: {...}, potential: {...}}
    data:        {source: two_moons | blobs | idx, ...}      # required for mlp
    ladder:      {kind, values, C: auto | <float>, convention}  # required
    schedule:    {init_steps, exchange_interval, total_steps, eval_interval}
    optimizer:   {learning_rate, batch_size, momentum, anneal_schedule,
                  dropout_rate, l2_lambda, ladder_start_step}
    seeds:       {replicas: [...], exchange}
    calibration: {steps, sample_interval, tail_fraction, band, target, resamples, seed}
    diffusion:   {seeds, interval, origin_step, more_noise, threshold,
                  plateau_fraction, window}
    gibbs:       {lo, hi, bins, burn_in, tolerance, baseline, stride}
    output_dir:  path

Unknown keys anywhere are errors. Defaults: exchange_interval 100,
eval_interval = exchange_interval, C "auto", replica seeds 0..M-1 and
exchange seed M.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .tempering import HyperparameterKind, build_ladder

Mode = Literal["grid", "pt", "diffusion", "gibbs-check", "calibrate-c"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PotentialConfig(_Strict):
    kind: Literal["quadratic", "double_well_1d", "double_well_2d"] = "double_well_1d"
    a: float = Field(1.0, gt=0)
    h: float = Field(1.0, gt=0)
    anisotropy: float = Field(1.0, gt=0)
    step: float = Field(1e-3, gt=0)
    start: Optional[list[float]] = None


class MlpConfig(_Strict):
    hidden: list[int] = Field(default_factory=lambda: [32, 32], min_length=1)
    activation: Literal["tanh", "relu"] = "tanh"
    output: Literal["softmax_cross_entropy", "mean_squared_error"] = "softmax_cross_entropy"


class ObjectiveConfig(_Strict):
    kind: Literal["mlp", "potential"] = "mlp"
    mlp: MlpConfig = Field(default_factory=MlpConfig)
    potential: PotentialConfig = Field(default_factory=PotentialConfig)


class DataConfig(_Strict):
    source: Literal["two_moons", "blobs", "idx"]
    n: int = Field(2000, ge=4)
    noise_sd: float = Field(0.2, ge=0)
    k: int = Field(3, ge=2)
    spread: float = Field(1.0, ge=0)
    dim: int = Field(2, ge=1)
    center_box: float = Field(5.0, gt=0)
    seed: int = 0
    images: Optional[str] = None
    labels: Optional[str] = None
    validation_fraction: float = Field(0.1, gt=0, lt=1)
    split_seed: int = 0
    normalize: bool = True

    @model_validator(mode="after")
    def _files(self):
        if self.source == "idx":
            for key in ("images", "labels"):
                path = getattr(self, key)
                if path is None:
                    raise ValueError(f"data.{key} is required when source is idx")
                if not os.path.exists(path):
                    raise ValueError(f"data.{key}: file {path!r} does not exist")
        return self


class LadderConfig(_Strict):
    kind: HyperparameterKind
    values: list[float] = Field(min_length=2)
    C: Union[float, Literal["auto"]] = "auto"
    convention: Literal["detailed_balance", "as_printed"] = "detailed_balance"


class ScheduleConfig(_Strict):
    init_steps: int = Field(0, ge=0)
    exchange_interval: int = Field(100, ge=1)
    total_steps: int = Field(5000, ge=1)
    eval_interval: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _order(self):
        if self.total_steps <= self.init_steps:
            raise ValueError("schedule.total_steps must exceed schedule.init_steps")
        if self.eval_interval is None:
            self.eval_interval = self.exchange_interval
        return self


class OptimizerConfig(_Strict):
    learning_rate: float = Field(0.1, gt=0)
    batch_size: int = Field(128, ge=1)
    momentum: float = Field(0.0, ge=0, lt=1)
    anneal_schedule: list[tuple[int, float]] = Field(default_factory=list)
    dropout_rate: float = Field(0.0, ge=0, lt=1)
    l2_lambda: float = Field(0.0, ge=0)
    ladder_start_step: int = Field(0, ge=0)


class SeedsConfig(_Strict):
    replicas: Optional[list[int]] = None
    exchange: Optional[int] = None


class CalibrationConfig(_Strict):
    steps: Optional[int] = Field(None, ge=1)
    sample_interval: int = Field(10, ge=1)
    tail_fraction: float = Field(0.5, gt=0, le=1)
    band: tuple[float, float] = (0.2, 0.5)
    target: Optional[float] = Field(None, gt=0, lt=1)
    resamples: int = Field(20000, ge=100)
    seed: int = 0


class DiffusionConfig(_Strict):
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    interval: int = Field(50, ge=1)
    origin_step: int = Field(0, ge=0)
    more_noise: Literal["increasing", "decreasing"] = "increasing"
    threshold: float = 0.8
    plateau_fraction: float = Field(0.25, gt=0)
    window: float = Field(0.1, gt=0, le=1)


class GibbsConfig(_Strict):
    lo: float = -3.0
    hi: float = 3.0
    bins: int = Field(200, ge=1)
    burn_in: float = Field(0.2, ge=0, lt=1)
    tolerance: float = Field(0.05, gt=0)
    baseline: bool = False
    stride: int = Field(10, ge=1)


class ExperimentConfig(_Strict):
    mode: Mode = "pt"
    objective: ObjectiveConfig = Field(default_factory=ObjectiveConfig)
    data: Optional[DataConfig] = None
    ladder: LadderConfig
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seeds: SeedsConfig = Field(default_factory=SeedsConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    gibbs: GibbsConfig = Field(default_factory=GibbsConfig)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _consistency(self):
        M = len(self.ladder.values)
        if self.mode != "diffusion":
            try:
                build_ladder(self.ladder.kind, self.ladder.values, 1.0)
            except ValueError as exc:
                raise ValueError(f"ladder: {exc}") from None
        if self.seeds.replicas is None:
            self.seeds.replicas = list(range(M))
        if self.seeds.exchange is None:
            self.seeds.exchange = M
        if self.mode != "diffusion" and len(self.seeds.replicas) != M:
            raise ValueError(f"seeds.replicas has {len(self.seeds.replicas)} entries for {M} ladder values")
        if self.objective.kind == "mlp" and self.data is None:
            raise ValueError("data section is required for an mlp objective")
        if self.objective.kind == "potential" and self.ladder.kind != HyperparameterKind.LANGEVIN_TEMPERATURE:
            raise ValueError("ladder.kind: potential objectives exchange langevin_temperature only")
        if self.objective.kind == "mlp" and self.ladder.kind == HyperparameterKind.LANGEVIN_TEMPERATURE:
            raise ValueError("ladder.kind: langevin_temperature needs a potential objective")
        if self.mode == "gibbs-check" and self.objective.kind != "potential":
            raise ValueError("mode: gibbs-check needs a potential objective")
        return self

    @property
    def M(self) -> int:
        return len(self.ladder.values)


def _format_error(exc: ValidationError, source: str) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            msg = f"unknown key {loc!r}"
        elif err["type"] == "missing":
            msg = f"missing required key {loc!r}"
        else:
            msg = f"{loc}: {err['msg']}"
        lines.append(f"{source}: {msg}")
    return "\n".join(lines)


def config_from_dict(data, source: str = "<config>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc, source)) from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return config_from_dict(data, str(path))


def to_dict(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of everything that affects results (not the output location)."""
    d = to_dict(cfg)
    d.pop("output_dir", None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
