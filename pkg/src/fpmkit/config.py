"""Strict JSON run configuration: simulation recipes, run settings, sweeps.

Every document is a plain JSON object; unknown keys are rejected at every
level so typos fail loudly instead of silently using a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from .forward import (FpmDataset, GroundTruth, NoiseModel, SystemParameters, generate_dataset,
                      ring_exposure_weights, synthetic_truth)
from .gradients import LossSpec
from .optics import PRESETS, ConfigurationError, SystemConfig
from .optim import OptimizerSpec, preset_for
from .reconstruct import ParameterFlags, RunMethod

EXPOSURE_MODES = ("uniform", "rings")
#: About a quarter of the 49 desk-scale images.
DEFAULT_BATCH_SIZE = 12


def _check_keys(data, allowed, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a JSON object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {sorted(unknown)}")


def _system_from(value) -> SystemConfig:
    if value is None:
        return PRESETS["desk"]
    if isinstance(value, str):
        try:
            return PRESETS[value]
        except KeyError:
            raise ConfigurationError(f"unknown system preset {value!r}") from None
    if isinstance(value, dict) and "preset" in value:
        base = _system_from(value["preset"]).to_dict()
        rest = {k: v for k, v in value.items() if k != "preset"}
        _check_keys(rest, base, "system")
        return SystemConfig(**{**base, **rest})
    return SystemConfig.from_dict(value)


@dataclass(frozen=True)
class PhantomSpec:
    feature_px: float = 3.5
    min_amplitude: float = 0.3
    max_phase: float = 1.5


@dataclass(frozen=True)
class SimulationSpec:
    """Recipe for a synthetic dataset.

    ``gamma_jitter`` draws per-LED intensities uniformly from
    ``[1 - jitter, 1 + jitter]``.  ``counts_per_unit`` is the detector gain:
    a flat unit object under the centre LED records this many counts.
    """

    system: SystemConfig = field(default_factory=SystemConfig)
    z_um: float = 0.0
    gamma_jitter: float = 0.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    exposure: str = "uniform"
    systematic_offset: float = 0.0
    counts_per_unit: float = 1.0
    phantom: PhantomSpec = field(default_factory=PhantomSpec)

    def __post_init__(self):
        if self.exposure not in EXPOSURE_MODES:
            raise ConfigurationError(f"exposure must be one of {EXPOSURE_MODES}")
        if not 0 <= self.gamma_jitter < 1:
            raise ConfigurationError("gamma_jitter must lie in [0, 1)")
        if not self.counts_per_unit > 0:
            raise ConfigurationError("counts_per_unit must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationSpec":
        _check_keys(data, cls.__dataclass_fields__, "simulation")
        kw = dict(data)
        kw["system"] = _system_from(data.get("system"))
        if "noise" in data:
            _check_keys(data["noise"], ("kind", "rule", "fraction", "variance"), "noise")
            kw["noise"] = NoiseModel(**data["noise"])
        if "phantom" in data:
            _check_keys(data["phantom"], PhantomSpec.__dataclass_fields__, "phantom")
            kw["phantom"] = PhantomSpec(**data["phantom"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"].pop("seed")
        return d


#: Noise-free desk-scale recipe.
CLEAN_SIMULATION = SimulationSpec()
#: Gaussian noise at 0.1 of each plane's max, on an 8-bit count scale.
NOISY_SIMULATION = SimulationSpec(noise=NoiseModel("gaussian", "fraction", 0.1), counts_per_unit=255.0)


def simulate(spec: SimulationSpec, seed: int = 0, truth: Optional[GroundTruth] = None) -> FpmDataset:
    """Build a dataset from ``spec``; every random draw derives from ``seed``."""
    cfg = spec.system
    if truth is None:
        p = spec.phantom
        truth = synthetic_truth(cfg.hr_size, seed, p.min_amplitude, p.max_phase, p.feature_px)
    gamma = np.ones(cfg.n_leds)
    if spec.gamma_jitter:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cfg.n_leds + 1,)))
        gamma = rng.uniform(1 - spec.gamma_jitter, 1 + spec.gamma_jitter, cfg.n_leds)
    params = SystemParameters.ideal(cfg, spec.z_um, gamma)
    noise = NoiseModel(spec.noise.kind, spec.noise.rule, spec.noise.fraction, spec.noise.variance, seed)
    exposure = ring_exposure_weights(cfg) if spec.exposure == "rings" else None
    ds = generate_dataset(truth, cfg, params, noise, exposure, spec.systematic_offset,
                          spec.counts_per_unit)
    ds.notes = {"seed": int(seed), "simulation": spec.to_dict()}
    return ds


@dataclass(frozen=True)
class RunSpec:
    """Settings of one reconstruction run.

    ``optimizer=None`` picks the preset for the method (sequential runs use
    steps ten times smaller than batch and global runs).
    """

    method: RunMethod = field(default_factory=lambda: RunMethod("random_batch", DEFAULT_BATCH_SIZE))
    epochs: int = 20
    flags: ParameterFlags = field(default_factory=ParameterFlags)
    optimizer: Optional[OptimizerSpec] = None
    loss: LossSpec = field(default_factory=LossSpec)
    warmup_epochs: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")

    @property
    def resolved_optimizer(self) -> OptimizerSpec:
        return preset_for(self.method.kind) if self.optimizer is None else self.optimizer

    @classmethod
    def from_dict(cls, data: dict) -> "RunSpec":
        _check_keys(data, ("method", "batch_size", "epochs", "enable", "optimizer", "loss",
                           "warmup_epochs"), "run")
        method = RunMethod.from_name(data.get("method", "batch"),
                                     data.get("batch_size", DEFAULT_BATCH_SIZE))
        opt = None
        if "optimizer" in data:
            base = preset_for(method.kind).to_dict()
            over = dict(data["optimizer"])
            _check_keys(over, base, "optimizer")
            over["lr"] = {**base["lr"], **over.get("lr", {})}
            opt = OptimizerSpec.from_dict({**base, **over})
        loss = LossSpec()
        if "loss" in data:
            _check_keys(data["loss"], ("kind", "reduction"), "loss")
            loss = LossSpec(**data["loss"])
        enable = data.get("enable", "")
        if isinstance(enable, list):
            enable = ",".join(enable)
        return cls(method, int(data.get("epochs", 20)), ParameterFlags.parse(enable), opt, loss,
                   int(data.get("warmup_epochs", 0)))

    def to_dict(self) -> dict:
        return {
            "method": self.method.kind, "batch_size": self.method.batch_size,
            "epochs": self.epochs, "enable": self.flags.names(),
            "optimizer": self.resolved_optimizer.to_dict(), "loss": self.loss.to_dict(),
            "warmup_epochs": self.warmup_epochs,
        }


@dataclass(frozen=True)
class SweepSpec:
    simulation: SimulationSpec
    runs: List[RunSpec]
    seeds: List[int]

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        _check_keys(data, ("simulation", "runs", "seeds"), "sweep")
        if not data.get("runs"):
            raise ConfigurationError("sweep: at least one run is required")
        seeds = [int(s) for s in data.get("seeds", [0])]
        return cls(SimulationSpec.from_dict(data.get("simulation", {})),
                   [RunSpec.from_dict(r) for r in data["runs"]], seeds)


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
