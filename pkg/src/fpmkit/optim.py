"""First-order update rules for the reconstruction parameters.

Four parameter classes are updated, each with its own step size:
``spectrum`` and ``pupil`` (complex grids), ``z`` (scalar defocus) and
``gamma`` (per-LED intensities, stepped in log space so they stay positive).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels

CLASSES = ("spectrum", "pupil", "z", "gamma")
KINDS = ("sgd", "momentum", "adaptive_moment")
SCHEDULES = ("constant", "exponential")
MAX_LOG_GAMMA_STEP = 10.0


class DivergenceError(RuntimeError):
    """Raised when a gradient or loss stops being finite."""

    def __init__(self, message, trace=None, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state


def _default_lr():
    return {"spectrum": 0.1, "pupil": 0.01, "z": 1.0, "gamma": 0.02}


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adaptive_moment"
    lr: dict = field(default_factory=_default_lr)
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"
    decay: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        lr = {**_default_lr(), **self.lr}
        unknown = set(lr) - set(CLASSES)
        if unknown:
            raise ValueError(f"unknown parameter classes in lr: {sorted(unknown)}")
        if any(not v > 0 for v in lr.values()):
            raise ValueError("step sizes must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay factor must lie in (0, 1]")
        object.__setattr__(self, "lr", lr)

    def scaled(self, factor: float) -> "OptimizerSpec":
        return OptimizerSpec(**{**asdict(self), "lr": {k: v * factor for k, v in self.lr.items()}})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizerSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown OptimizerSpec keys: {sorted(unknown)}")
        return cls(**data)


#: Batch and global runs tolerate steps 10x larger than sequential runs.
BATCH_PRESET = OptimizerSpec()
SEQUENTIAL_PRESET = BATCH_PRESET.scaled(0.1)


def preset_for(method_kind: str) -> OptimizerSpec:
    return SEQUENTIAL_PRESET if method_kind == "sequential" else BATCH_PRESET


def step_schedule(epoch: int, spec: OptimizerSpec) -> dict:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if spec.schedule == "constant":
        return dict(spec.lr)
    f = spec.decay ** epoch
    return {k: v * f for k, v in spec.lr.items()}


@dataclass
class OptimizerMoments:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)
    k: int = 0

    def copy(self) -> "OptimizerMoments":
        return OptimizerMoments({a: b.copy() for a, b in self.first.items()},
                                {a: b.copy() for a, b in self.second.items()},
                                dict(self.steps), self.k)


def _as_real(a: np.ndarray) -> np.ndarray:
    """Flat float64 view; complex entries become (real, imag) pairs."""
    a = np.ascontiguousarray(a)
    a = a.view(np.float64) if np.iscomplexobj(a) else a.astype(np.float64, copy=False)
    return a.reshape(-1)


def _step_inplace(name, param, grad, lr, spec, moments):
    """Update the float64 array ``param`` in place for one parameter class."""
    if spec.kind == "sgd":
        param -= lr * grad
        return
    if spec.kind == "momentum":
        vel = moments.first.setdefault(name, np.zeros_like(param))
        vel *= spec.momentum
        vel += grad
        param -= lr * vel
        return
    m = moments.first.setdefault(name, np.zeros_like(param))
    v = moments.second.setdefault(name, np.zeros_like(param))
    t = moments.steps.get(name, 0) + 1
    moments.steps[name] = t
    kernels.adam_update(param, grad, m, v, lr, spec.beta1, spec.beta2, spec.eps,
                        1.0 - spec.beta1 ** t, 1.0 - spec.beta2 ** t)


def apply_update(state, grads, spec: OptimizerSpec, epoch: int = None, enabled=None):
    """Apply one update to ``state`` in place and return it.

    ``enabled`` overrides ``state.flags`` (used for warm-up); the spectrum is
    always updated.  ``epoch`` defaults to ``state.epoch`` for the schedule.
    """
    if not grads.is_finite():
        raise DivergenceError(f"non-finite gradient at update {state.moments.k}")
    flags = state.flags if enabled is None else enabled
    lr = step_schedule(state.epoch if epoch is None else epoch, spec)
    moments = state.moments

    _step_inplace("spectrum", _as_real(state.spectrum), _as_real(grads.spectrum), lr["spectrum"], spec, moments)

    if flags.pupil:
        pupil = state.params.pupil
        _step_inplace("pupil", _as_real(pupil.values), _as_real(grads.pupil),
                      lr["pupil"], spec, moments)
        pupil.values[~pupil.support] = 0

    if flags.z:
        delta = np.zeros(1)
        _step_inplace("z", delta, np.array([grads.z], dtype=np.float64), lr["z"], spec, moments)
        state.params.z_um = float(state.params.z_um + delta[0])

    if flags.gamma:
        gamma = state.params.gamma
        delta = np.zeros_like(gamma)
        # chain rule into log(gamma)
        _step_inplace("gamma", delta, gamma * grads.gamma, lr["gamma"], spec, moments)
        # bounded log step: exp() cannot underflow gamma to zero
        gamma *= np.exp(np.clip(delta, -MAX_LOG_GAMMA_STEP, MAX_LOG_GAMMA_STEP))

    moments.k += 1
    return state
