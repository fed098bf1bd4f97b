"""Reconstruction loop: initialisation, batch scheduling and the update regimes.

Three regimes share one loop and differ only in how each epoch is split
into updates:

* ``sequential`` - one update per image, in the dataset's centre-out order;
* ``global`` - one update per epoch from the gradient summed over all images;
* ``random_batch`` - the images are reshuffled every epoch and cut into
  consecutive blocks of ``batch_size``; one update per block.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy import ndimage

from .forward import FpmDataset, ForwardModel, GroundTruth, SystemParameters, fft2c, ifft2c
from .gradients import LossSpec, batch_gradient
from .metrics import ConvergenceTrace, TraceRow, batch_digest, field_psnr
from .optim import DivergenceError, OptimizerMoments, OptimizerSpec, apply_update


@dataclass(frozen=True)
class ParameterFlags:
    """Which non-object parameters are optimised; the spectrum always is."""

    pupil: bool = False
    z: bool = False
    gamma: bool = False

    @classmethod
    def parse(cls, text: str) -> "ParameterFlags":
        names = {t.strip() for t in (text or "").split(",") if t.strip()}
        unknown = names - {"pupil", "z", "gamma"}
        if unknown:
            raise ValueError(f"unknown parameters to enable: {sorted(unknown)}")
        return cls(**{n: True for n in names})

    def names(self) -> List[str]:
        return [n for n in ("pupil", "z", "gamma") if getattr(self, n)]


@dataclass
class ReconstructionState:
    spectrum: np.ndarray
    params: SystemParameters
    moments: OptimizerMoments = field(default_factory=OptimizerMoments)
    epoch: int = 0
    flags: ParameterFlags = field(default_factory=ParameterFlags)

    def copy(self) -> "ReconstructionState":
        return ReconstructionState(self.spectrum.copy(), self.params.copy(),
                                   self.moments.copy(), self.epoch, self.flags)

    @property
    def field(self) -> np.ndarray:
        return ifft2c(self.spectrum)


@dataclass(frozen=True)
class RunMethod:
    kind: str = "random_batch"
    batch_size: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("sequential", "global", "random_batch"):
            raise ValueError(f"unknown method {self.kind!r}")
        if self.kind == "random_batch" and (self.batch_size is None or self.batch_size < 1):
            raise ValueError("random_batch needs batch_size >= 1")

    @classmethod
    def from_name(cls, name: str, batch_size: Optional[int] = None) -> "RunMethod":
        kind = {"batch": "random_batch"}.get(name, name)
        return cls(kind, batch_size if kind == "random_batch" else None)


@dataclass
class BatchSchedule:
    n: int
    batch_size: int
    seed: int
    epochs: List[List[np.ndarray]]

    def selection_counts(self) -> np.ndarray:
        counts = np.zeros(self.n, dtype=np.int64)
        for epoch in self.epochs:
            for b in epoch:
                counts[b] += 1
        return counts


def partition(order, batch_size: int) -> List[np.ndarray]:
    """Cut ``order`` into consecutive blocks; the last block may be short."""
    order = np.asarray(order, dtype=np.int64)
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def make_schedule(n: int, batch_size: int, epochs: int, seed: int) -> BatchSchedule:
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size must lie in [1, {n}]")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(seed)
    return BatchSchedule(n, batch_size, seed,
                         [partition(rng.permutation(n), batch_size) for _ in range(epochs)])


def upsample_bilinear(image: np.ndarray, factor: int) -> np.ndarray:
    return ndimage.zoom(image, factor, order=1, mode="nearest", grid_mode=True)


def initialize(dataset: FpmDataset, flags: ParameterFlags = ParameterFlags(),
               params: Optional[SystemParameters] = None) -> ReconstructionState:
    """Start from the upsampled amplitude of the centre-LED image, zero phase.

    ``params`` overrides the default ideal pupil, ``z = 0`` and unit gamma.
    """
    cfg = dataset.config
    try:
        center = dataset.image_of_led(dataset.center_led)
    except KeyError:
        raise ValueError("dataset has no centre-LED image") from None
    amp = np.sqrt(dataset.measurements([center])[0])
    hr = upsample_bilinear(amp, cfg.upsample_factor).astype(np.complex128)
    params = SystemParameters.ideal(cfg) if params is None else params.copy()
    return ReconstructionState(fft2c(hr), params, OptimizerMoments(), 0, flags)


def _epoch_batches(method: RunMethod, n: int, epochs: int, seed: int) -> List[List[np.ndarray]]:
    if method.kind == "sequential":
        return [[np.array([i]) for i in range(n)] for _ in range(epochs)]
    if method.kind == "global":
        return [[np.arange(n)] for _ in range(epochs)]
    return make_schedule(n, min(method.batch_size, n), epochs, seed).epochs


def reconstruct(dataset: FpmDataset, method: RunMethod, optimizer: OptimizerSpec = OptimizerSpec(),
                loss: LossSpec = LossSpec(), epochs: int = 10, seed: int = 0,
                flags: ParameterFlags = ParameterFlags(), *,
                state: Optional[ReconstructionState] = None,
                truth: Optional[GroundTruth] = None, warmup_epochs: int = 0,
                z_mode: str = "analytic"):
    """Run ``epochs`` epochs and return ``(state, trace)``.

    ``truth`` defaults to ``dataset.truth``; when present, amplitude and
    phase PSNR are recorded on the last row of every epoch.  During the first
    ``warmup_epochs`` epochs only the spectrum is updated.
    """
    state = initialize(dataset, flags) if state is None else state.copy()
    state.flags = flags
    truth = dataset.truth if truth is None else truth
    model = ForwardModel(dataset.config, dataset.led_order)
    model.check_all_windows()
    meas = dataset.measurements()
    trace = ConvergenceTrace()
    trace.meta.update(method=method.kind, batch_size=method.batch_size, seed=seed)
    if epochs <= 0:
        return state, trace

    t0 = time.perf_counter()
    spectrum_only = ParameterFlags()
    for epoch_batches in _epoch_batches(method, dataset.n_images, epochs, seed):
        enabled = spectrum_only if state.epoch < warmup_epochs else flags
        for u, batch in enumerate(epoch_batches):
            run_state = state if enabled == flags else replace_flags(state, enabled)
            grads, value = batch_gradient(run_state, dataset, batch, loss, model=model,
                                          measurements=meas, z_mode=z_mode)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {state.epoch}", trace, state)
            try:
                apply_update(state, grads, optimizer, enabled=enabled)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), trace, state) from None
            trace.append(TraceRow(state.epoch, u, batch_digest(batch), len(batch),
                                  value / len(batch), time.perf_counter() - t0))
        if truth is not None:
            amp, phase = field_psnr(state.field, truth)
            trace.rows[-1].amplitude_psnr_db = amp
            trace.rows[-1].phase_psnr_db = phase
        state.epoch += 1
    return state, trace


def replace_flags(state: ReconstructionState, flags: ParameterFlags) -> ReconstructionState:
    view = copy.copy(state)
    view.flags = flags
    return view


# --------------------------------------------------------------------------
# refocusing


def min_roi_size(cfg) -> int:
    """Smallest ROI side: the pupil diameter in pixels of the full frame."""
    return int(np.ceil(2 * cfg.cutoff_frequency / cfg.dk))


def crop_dataset(dataset: FpmDataset, roi) -> FpmDataset:
    x, y, w, h = (int(v) for v in roi)
    cfg = dataset.config
    if w != h:
        raise ValueError("ROI must be square")
    if x < 0 or y < 0 or x + w > cfg.lr_size or y + h > cfg.lr_size:
        raise ValueError(f"ROI {roi} lies outside the {cfg.lr_size}px frame")
    if w < min_roi_size(cfg):
        raise ValueError(f"ROI side {w} is below the pupil diameter ({min_roi_size(cfg)} px)")
    if (x, y, w) == (0, 0, cfg.lr_size):
        return dataset
    sub = copy.copy(dataset)
    sub.config = cfg.with_lr_size(w)
    sub.planes = np.ascontiguousarray(dataset.planes[:, y:y + h, x:x + w])
    if dataset.truth is not None:
        u = cfg.upsample_factor
        win = (slice(y * u, (y + h) * u), slice(x * u, (x + w) * u))
        sub.truth = GroundTruth(dataset.truth.amplitude[win], dataset.truth.phase[win])
    sub.notes = {**dataset.notes, "roi": [x, y, w, h]}
    return sub


def refocus(dataset: FpmDataset, roi, method: RunMethod = RunMethod("random_batch", 12),
            optimizer: OptimizerSpec = OptimizerSpec(), loss: LossSpec = LossSpec(),
            epochs: int = 20, seed: int = 0, flags: ParameterFlags = ParameterFlags(z=True),
            **kwargs):
    """Reconstruct a square ROI ``(x, y, w, h)`` with the defocus distance free."""
    sub = crop_dataset(dataset, roi)
    flags = replace(flags, z=True)
    return reconstruct(sub, method, optimizer, loss, epochs, seed, flags, **kwargs)
