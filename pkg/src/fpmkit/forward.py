"""Forward image formation and synthetic dataset generation.

Spectra are centred unitary DFTs (``fftshift(fft2(o, norm="ortho"))``), so a
flat object of unit amplitude on an ``M x M`` grid has DC value ``M``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .optics import (
    ConfigurationError,
    PupilGrid,
    SystemConfig,
    axial_factor,
    build_ideal_pupil,
    center_out_order,
    compute_wave_vectors,
    led_grid_offsets,
    transfer_from_axial,
)

#: Worker count handed to ``scipy.fft``; results do not depend on it.
FFT_WORKERS = -1


class GeometryError(ValueError):
    """An illumination shift moves the pupil window off the HR spectrum."""


def fft2c(field: np.ndarray) -> np.ndarray:
    return sfft.fftshift(sfft.fft2(field, norm="ortho", workers=FFT_WORKERS), axes=(-2, -1))


def ifft2c(spectrum: np.ndarray) -> np.ndarray:
    return sfft.ifft2(sfft.ifftshift(spectrum, axes=(-2, -1)), norm="ortho", workers=FFT_WORKERS)


@dataclass
class SystemParameters:
    """Non-object parameters of the imaging model.

    ``gamma`` has one entry per LED in row-major grid order.
    """

    pupil: PupilGrid
    z_um: float
    gamma: np.ndarray

    @classmethod
    def ideal(cls, cfg: SystemConfig, z_um: float = 0.0, gamma=None) -> "SystemParameters":
        if gamma is None:
            gamma = np.ones(cfg.n_leds)
        gamma = np.asarray(gamma, dtype=np.float64)
        if gamma.shape != (cfg.n_leds,):
            raise ValueError(f"gamma must have {cfg.n_leds} entries")
        if np.any(gamma <= 0):
            raise ValueError("gamma entries must be positive")
        return cls(build_ideal_pupil(cfg), float(z_um), gamma.copy())

    def copy(self) -> "SystemParameters":
        return copy.deepcopy(self)


class ForwardModel:
    """Geometry bound to one configuration and one plane ordering.

    ``led_order[i]`` is the row-major LED index that illuminated plane ``i``.
    """

    def __init__(self, cfg: SystemConfig, led_order: Optional[Sequence[int]] = None):
        self.cfg = cfg
        self.led_order = (center_out_order(cfg) if led_order is None
                          else np.asarray(led_order, dtype=np.int64))
        self.table = compute_wave_vectors(cfg)
        n, m = cfg.lr_size, cfg.hr_size
        self.n, self.m = n, m
        self.scale = n / m
        # window centred on -shift; starts are (row, col) of the top-left corner
        shifts = self.table.shifts[self.led_order]
        self.starts = (m // 2 - shifts - n // 2).astype(np.int64)
        self.axial, self.propagating = axial_factor(cfg)

    @property
    def n_images(self) -> int:
        return len(self.led_order)

    def check_window(self, image: int):
        r, c = self.starts[image]
        if r < 0 or c < 0 or r + self.n > self.m or c + self.n > self.m:
            led = int(self.led_order[image])
            raise GeometryError(
                f"LED {led} (shift {tuple(self.table.shifts[led])}) moves the {self.n}px window "
                f"outside the {self.m}px HR spectrum"
            )

    def check_all_windows(self):
        for i in range(self.n_images):
            self.check_window(i)

    def kernel(self, z_um: float) -> np.ndarray:
        return transfer_from_axial(self.axial, self.propagating, z_um, self.cfg.wavelength_um)

    def kernel_derivative(self, kernel: np.ndarray) -> np.ndarray:
        return (2j * np.pi / self.cfg.wavelength_um) * self.axial * kernel

    def gamma_for(self, params: SystemParameters, images) -> np.ndarray:
        return params.gamma[self.led_order[np.asarray(images)]]

    def fields(self, spectrum: np.ndarray, params: SystemParameters, images):
        """LR exit fields for ``images``; returns ``(windows, kernel, fields)``."""
        from . import kernels

        images = np.asarray(images, dtype=np.int64)
        for i in images:
            self.check_window(int(i))
        windows = kernels.gather_windows(spectrum, self.starts[images], self.n)
        kern = self.kernel(params.z_um)
        g = self.scale * ifft2c(windows * (params.pupil.values * kern))
        return windows, kern, g

    def intensities(self, spectrum, params, images) -> np.ndarray:
        _, _, g = self.fields(spectrum, params, images)
        gam = self.gamma_for(params, images)
        return gam[:, None, None] * (g.real**2 + g.imag**2)


def forward_image(hr_spectrum: np.ndarray, params: SystemParameters, led_index: int,
                  cfg: SystemConfig) -> np.ndarray:
    """Noise-free intensity for one LED (row-major LED index)."""
    model = ForwardModel(cfg, [led_index])
    return model.intensities(hr_spectrum, params, [0])[0]


# --------------------------------------------------------------------------
# ground truth


@dataclass
class GroundTruth:
    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.amplitude.shape != self.phase.shape or self.amplitude.ndim != 2:
            raise ValueError("amplitude and phase must be 2-D arrays of equal shape")

    @property
    def field(self) -> np.ndarray:
        # exp(i*phi - mu) with mu = -log(amplitude)
        return self.amplitude * np.exp(1j * self.phase)

    @property
    def spectrum(self) -> np.ndarray:
        return fft2c(self.field)

    @classmethod
    def from_images(cls, amplitude: np.ndarray, phase: np.ndarray,
                    max_phase: float = np.pi / 2) -> "GroundTruth":
        """Normalise raw images: amplitude to [0, 1], phase to [0, max_phase]."""
        return cls(_unit_range(amplitude), max_phase * _unit_range(phase))


def _unit_range(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    return np.zeros_like(a) if hi == lo else (a - lo) / (hi - lo)


def synthetic_truth(size: int, seed: int = 0, min_amplitude: float = 0.3,
                    max_phase: float = 1.5, feature_px: float = 3.5) -> GroundTruth:
    """Random smooth textured amplitude/phase pair.

    Amplitude lies in ``[min_amplitude, 1]`` and phase in ``[0, max_phase]``.
    ``feature_px`` is the Gaussian correlation length of the texture in HR
    pixels; smaller values put more energy at high spatial frequencies.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    k = sfft.fftfreq(size)
    kk = k[:, None] ** 2 + k[None, :] ** 2
    envelope = np.exp(-2 * (np.pi * feature_px) ** 2 * kk)

    def texture():
        white = rng.standard_normal((size, size))
        return sfft.ifft2(sfft.fft2(white) * envelope).real

    amp = min_amplitude + (1 - min_amplitude) * _unit_range(texture())
    phase = max_phase * _unit_range(texture())
    return GroundTruth(amp, phase)


# --------------------------------------------------------------------------
# datasets


@dataclass
class NoiseModel:
    kind: str = "none"           # "none" | "gaussian"
    rule: str = "fraction"       # "fraction" (of plane max) | "fixed"
    fraction: float = 0.1
    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.rule not in ("fraction", "fixed"):
            raise ValueError(f"unknown variance rule {self.rule!r}")
        if self.fraction < 0 or self.variance < 0:
            raise ValueError("noise fraction and variance must be non-negative")

    def plane_variance(self, plane: np.ndarray) -> float:
        if self.kind == "none":
            return 0.0
        if self.rule == "fraction":
            return self.fraction * float(plane.max())
        return self.variance

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rule": self.rule, "fraction": self.fraction,
                "variance": self.variance, "seed": self.seed}


#: Exposure times (ms) per Chebyshev ring of the LED grid; ring 0/1 is the
#: inner 3x3 block, rings beyond the table reuse the last value.
RING_EXPOSURES_MS = (30.0, 30.0, 150.0, 250.0, 350.0, 450.0)


def ring_exposure_weights(cfg: SystemConfig, exposures_ms=RING_EXPOSURES_MS) -> np.ndarray:
    """Per-LED exposure weights relative to the centre LED's exposure."""
    offs = led_grid_offsets(cfg.grid_side)
    ring = np.maximum(np.abs(offs[:, 0]), np.abs(offs[:, 1]))
    table = np.asarray(exposures_ms, dtype=np.float64)
    t = table[np.minimum(ring, len(table) - 1)]
    return t / table[0]


@dataclass
class FpmDataset:
    """Stack of LR intensity planes plus the metadata needed to invert them.

    ``planes[i]`` was recorded under LED ``led_order[i]`` (row-major index)
    with exposure weight ``exposure[i]``; ``systematic_offset`` is the mean of
    the additive noise.  Both are undone by :meth:`measurements`.
    """

    config: SystemConfig
    led_order: np.ndarray
    planes: np.ndarray
    exposure: np.ndarray = None
    systematic_offset: float = 0.0
    true_gamma: Optional[np.ndarray] = None
    true_z_um: Optional[float] = None
    noise: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    truth: Optional[GroundTruth] = field(default=None, repr=False)

    def __post_init__(self):
        self.led_order = np.asarray(self.led_order, dtype=np.int64)
        self.planes = np.asarray(self.planes)
        n = self.config.lr_size
        if self.planes.ndim != 3 or self.planes.shape[1:] != (n, n):
            raise ValueError(f"planes must have shape (N, {n}, {n}), got {self.planes.shape}")
        if len(self.planes) != len(self.led_order):
            raise ValueError("plane count must equal LED count")
        if sorted(self.led_order.tolist()) != list(range(self.config.n_leds)):
            raise ValueError("led_order must be a permutation of all grid LEDs")
        if np.any(self.planes < 0):
            raise ValueError("intensities must be non-negative")
        if self.exposure is None:
            self.exposure = np.ones(len(self.planes))
        self.exposure = np.asarray(self.exposure, dtype=np.float64)

    @property
    def n_images(self) -> int:
        return len(self.planes)

    def image_of_led(self, led: int) -> int:
        hits = np.flatnonzero(self.led_order == led)
        if len(hits) == 0:
            raise KeyError(f"LED {led} not in dataset")
        return int(hits[0])

    @property
    def center_led(self) -> int:
        return self.config.n_leds // 2

    def bright_field(self) -> np.ndarray:
        """Boolean mask over planes: illumination inside the objective NA."""
        sines = compute_wave_vectors(self.config).direction_sine
        return sines[self.led_order] <= self.config.objective_na

    def is_normalized(self) -> bool:
        return self.systematic_offset == 0 and bool(np.all(self.exposure == 1))

    def measurements(self, indices=None) -> np.ndarray:
        """Planes with offset removed and exposure divided out, as float64."""
        idx = slice(None) if indices is None else np.asarray(indices)
        planes = self.planes[idx].astype(np.float64)
        if self.is_normalized():
            return planes
        out = (planes - self.systematic_offset) / self.exposure[idx, None, None]
        return np.maximum(out, 0.0)

    def normalized(self) -> "FpmDataset":
        if self.is_normalized():
            return self
        ds = copy.copy(self)
        ds.planes = self.measurements().astype(self.planes.dtype)
        ds.notes = {**self.notes, "normalized_from": {
            "systematic_offset": self.systematic_offset,
            "exposure": self.exposure.tolist()}}
        ds.exposure = np.ones(self.n_images)
        ds.systematic_offset = 0.0
        return ds

    def replace_planes(self, planes) -> "FpmDataset":
        ds = copy.copy(self)
        ds.planes = np.asarray(planes)
        return ds


def _led_stream(seed: int, led: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(led),)))


def generate_dataset(truth: GroundTruth, cfg: SystemConfig, params: SystemParameters,
                     noise: NoiseModel = None, exposure: Optional[np.ndarray] = None,
                     systematic_offset: float = 0.0, counts_per_unit: float = 1.0,
                     led_order=None, dtype=np.float32) -> FpmDataset:
    """Simulate one LR plane per LED, in detector counts.

    A clean plane (model units, flat unit object under the centre LED has
    mean 1) is multiplied by ``counts_per_unit`` and by the per-LED
    (row-major) ``exposure`` weight; noise is then added in those counts, so
    the fraction-of-max variance rule refers to recorded values.
    ``systematic_offset`` is the noise mean.  The combined gain is stored as
    the dataset's ``exposure`` record.  Noise for LED ``j`` comes from its own
    stream derived from ``(noise.seed, j)``, independent of evaluation order.
    """
    noise = NoiseModel() if noise is None else noise
    if truth.amplitude.shape != (cfg.hr_size, cfg.hr_size):
        raise ConfigurationError(
            f"truth is {truth.amplitude.shape}, expected {(cfg.hr_size, cfg.hr_size)}")
    model = ForwardModel(cfg, led_order)
    model.check_all_windows()
    clean = model.intensities(truth.spectrum, params, np.arange(model.n_images))
    weights = np.ones(cfg.n_leds) if exposure is None else np.asarray(exposure, dtype=np.float64)
    weights = weights[model.led_order] * float(counts_per_unit)
    planes = np.empty(clean.shape, dtype=dtype)
    for i, led in enumerate(model.led_order):
        plane = clean[i] * weights[i]
        if noise.kind == "gaussian" or systematic_offset:
            std = np.sqrt(noise.plane_variance(plane))
            plane = plane + systematic_offset + std * _led_stream(noise.seed, led).standard_normal(plane.shape)
            plane = np.maximum(plane, 0.0)
        planes[i] = plane
    return FpmDataset(
        config=cfg,
        led_order=model.led_order.copy(),
        planes=planes,
        exposure=weights,
        systematic_offset=float(systematic_offset),
        true_gamma=params.gamma.copy(),
        true_z_um=float(params.z_um),
        noise=noise.to_dict(),
        truth=truth,
    )


def threshold_denoise(dataset: FpmDataset, value: Optional[float] = None,
                      quantile: Optional[float] = None) -> FpmDataset:
    """Zero dark-field pixels below a per-image threshold.

    Exactly one of ``value`` (fixed threshold) or ``quantile`` (per-image
    quantile in [0, 1]) must be given.  Bright-field planes are untouched.
    """
    if (value is None) == (quantile is None):
        raise ValueError("give exactly one of value= or quantile=")
    planes = dataset.planes.copy()
    dark = ~dataset.bright_field()
    for i in np.flatnonzero(dark):
        t = value if value is not None else np.quantile(planes[i], quantile)
        planes[i][planes[i] < t] = 0
    return dataset.replace_planes(planes)
