"""Geometry and optics primitives for an LED-array Fourier ptychographic microscope.

Unit conventions used throughout the package:

* lengths in the sample plane and the wavelength are in micrometres,
* LED geometry is in millimetres,
* spatial frequencies are in cycles per micrometre.

The defocus kernel takes *direction sines* (``lambda * k``) as its argument,
while illumination shifts are expressed as spatial frequencies
``sin(theta) / lambda``.  Both conventions are handled here so that callers
only ever deal with frequency grids in cycles/um.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np


class ConfigurationError(ValueError):
    """Raised when a system configuration is physically or numerically invalid."""


@dataclass(frozen=True)
class SystemConfig:
    """Microscope and LED-array geometry.

    The high-resolution (HR) grid covers the same field of view as the
    low-resolution (LR) camera frame, with ``upsample_factor`` times more
    samples per side.
    """

    wavelength_um: float = 0.47
    camera_pixel_um: float = 2.4
    magnification: float = 4.0
    objective_na: float = 0.13
    led_pitch_mm: float = 5.0
    led_to_sample_mm: float = 97.0
    grid_side: int = 7
    lr_size: int = 64
    upsample_factor: int = 4

    def __post_init__(self):
        if not self.wavelength_um > 0:
            raise ConfigurationError("wavelength_um must be positive")
        if not 0 < self.objective_na < 1:
            raise ConfigurationError("objective_na must lie in (0, 1)")
        if not self.led_to_sample_mm > 0:
            raise ConfigurationError("led_to_sample_mm must be positive")
        if self.camera_pixel_um <= 0 or self.magnification <= 0:
            raise ConfigurationError("camera_pixel_um and magnification must be positive")
        if self.led_pitch_mm < 0:
            raise ConfigurationError("led_pitch_mm must be non-negative")
        if int(self.grid_side) != self.grid_side or self.grid_side < 1 or self.grid_side % 2 == 0:
            raise ConfigurationError(f"grid_side must be a positive odd integer, got {self.grid_side}")
        if int(self.lr_size) != self.lr_size or self.lr_size < 2:
            raise ConfigurationError("lr_size must be an integer >= 2")
        if int(self.upsample_factor) != self.upsample_factor or self.upsample_factor < 1:
            raise ConfigurationError("upsample_factor must be a positive integer")
        # pupil must fit inside the camera's sampling band
        if self.cutoff_frequency > self.lr_nyquist:
            raise ConfigurationError(
                f"pupil cutoff {self.cutoff_frequency:.4g} cycles/um exceeds the camera "
                f"Nyquist limit {self.lr_nyquist:.4g} cycles/um"
            )
        synthetic = (self.objective_na + self.max_direction_sine) / self.wavelength_um
        if synthetic > self.hr_nyquist:
            raise ConfigurationError(
                f"synthetic bandwidth {synthetic:.4g} cycles/um exceeds the HR Nyquist limit "
                f"{self.hr_nyquist:.4g} cycles/um at upsample_factor={self.upsample_factor}"
            )

    # derived quantities -------------------------------------------------
    @property
    def sample_pixel_um(self) -> float:
        return self.camera_pixel_um / self.magnification

    @property
    def hr_size(self) -> int:
        return self.lr_size * self.upsample_factor

    @property
    def hr_pixel_um(self) -> float:
        return self.sample_pixel_um / self.upsample_factor

    @property
    def dk(self) -> float:
        """Frequency spacing shared by the LR and HR grids (1 / field of view)."""
        return 1.0 / (self.lr_size * self.sample_pixel_um)

    @property
    def cutoff_frequency(self) -> float:
        return self.objective_na / self.wavelength_um

    @property
    def lr_nyquist(self) -> float:
        return 0.5 / self.sample_pixel_um

    @property
    def hr_nyquist(self) -> float:
        return 0.5 / self.hr_pixel_um

    @property
    def n_leds(self) -> int:
        return self.grid_side * self.grid_side

    @property
    def max_direction_sine(self) -> float:
        half = (self.grid_side // 2) * self.led_pitch_mm
        return half / math.sqrt(half * half + self.led_to_sample_mm**2)

    def with_lr_size(self, lr_size: int) -> "SystemConfig":
        return SystemConfig(**{**asdict(self), "lr_size": int(lr_size)})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown SystemConfig keys: {sorted(unknown)}")
        return cls(**data)


#: Desk-scale default: 64x64 LR frames, 256x256 HR grid, 7x7 LEDs.
DESK_PRESET = SystemConfig()
#: Full-size simulation protocol: 256 -> 1024 pixels, 11x11 LEDs.
FULL_PRESET = SystemConfig(grid_side=11, lr_size=256, upsample_factor=4)

PRESETS = {"desk": DESK_PRESET, "full": FULL_PRESET}


@dataclass(frozen=True)
class WaveVectorTable:
    """Per-LED illumination description, in row-major LED-grid order.

    ``offsets`` holds integer grid coordinates ``(row, col)`` relative to the
    centre LED; ``shifts`` holds the matching spectral shift in HR frequency
    pixels as ``(row, col)`` i.e. ``(ky, kx)``.
    """

    offsets: np.ndarray
    sin_x: np.ndarray
    sin_y: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    shifts: np.ndarray

    def __len__(self):
        return len(self.sin_x)

    @property
    def direction_sine(self) -> np.ndarray:
        return np.hypot(self.sin_x, self.sin_y)


def led_grid_offsets(grid_side: int) -> np.ndarray:
    """Integer (row, col) offsets of every LED from the centre, row-major."""
    half = grid_side // 2
    r = np.arange(-half, half + 1)
    rows, cols = np.meshgrid(r, r, indexing="ij")
    return np.stack([rows.ravel(), cols.ravel()], axis=1)


def compute_wave_vectors(cfg: SystemConfig) -> WaveVectorTable:
    offsets = led_grid_offsets(cfg.grid_side)
    dy = offsets[:, 0] * cfg.led_pitch_mm
    dx = offsets[:, 1] * cfg.led_pitch_mm
    dist = np.sqrt(dx * dx + dy * dy + cfg.led_to_sample_mm**2)
    sin_x = dx / dist
    sin_y = dy / dist
    kx = sin_x / cfg.wavelength_um
    ky = sin_y / cfg.wavelength_um
    shifts = np.stack([np.round(ky / cfg.dk), np.round(kx / cfg.dk)], axis=1).astype(np.int64)
    for a in (offsets, sin_x, sin_y, kx, ky, shifts):
        a.setflags(write=False)
    return WaveVectorTable(offsets, sin_x, sin_y, kx, ky, shifts)


def center_out_order(cfg: SystemConfig) -> np.ndarray:
    """Row-major LED indices sorted by distance from the centre (stable)."""
    offsets = led_grid_offsets(cfg.grid_side)
    r2 = offsets[:, 0] ** 2 + offsets[:, 1] ** 2
    return np.argsort(r2, kind="stable")


def frequency_grid(cfg: SystemConfig, size: int | None = None):
    """Centred frequency coordinates ``(ky, kx)`` of a ``size x size`` grid.

    Index ``size // 2`` is DC, matching ``numpy.fft.fftshift``.
    """
    size = cfg.lr_size if size is None else int(size)
    k = (np.arange(size) - size // 2) * cfg.dk
    ky, kx = np.meshgrid(k, k, indexing="ij")
    return ky, kx


@dataclass(frozen=True)
class PupilGrid:
    values: np.ndarray
    support: np.ndarray = field(repr=False)

    def masked(self, values: np.ndarray) -> "PupilGrid":
        """New pupil with ``values`` zeroed outside this pupil's support."""
        return PupilGrid(np.where(self.support, values, 0).astype(np.complex128), self.support)


def build_ideal_pupil(cfg: SystemConfig, size: int | None = None) -> PupilGrid:
    if cfg.cutoff_frequency > cfg.lr_nyquist:
        raise ConfigurationError("pupil radius exceeds the sampling limit of the grid")
    ky, kx = frequency_grid(cfg, size)
    support = kx * kx + ky * ky <= cfg.cutoff_frequency**2
    support.setflags(write=False)
    return PupilGrid(support.astype(np.complex128), support)


@dataclass(frozen=True)
class DefocusKernel:
    z_um: float
    values: np.ndarray
    # sqrt(1 - |lambda k|^2) on the propagating region, 0 elsewhere
    axial: np.ndarray = field(repr=False)
    propagating: np.ndarray = field(repr=False)

    def derivative(self, wavelength_um: float) -> np.ndarray:
        """d kernel / dz."""
        return (2j * np.pi / wavelength_um) * self.axial * self.values


def axial_factor(cfg: SystemConfig, size: int | None = None):
    """``(axial, propagating)`` where axial = sqrt(1 - |lambda k|^2)."""
    ky, kx = frequency_grid(cfg, size)
    s2 = (cfg.wavelength_um * kx) ** 2 + (cfg.wavelength_um * ky) ** 2
    propagating = s2 <= 1.0
    axial = np.where(propagating, np.sqrt(np.clip(1.0 - s2, 0.0, None)), 0.0)
    return axial, propagating


def defocus_kernel(cfg: SystemConfig, z_um: float, size: int | None = None) -> DefocusKernel:
    axial, propagating = axial_factor(cfg, size)
    values = transfer_from_axial(axial, propagating, z_um, cfg.wavelength_um)
    return DefocusKernel(float(z_um), values, axial, propagating)


def transfer_from_axial(axial, propagating, z_um: float, wavelength_um: float) -> np.ndarray:
    out = np.exp((2j * np.pi / wavelength_um) * z_um * axial)
    out[~propagating] = 0
    return out
