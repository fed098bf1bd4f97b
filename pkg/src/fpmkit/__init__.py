"""Fourier ptychographic microscopy: simulation and random-batch reconstruction."""

__version__ = "0.1.0"

from .forward import (FpmDataset, ForwardModel, GroundTruth, NoiseModel, SystemParameters,
                      forward_image, generate_dataset, synthetic_truth, threshold_denoise)
from .gradients import LossSpec, batch_gradient, finite_difference_oracle, loss
from .kernels import BACKEND
from .metrics import ConvergenceTrace, field_psnr, noise_accumulation_demo, psnr
from .optics import (DESK_PRESET, FULL_PRESET, SystemConfig, build_ideal_pupil,
                     compute_wave_vectors, defocus_kernel)
from .optim import BATCH_PRESET, SEQUENTIAL_PRESET, OptimizerSpec, apply_update
from .reconstruct import (ParameterFlags, ReconstructionState, RunMethod, initialize,
                          make_schedule, reconstruct, refocus)

__all__ = [
    "BACKEND", "BATCH_PRESET", "ConvergenceTrace", "DESK_PRESET", "FpmDataset", "ForwardModel",
    "GroundTruth", "LossSpec", "NoiseModel", "OptimizerSpec", "FULL_PRESET", "ParameterFlags",
    "ReconstructionState", "RunMethod", "SEQUENTIAL_PRESET", "SystemConfig", "SystemParameters",
    "apply_update", "batch_gradient", "build_ideal_pupil", "compute_wave_vectors",
    "defocus_kernel", "field_psnr", "finite_difference_oracle", "forward_image",
    "generate_dataset", "initialize", "loss", "make_schedule", "noise_accumulation_demo", "psnr",
    "reconstruct", "refocus", "synthetic_truth", "threshold_denoise",
]
