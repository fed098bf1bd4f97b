"""Losses and adjoint gradients of the forward model.

Complex gradients follow the real-coordinate convention: for a complex
parameter ``w = a + ib`` the returned gradient is ``dL/da + i dL/db``, so
``dL = Re(sum(conj(grad) * dw))`` and a small step along ``-grad`` decreases
the loss.

Forward chain for image ``i`` (window ``W_i`` of the HR spectrum)::

    G = W_i * P * H(z)
    g = s * ifft2c(G)          s = lr_size / hr_size
    I = gamma_i * |g|^2

and the adjoint chain runs it backwards: ``R = dL/dI`` -> ``2 gamma R g``
-> ``s * fft2c(.)`` -> products with the conjugated co-factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .forward import ForwardModel, fft2c


LOSS_KINDS = ("l2_intensity", "l1_intensity", "l2_amplitude")
#: Planes per vectorised adjoint pass; larger stacks fall out of cache.
CHUNK_SIZE = 16


@dataclass(frozen=True)
class LossSpec:
    kind: str = "l2_intensity"
    reduction: str = "sum"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.reduction != "sum":
            raise ValueError("only reduction='sum' is supported")

    @property
    def code(self) -> int:
        return kernels.LOSS_CODES[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "reduction": self.reduction}


def loss(pred: np.ndarray, meas: np.ndarray, spec: LossSpec = LossSpec()) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    meas = np.asarray(meas, dtype=np.float64)
    if pred.shape != meas.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {meas.shape}")
    if spec.kind == "l2_intensity":
        return float(np.sum((pred - meas) ** 2))
    if spec.kind == "l1_intensity":
        return float(np.sum(np.abs(pred - meas)))
    return float(np.sum((np.sqrt(pred) - np.sqrt(meas)) ** 2))


@dataclass
class GradientBundle:
    spectrum: np.ndarray
    pupil: np.ndarray
    z: float
    gamma: np.ndarray

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle(self.spectrum + other.spectrum, self.pupil + other.pupil,
                              self.z + other.z, self.gamma + other.gamma)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.spectrum)) and np.all(np.isfinite(self.pupil))
                    and np.isfinite(self.z) and np.all(np.isfinite(self.gamma)))


def _model_for(dataset, model: Optional[ForwardModel]) -> ForwardModel:
    if model is not None:
        return model
    return ForwardModel(dataset.config, dataset.led_order)


def _measurements(dataset, batch, measurements):
    if measurements is not None:
        return measurements[batch]
    return dataset.measurements(batch)


def batch_gradient(state, dataset, batch, spec: LossSpec = LossSpec(), *,
                   model: Optional[ForwardModel] = None,
                   measurements: Optional[np.ndarray] = None,
                   z_mode: str = "analytic"):
    """Gradient of ``sum(loss_i for i in batch)`` w.r.t. every enabled parameter.

    ``batch`` holds plane indices; they are processed in ascending order.
    ``measurements`` may pass a pre-converted float64 copy of the planes.
    Returns ``(GradientBundle, loss)``.
    """
    requested = np.asarray(batch, dtype=np.int64).ravel()
    if requested.size == 0:
        raise ValueError("empty batch")
    batch = np.unique(requested)
    if len(batch) != len(requested):
        raise ValueError("batch indices must be distinct")
    if batch[0] < 0 or batch[-1] >= dataset.n_images:
        raise IndexError("batch indices out of range")
    model = _model_for(dataset, model)
    params = state.params
    flags = state.flags
    if z_mode not in ("analytic", "numeric"):
        raise ValueError(f"unknown z_mode {z_mode!r}")

    spec_grad = np.zeros_like(state.spectrum)
    pupil_grad = np.zeros_like(params.pupil.values)
    z_grad = 0.0
    gamma_grad = np.zeros(dataset.config.n_leds)
    total = 0.0
    # fixed-size chunks, reduced in ascending order: deterministic and cache friendly
    for lo in range(0, len(batch), CHUNK_SIZE):
        chunk = batch[lo:lo + CHUNK_SIZE]
        dp, dz, dgamma, value = _chunk_gradient(state, dataset, chunk, spec, model, measurements,
                                                spec_grad, z_mode == "analytic")
        pupil_grad += dp
        z_grad += dz
        gamma_grad[model.led_order[chunk]] = dgamma
        total += value

    if flags.pupil:
        pupil_grad[~params.pupil.support] = 0
    if flags.z and z_mode == "numeric":
        z_grad = finite_difference_oracle(state, dataset, batch, spec, ("z",), 1e-3,
                                          model=model, measurements=measurements)
    if not flags.gamma:
        gamma_grad[:] = 0
    return GradientBundle(spec_grad, pupil_grad, z_grad, gamma_grad), total


def _chunk_gradient(state, dataset, chunk, spec, model, measurements, spec_grad, analytic_z):
    """Adjoint pass over one chunk; scatters into ``spec_grad`` and returns the rest."""
    params = state.params
    flags = state.flags
    meas = np.ascontiguousarray(_measurements(dataset, chunk, measurements), dtype=np.float64)
    windows, kern, g = model.fields(state.spectrum, params, chunk)
    gam = model.gamma_for(params, chunk)
    grad_g, losses, dgamma = kernels.intensity_adjoint(np.ascontiguousarray(g), meas, gam, spec.code)
    grad_G = model.scale * fft2c(grad_g)

    pupil = params.pupil.values
    kernels.scatter_add_windows(spec_grad, np.ascontiguousarray(np.conj(pupil * kern) * grad_G),
                                model.starts[chunk])
    pupil_grad = 0.0
    if flags.pupil:
        pupil_grad = np.sum(np.conj(windows * kern) * grad_G, axis=0)
    z_grad = 0.0
    if flags.z and analytic_z:
        dk = model.kernel_derivative(kern)
        z_grad = float(np.sum((np.conj(grad_G) * (windows * (pupil * dk))).real))
    return pupil_grad, z_grad, dgamma, float(np.sum(losses))


def total_loss(state, dataset, batch, spec: LossSpec = LossSpec(), *,
               model: Optional[ForwardModel] = None, measurements=None) -> float:
    """Batch loss evaluated directly through :func:`loss` (no adjoint kernels)."""
    batch = np.unique(np.asarray(batch, dtype=np.int64))
    model = _model_for(dataset, model)
    meas = _measurements(dataset, batch, measurements)
    pred = model.intensities(state.spectrum, state.params, batch)
    return sum(loss(p, m, spec) for p, m in zip(pred, meas))


def finite_difference_oracle(state, dataset, batch, spec, selector, perturbation=1e-5, *,
                             model=None, measurements=None, relative=True) -> float:
    """Central-difference derivative of the batch loss along one real coordinate.

    ``selector`` is one of ``("spectrum", (row, col), "real"|"imag")``,
    ``("pupil", (row, col), "real"|"imag")``, ``("z",)`` or ``("gamma", led)``.
    With ``relative=True`` the step is ``perturbation * max(1, |coordinate|)``.
    """
    if perturbation <= 0:
        raise ValueError("perturbation must be positive")
    model = _model_for(dataset, model)
    target = selector[0]

    def evaluate(delta):
        probe = state.copy()
        if target in ("spectrum", "pupil"):
            arr = probe.spectrum if target == "spectrum" else probe.params.pupil.values
            arr[selector[1]] += delta if selector[2] == "real" else 1j * delta
        elif target == "z":
            probe.params.z_um += delta
        elif target == "gamma":
            probe.params.gamma[selector[1]] += delta
        else:
            raise ValueError(f"unknown parameter {target!r}")
        return total_loss(probe, dataset, batch, spec, model=model, measurements=measurements)

    if target in ("spectrum", "pupil"):
        arr = state.spectrum if target == "spectrum" else state.params.pupil.values
        v = arr[selector[1]]
        value = v.real if selector[2] == "real" else v.imag
    elif target == "z":
        value = state.params.z_um
    else:
        value = state.params.gamma[selector[1]]
    h = perturbation * max(1.0, abs(value)) if relative else perturbation
    return scalar_central_difference(lambda w: evaluate(w - value), value, h)


def scalar_central_difference(f, w: float, h: float = 1e-5) -> float:
    """Central difference of a scalar function; the oracle's core rule."""
    return (f(w + h) - f(w - h)) / (2 * h)
