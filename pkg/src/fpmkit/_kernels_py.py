"""Pure NumPy implementation of the hot kernels.

Every function here has a drop-in twin in the compiled ``_kernels``
extension with identical signatures and semantics.
"""

import numpy as np

LOSS_CODES = {"l2_intensity": 0, "l1_intensity": 1, "l2_amplitude": 2}


def gather_windows(source, starts, n):
    """Copy ``n x n`` windows of ``source`` whose top-left corners are ``starts``."""
    starts = np.asarray(starts, dtype=np.int64)
    out = np.empty((len(starts), n, n), dtype=np.complex128)
    for b, (r, c) in enumerate(starts):
        out[b] = source[r:r + n, c:c + n]
    return out


def scatter_add_windows(target, windows, starts):
    """Add ``windows[b]`` into ``target`` in place, in ascending ``b``."""
    n = windows.shape[-1]
    for b, (r, c) in enumerate(np.asarray(starts, dtype=np.int64)):
        target[r:r + n, c:c + n] += windows[b]


def intensity_adjoint(fields, meas, gamma, kind):
    """Per-image loss and the back-propagated field gradient.

    With ``I = gamma |g|^2`` and ``R = dLoss/dI`` this returns
    ``(2 gamma R g, loss per image, sum(R |g|^2) per image)``.  The last
    entry is ``dLoss/dgamma``.
    """
    gamma = np.asarray(gamma, dtype=np.float64)[:, None, None]
    power = fields.real * fields.real + fields.imag * fields.imag
    pred = gamma * power
    if kind == 0:
        d = pred - meas
        loss = d * d
        resid = 2.0 * d
    elif kind == 1:
        d = pred - meas
        loss = np.abs(d)
        resid = np.sign(d)
    elif kind == 2:
        a = np.sqrt(pred)
        d = a - np.sqrt(meas)
        loss = d * d
        with np.errstate(divide="ignore", invalid="ignore"):
            resid = np.where(a > 0, d / a, 0.0)
    else:
        raise ValueError(f"unknown loss code {kind}")
    grad = (2.0 * gamma * resid) * fields
    losses = loss.sum(axis=(1, 2))
    ggrad = (resid * power).sum(axis=(1, 2))
    return grad, losses, ggrad


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place bias-corrected adaptive-moment step on real float64 views."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
