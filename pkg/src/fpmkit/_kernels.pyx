# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``.

Loops over batch members run in parallel; each member's reductions are
computed sequentially by one thread, so results do not depend on the
thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, fabs

cnp.import_array()


def gather_windows(const double complex[:, ::1] source, starts, Py_ssize_t n):
    cdef const long long[:, ::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t nb = st.shape[0], b, i, j, r, c
    out_arr = np.empty((nb, n, n), dtype=np.complex128)
    cdef double complex[:, :, ::1] out = out_arr
    for b in prange(nb, nogil=True):
        r = st[b, 0]
        c = st[b, 1]
        for i in range(n):
            for j in range(n):
                out[b, i, j] = source[r + i, c + j]
    return out_arr


def scatter_add_windows(double complex[:, ::1] target,
                        const double complex[:, :, ::1] windows, starts):
    cdef const long long[:, ::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t nb = st.shape[0], n = windows.shape[2], b, i, j, r, c
    # sequential over b: overlapping windows must accumulate in a fixed order
    with nogil:
        for b in range(nb):
            r = st[b, 0]
            c = st[b, 1]
            for i in range(n):
                for j in range(n):
                    target[r + i, c + j] = target[r + i, c + j] + windows[b, i, j]


def intensity_adjoint(const double complex[:, :, ::1] fields,
                      const double[:, :, ::1] meas, gamma, int kind):
    cdef const double[::1] gam = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t nb = fields.shape[0], n0 = fields.shape[1], n1 = fields.shape[2]
    cdef Py_ssize_t b, i, j
    grad_arr = np.empty((nb, n0, n1), dtype=np.complex128)
    losses_arr = np.zeros(nb, dtype=np.float64)
    ggrad_arr = np.zeros(nb, dtype=np.float64)
    cdef double complex[:, :, ::1] grad = grad_arr
    cdef double[::1] losses = losses_arr
    cdef double[::1] ggrad = ggrad_arr
    cdef double re, im, power, pred, d, a, resid, acc_l, acc_g, gb
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown loss code {kind}")
    for b in prange(nb, nogil=True):
        gb = gam[b]
        acc_l = 0.0
        acc_g = 0.0
        for i in range(n0):
            for j in range(n1):
                re = fields[b, i, j].real
                im = fields[b, i, j].imag
                power = re * re + im * im
                pred = gb * power
                if kind == 0:
                    d = pred - meas[b, i, j]
                    acc_l = acc_l + d * d
                    resid = 2.0 * d
                elif kind == 1:
                    d = pred - meas[b, i, j]
                    acc_l = acc_l + fabs(d)
                    if d > 0:
                        resid = 1.0
                    elif d < 0:
                        resid = -1.0
                    else:
                        resid = 0.0
                else:
                    a = sqrt(pred)
                    d = a - sqrt(meas[b, i, j])
                    acc_l = acc_l + d * d
                    if a > 0:
                        resid = d / a
                    else:
                        resid = 0.0
                acc_g = acc_g + resid * power
                grad[b, i, j] = (2.0 * gb * resid) * fields[b, i, j]
        losses[b] = acc_l
        ggrad[b] = acc_g
    return grad_arr, losses_arr, ggrad_arr


def adam_update(double[::1] param, const double[::1] grad, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, double bc1, double bc2):
    cdef Py_ssize_t k, n = param.shape[0]
    cdef double g
    for k in prange(n, nogil=True, schedule="static"):
        g = grad[k]
        m[k] = beta1 * m[k] + (1.0 - beta1) * g
        v[k] = beta2 * v[k] + (1.0 - beta2) * (g * g)
        param[k] = param[k] - lr * (m[k] / bc1) / (sqrt(v[k] / bc2) + eps)
