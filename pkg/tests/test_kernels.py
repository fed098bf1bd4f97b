"""The compiled kernels and the NumPy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from fpmkit import kernels
from fpmkit.kernels import LOSS_CODES, backend_module

py = backend_module("python")
try:
    cc = backend_module("compiled")
except ImportError:  # pragma: no cover - build without the extension
    cc = None

needs_compiled = pytest.mark.skipif(cc is None, reason="compiled kernels not built")


def _data(seed=0, b=5, n=16, m=48):
    rng = np.random.default_rng(seed)
    hr = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    starts = rng.integers(0, m - n, (b, 2)).astype(np.int64)
    win = rng.standard_normal((b, n, n)) + 1j * rng.standard_normal((b, n, n))
    meas = rng.random((b, n, n))
    meas[0, :2, :2] = 0  # amplitude loss edge case
    win[0, :2, :2] = 0
    return hr, starts, win, meas, rng.uniform(0.5, 1.5, b)


def test_python_gather_scatter_are_adjoint():
    hr, starts, win, _, _ = _data()
    n = win.shape[1]
    g = py.gather_windows(hr, starts, n)
    target = np.zeros_like(hr)
    py.scatter_add_windows(target, win, starts)
    lhs = np.vdot(win, g)
    rhs = np.vdot(target, hr)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@needs_compiled
def test_gather_and_scatter_agree():
    hr, starts, win, _, _ = _data(1)
    np.testing.assert_array_equal(cc.gather_windows(hr, starts, 16), py.gather_windows(hr, starts, 16))
    a, b = np.zeros_like(hr), np.zeros_like(hr)
    cc.scatter_add_windows(a, win, starts)
    py.scatter_add_windows(b, win, starts)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


@needs_compiled
@pytest.mark.parametrize("kind", sorted(LOSS_CODES))
def test_intensity_adjoint_agrees(kind):
    _, _, win, meas, gamma = _data(2)
    ga, la, da = cc.intensity_adjoint(win, meas, gamma, LOSS_CODES[kind])
    gb, lb, db = py.intensity_adjoint(win, meas, gamma, LOSS_CODES[kind])
    np.testing.assert_allclose(ga, gb, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(la, lb, rtol=1e-12)
    np.testing.assert_allclose(da, db, rtol=1e-12, atol=1e-14)


@needs_compiled
def test_adam_agrees():
    rng = np.random.default_rng(3)
    p = rng.standard_normal(100)
    g = rng.standard_normal(100)
    states = []
    for mod in (cc, py):
        q, m, v = p.copy(), np.zeros(100), np.zeros(100)
        for t in range(1, 4):
            mod.adam_update(q, g * t, m, v, 0.1, 0.9, 0.999, 1e-8, 1 - 0.9**t, 1 - 0.999**t)
        states.append((q, m, v))
    for a, b in zip(*states):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


@needs_compiled
def test_reconstruction_agrees_across_backends():
    code = ("from fpmkit.config import CLEAN_SIMULATION, simulate\n"
            "from fpmkit.reconstruct import RunMethod, reconstruct\n"
            "from fpmkit.kernels import BACKEND\n"
            "s, t = reconstruct(simulate(CLEAN_SIMULATION, 1), RunMethod('random_batch', 12), epochs=2)\n"
            "print(BACKEND, repr(t.epoch_psnr()[-1][2]))\n")
    out = {}
    for flag in ("0", "1"):
        env = {**os.environ, "FPMKIT_PURE_PYTHON": flag}
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        name, value = res.stdout.split()
        out[name] = float(value)
    assert set(out) == {"compiled", "python"}
    assert out["compiled"] == pytest.approx(out["python"], abs=1e-8)


def test_backend_selection():
    assert kernels.BACKEND in ("compiled", "python")
    with pytest.raises(ValueError):
        backend_module("fortran")
