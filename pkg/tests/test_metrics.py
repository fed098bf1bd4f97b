import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpmkit.forward import GroundTruth
from fpmkit.metrics import (PSNR_CAP_DB, ConvergenceTrace, TraceRow, align_global_phase,
                            batch_digest, field_psnr, noise_accumulation, noise_accumulation_demo,
                            psnr, wrap_phase)


def test_psnr_identical_is_capped():
    a = np.random.default_rng(0).random((8, 8))
    assert psnr(a, a) == PSNR_CAP_DB == 99.0


def test_psnr_formula_arithmetic():
    truth = np.zeros((10, 10))
    truth[0, 0] = 1.0
    est = truth + 0.1  # MSE = 0.01
    assert psnr(est, truth) == pytest.approx(20.0, abs=1e-12)


def test_psnr_matches_direct_summation():
    rng = np.random.default_rng(1)
    a, b = rng.random((13, 11)), rng.random((13, 11))
    acc = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        acc += (x - y) ** 2
    mse = acc / a.size
    peak = max(b.ravel())
    import math
    assert psnr(a, b) == pytest.approx(10 * math.log10(peak * peak / mse), abs=1e-9)


def test_psnr_errors():
    with pytest.raises(ValueError, match="shape"):
        psnr(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError, match="peak"):
        psnr(np.ones((2, 2)), np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(1e-3, 1e3))
def test_psnr_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.random((6, 6)), rng.random((6, 6)) + 0.1
    assert psnr(c * a, c * b) == pytest.approx(psnr(a, b), abs=1e-9)


def test_global_phase_alignment_removes_constant_offset():
    rng = np.random.default_rng(2)
    truth = GroundTruth(rng.uniform(0.3, 1, (16, 16)), rng.uniform(0, 1.5, (16, 16)))
    est = truth.field * np.exp(1j * 2.1)
    np.testing.assert_allclose(align_global_phase(est, truth.field), truth.field, atol=1e-12)
    amp, phase = field_psnr(est, truth)
    assert amp > 90 and phase > 90


def test_wrap_phase_range():
    x = np.linspace(-20, 20, 1001)
    w = wrap_phase(x)
    assert w.min() >= -np.pi and w.max() < np.pi
    np.testing.assert_allclose(np.exp(1j * w), np.exp(1j * x), atol=1e-12)


def test_noise_accumulation_examples():
    assert noise_accumulation(np.zeros((5, 10))) == (0.0, 0.0)
    e = np.random.default_rng(3).standard_normal(20)
    g, inc = noise_accumulation(np.stack([e, -e]))
    assert g == 0.0
    assert inc == 2 * float(e @ e)


def test_identical_vectors_break_the_deterministic_inequality():
    e = np.ones((4, 3))
    g, inc = noise_accumulation(e)
    assert (g, inc) == (48.0, 12.0)  # ‖4e‖² vs 4‖e‖²
    assert g > inc


def test_demo_ratio_near_one_and_errors():
    rep = noise_accumulation_demo(10, trials=2000, seed=1)
    assert rep.ratio == pytest.approx(1.0, abs=0.05)
    assert 0 < rep.fraction_global_smaller < 1
    with pytest.raises(ValueError):
        noise_accumulation_demo(1)
    with pytest.raises(ValueError):
        noise_accumulation_demo(10, trials=10)


def test_batch_digest_ignores_order():
    assert batch_digest([3, 1, 2]) == batch_digest([1, 2, 3])
    assert batch_digest([1, 2]) != batch_digest([1, 3])
    assert len(batch_digest([0])) == 12


def _row(e, u, s=0.0, loss=1.0):
    return TraceRow(e, u, "x", 1, loss, s)


def test_trace_ordering_rules():
    t = ConvergenceTrace()
    t.append(_row(0, 0, 0.1))
    t.append(_row(0, 1, 0.2))
    with pytest.raises(ValueError, match="ordered"):
        t.append(_row(0, 1, 0.3))
    with pytest.raises(ValueError, match="non-decreasing"):
        t.append(_row(1, 0, 0.1))
    t.append(_row(1, 0, 0.2))
    assert t.n_epochs == 2
    np.testing.assert_allclose(t.epoch_seconds(), [0.2, 0.0])


def test_trace_summaries():
    t = ConvergenceTrace()
    for e in range(2):
        for u, val in enumerate([1.0, 3.0]):
            t.append(_row(e, u, e + u * 0.5, val + e))
    np.testing.assert_allclose(t.epoch_mean_losses(), [2.0, 3.0])
    assert t.last_epoch_oscillation() == pytest.approx(1.0)
    assert t.meta["psnr_peak"] == "max(truth)"
