import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpmkit.forward import ForwardModel, NoiseModel, SystemParameters, generate_dataset, synthetic_truth
from fpmkit.gradients import (LOSS_KINDS, LossSpec, batch_gradient, finite_difference_oracle, loss,
                              scalar_central_difference, total_loss)
from fpmkit.reconstruct import ParameterFlags, ReconstructionState

from conftest import TINY, random_instance

ALL = np.arange(TINY.n_leds)


def _coords(state, rng, k=6):
    """Sample coordinates where the gradient is generically non-zero."""
    model = ForwardModel(TINY)
    n = TINY.lr_size
    r0, c0 = model.starts[0]
    spec = [(int(r0 + rng.integers(n)), int(c0 + rng.integers(n))) for _ in range(k)]
    sup = np.argwhere(state.params.pupil.support)
    pup = [tuple(int(v) for v in sup[i]) for i in rng.choice(len(sup), k, replace=False)]
    return spec, pup


def _rel(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)


@pytest.mark.parametrize("kind", LOSS_KINDS)
@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_matches_finite_differences(kind, seed):
    state, ds = random_instance(seed)
    spec = LossSpec(kind)
    batch = np.array([0, 2, 5, 8])
    grads, _ = batch_gradient(state, ds, batch, spec)
    rng = np.random.default_rng(seed)
    spec_coords, pup_coords = _coords(state, rng)

    def fd(sel):
        return finite_difference_oracle(state, ds, batch, spec, sel, 1e-5)

    for name, coords, grid in (("spectrum", spec_coords, grads.spectrum),
                               ("pupil", pup_coords, grads.pupil)):
        a, f = [], []
        for rc in coords:
            a += [grid[rc].real, grid[rc].imag]
            f += [fd((name, rc, "real")), fd((name, rc, "imag"))]
        assert _rel(a, f) < 1e-4, name

    leds = ds.led_order[batch]
    g_fd = [fd(("gamma", int(led))) for led in leds]
    assert _rel(grads.gamma[leds], g_fd) < 1e-4
    assert _rel([grads.z], [fd(("z",))]) < 1e-2


def test_batch_linearity():
    state, ds = random_instance(3)
    a, la = batch_gradient(state, ds, [1], LossSpec())
    b, lb = batch_gradient(state, ds, [6], LossSpec())
    ab, lab = batch_gradient(state, ds, [1, 6], LossSpec())
    s = a + b
    for x, y in ((ab.spectrum, s.spectrum), (ab.pupil, s.pupil), (ab.gamma, s.gamma)):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12 * np.abs(y).max())
    assert ab.z == pytest.approx(s.z, rel=1e-12)
    assert lab == pytest.approx(la + lb, rel=1e-12)


def test_order_of_batch_indices_is_irrelevant():
    state, ds = random_instance(4)
    a, _ = batch_gradient(state, ds, [7, 1, 4], LossSpec())
    b, _ = batch_gradient(state, ds, [1, 4, 7], LossSpec())
    np.testing.assert_array_equal(a.spectrum, b.spectrum)
    assert a.z == b.z


def test_stationary_point_gives_zero_gradients():
    truth = synthetic_truth(TINY.hr_size, seed=2)
    params = SystemParameters.ideal(TINY, z_um=2.0, gamma=np.linspace(0.8, 1.2, TINY.n_leds))
    ds = generate_dataset(truth, TINY, params, NoiseModel("none"), dtype=np.float64)
    state = ReconstructionState(truth.spectrum, params, flags=ParameterFlags(True, True, True))
    for kind in ("l2_intensity", "l1_intensity"):
        grads, value = batch_gradient(state, ds, ALL, LossSpec(kind))
        assert value == 0
        assert not np.any(grads.spectrum) and not np.any(grads.pupil)
        assert grads.z == 0 and not np.any(grads.gamma)


def test_small_step_along_negative_gradient_descends():
    for seed in range(5):
        state, ds = random_instance(seed)
        grads, before = batch_gradient(state, ds, ALL, LossSpec())
        norm = np.sqrt(np.sum(np.abs(grads.spectrum) ** 2) + np.sum(np.abs(grads.pupil) ** 2))
        step = 1e-6 / norm
        probe = state.copy()
        probe.spectrum -= step * grads.spectrum
        probe.params.pupil.values[...] -= step * grads.pupil
        assert total_loss(probe, ds, ALL) < before


def test_pupil_gradient_zero_outside_support():
    state, ds = random_instance(5)
    grads, _ = batch_gradient(state, ds, ALL, LossSpec())
    assert np.all(grads.pupil[~state.params.pupil.support] == 0)
    assert np.any(grads.pupil[state.params.pupil.support] != 0)


def test_spectrum_gradient_support_is_union_of_windows():
    state, ds = random_instance(6)
    batch = [0, 3]
    grads, _ = batch_gradient(state, ds, batch, LossSpec())
    model = ForwardModel(TINY)
    mask = np.zeros(state.spectrum.shape, bool)
    for i in batch:
        r, c = model.starts[i]
        mask[r:r + TINY.lr_size, c:c + TINY.lr_size] = True
    assert np.all(grads.spectrum[~mask] == 0)


def test_disabled_classes_get_zero_gradient():
    state, ds = random_instance(7, flags=ParameterFlags())
    grads, _ = batch_gradient(state, ds, ALL, LossSpec())
    assert not np.any(grads.pupil) and grads.z == 0 and not np.any(grads.gamma)
    assert np.any(grads.spectrum)


def test_gamma_gradient_lives_on_batch_leds():
    state, ds = random_instance(8)
    batch = [2, 4]
    grads, _ = batch_gradient(state, ds, batch, LossSpec())
    others = np.setdiff1d(ALL, ds.led_order[batch])
    assert np.all(grads.gamma[others] == 0)


def test_batch_errors():
    state, ds = random_instance(0)
    with pytest.raises(ValueError, match="empty"):
        batch_gradient(state, ds, [], LossSpec())
    with pytest.raises(ValueError, match="distinct"):
        batch_gradient(state, ds, [1, 1], LossSpec())
    with pytest.raises(IndexError):
        batch_gradient(state, ds, [99], LossSpec())


def test_numeric_z_mode_matches_analytic():
    state, ds = random_instance(9)
    a, _ = batch_gradient(state, ds, ALL, LossSpec())
    n, _ = batch_gradient(state, ds, ALL, LossSpec(), z_mode="numeric")
    assert n.z == pytest.approx(a.z, rel=1e-4)


def test_quadratic_toy_derivative():
    assert scalar_central_difference(lambda w: w * w, 3.0) == pytest.approx(6.0, abs=1e-6)


def test_finite_difference_error_is_second_order():
    f = np.sin
    w = 0.7
    exact = np.cos(w)
    e1 = abs(scalar_central_difference(f, w, 1e-2) - exact)
    e2 = abs(scalar_central_difference(f, w, 5e-3) - exact)
    assert e1 / e2 == pytest.approx(4.0, rel=0.02)


def test_oracle_second_order_on_model():
    state, ds = random_instance(10)
    batch = [0, 1]
    exact = batch_gradient(state, ds, batch, LossSpec())[0].z
    e1 = abs(finite_difference_oracle(state, ds, batch, LossSpec(), ("z",), 4e-2) - exact)
    e2 = abs(finite_difference_oracle(state, ds, batch, LossSpec(), ("z",), 2e-2) - exact)
    assert 3.0 < e1 / e2 < 5.0


def test_loss_examples():
    rng = np.random.default_rng(0)
    a = rng.random((7, 9))
    assert loss(a, a, LossSpec()) == 0
    assert loss(a + 1, a, LossSpec()) == pytest.approx(a.size, rel=1e-14)
    b = rng.random((7, 9))
    direct = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        direct += (x - y) * (x - y)
    assert loss(a, b, LossSpec()) == pytest.approx(direct, rel=1e-12)
    assert loss(a, b, LossSpec("l1_intensity")) == pytest.approx(sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())), rel=1e-12)
    with pytest.raises(ValueError, match="shape"):
        loss(a, b[:, :3])


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(LOSS_KINDS), seed=st.integers(0, 10_000))
def test_loss_nonnegative_and_zero_iff_equal(kind, seed):
    rng = np.random.default_rng(seed)
    a = rng.random((5, 5))
    b = rng.random((5, 5))
    assert loss(a, b, LossSpec(kind)) > 0
    assert loss(a, a, LossSpec(kind)) == 0


def test_unknown_loss_kind():
    with pytest.raises(ValueError, match="unknown loss"):
        LossSpec("huber")


def test_chunked_reduction_matches_split_batches(clean_dataset):
    from fpmkit.gradients import CHUNK_SIZE
    from fpmkit.reconstruct import initialize
    state = initialize(clean_dataset, ParameterFlags(True, True, True))
    n = clean_dataset.n_images
    assert n > 2 * CHUNK_SIZE
    whole, lw = batch_gradient(state, clean_dataset, np.arange(n), LossSpec())
    a, la = batch_gradient(state, clean_dataset, np.arange(0, n, 2), LossSpec())
    b, lb = batch_gradient(state, clean_dataset, np.arange(1, n, 2), LossSpec())
    s = a + b
    for x, y in ((whole.spectrum, s.spectrum), (whole.pupil, s.pupil), (whole.gamma, s.gamma)):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12 * np.abs(y).max())
    assert whole.z == pytest.approx(s.z, rel=1e-9)
    assert lw == pytest.approx(la + lb, rel=1e-12)
