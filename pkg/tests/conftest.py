import numpy as np
import pytest

from fpmkit.config import CLEAN_SIMULATION, simulate
from fpmkit.forward import FpmDataset, SystemParameters
from fpmkit.optics import SystemConfig, center_out_order
from fpmkit.reconstruct import ParameterFlags, ReconstructionState

#: 8 px LR -> 16 px HR, 3x3 LEDs: small enough for coordinate-wise checks.
TINY = SystemConfig(grid_side=3, lr_size=8, upsample_factor=2, led_pitch_mm=8.0, camera_pixel_um=4.8)

ACCEPTANCE_LINES = []


def random_instance(seed=0, cfg=TINY, flags=ParameterFlags(True, True, True), z_um=3.0):
    """Random (state, dataset) pair whose measurements are unrelated to the state."""
    rng = np.random.default_rng(seed)
    m, n = cfg.hr_size, cfg.lr_size
    spectrum = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    params = SystemParameters.ideal(cfg, z_um, rng.uniform(0.8, 1.2, cfg.n_leds))
    sup = params.pupil.support
    params.pupil.values[sup] *= rng.uniform(0.5, 1.5, sup.sum()) * np.exp(1j * rng.uniform(-1, 1, sup.sum()))
    planes = rng.uniform(0.0, 2.0, (cfg.n_leds, n, n))
    ds = FpmDataset(cfg, center_out_order(cfg), planes)
    return ReconstructionState(spectrum, params, flags=flags), ds


@pytest.fixture
def tiny_instance():
    return random_instance()


@pytest.fixture(scope="session")
def clean_dataset():
    return simulate(CLEAN_SIMULATION, seed=1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
