"""Image-quality metrics, convergence traces, and noise-accumulation statistics."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np

PSNR_CAP_DB = 99.0
#: How PSNR peaks are chosen; stored with exported traces.
PSNR_PEAK_CONVENTION = "max(truth)"


def psnr(estimate: np.ndarray, truth: np.ndarray) -> float:
    """``10 log10(max(truth)^2 / MSE)``, capped at 99 dB."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    peak = truth.max()
    if not peak > 0:
        raise ValueError("truth peak must be positive")
    mse = np.mean((estimate - truth) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse)))


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Map angles into [-pi, pi)."""
    return (np.asarray(phase) + np.pi) % (2 * np.pi) - np.pi


def align_global_phase(estimate: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Remove the constant phase offset that best matches ``estimate`` to ``truth``."""
    offset = np.angle(np.vdot(truth, estimate))
    return estimate * np.exp(-1j * offset)


def field_psnr(estimate_field: np.ndarray, truth) -> tuple[float, float]:
    """Amplitude and phase PSNR of a complex field against a :class:`GroundTruth`."""
    aligned = align_global_phase(estimate_field, truth.field)
    amp = psnr(np.abs(aligned), truth.amplitude)
    phase = psnr(np.angle(aligned), wrap_phase(truth.phase))
    return amp, phase


# --------------------------------------------------------------------------
# traces


def batch_digest(indices) -> str:
    data = np.sort(np.asarray(indices, dtype=np.int64)).astype("<i8").tobytes()
    return hashlib.sha1(data).hexdigest()[:12]


@dataclass
class TraceRow:
    epoch: int
    update: int
    batch_digest: str
    batch_size: int
    loss: float
    seconds: float
    amplitude_psnr_db: Optional[float] = None
    phase_psnr_db: Optional[float] = None


@dataclass
class ConvergenceTrace:
    """Per-update log of a reconstruction run.

    ``loss`` is the mean per-image loss over the update's batch, so runs with
    different batch sizes are directly comparable.  ``seconds`` is cumulative
    wall time since the start of the run.
    """

    rows: List[TraceRow] = field(default_factory=list)
    meta: dict = field(default_factory=lambda: {"psnr_peak": PSNR_PEAK_CONVENTION})

    def append(self, row: TraceRow):
        if self.rows:
            last = self.rows[-1]
            if (row.epoch, row.update) <= (last.epoch, last.update):
                raise ValueError("trace rows must be strictly ordered by (epoch, update)")
            if row.seconds < last.seconds:
                raise ValueError("trace seconds must be non-decreasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    @property
    def n_epochs(self) -> int:
        return len({r.epoch for r in self.rows})

    def losses(self, epoch: Optional[int] = None) -> np.ndarray:
        return np.array([r.loss for r in self.rows if epoch is None or r.epoch == epoch])

    def epoch_mean_losses(self) -> np.ndarray:
        epochs = sorted({r.epoch for r in self.rows})
        return np.array([self.losses(e).mean() for e in epochs])

    def last_epoch_oscillation(self) -> float:
        """Std of the per-update losses of the final epoch."""
        last = self.rows[-1].epoch
        return float(np.std(self.losses(last)))

    def epoch_psnr(self) -> List[tuple]:
        """``(epoch, seconds, amplitude dB, phase dB)`` for rows carrying PSNR."""
        return [(r.epoch, r.seconds, r.amplitude_psnr_db, r.phase_psnr_db)
                for r in self.rows if r.amplitude_psnr_db is not None]

    def epoch_seconds(self) -> np.ndarray:
        """Wall time spent in each epoch."""
        ends = {}
        for r in self.rows:
            ends[r.epoch] = r.seconds
        t = np.array([ends[e] for e in sorted(ends)])
        return np.diff(np.concatenate([[0.0], t]))

    def to_rows(self) -> List[dict]:
        return [asdict(r) for r in self.rows]


# --------------------------------------------------------------------------
# noise accumulation


def noise_accumulation(eps: np.ndarray) -> tuple[float, float]:
    """``(||sum_i eps_i||^2, sum_i ||eps_i||^2)`` for a stack of noise vectors."""
    eps = np.asarray(eps, dtype=np.float64)
    eps = eps.reshape(len(eps), -1)
    total = eps.sum(axis=0)
    return float(total @ total), float(np.sum(eps * eps))


@dataclass
class NoiseAccumulationReport:
    n: int
    trials: int
    dim: int
    mean_global: float
    mean_incremental: float
    ratio: float
    fraction_global_smaller: float


def noise_accumulation_demo(n: int, trials: int = 10_000, seed: int = 0, dim: int = 64,
                            sigma: float = 1.0) -> NoiseAccumulationReport:
    """Monte-Carlo means of the summed-noise and per-step-noise norms.

    For independent zero-mean noise both means equal ``n * dim * sigma^2``;
    the global norm is not smaller in every trial, only equal on average.
    """
    if n < 2:
        raise ValueError("need at least two noise vectors")
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    rng = np.random.default_rng(seed)
    g = np.empty(trials)
    inc = np.empty(trials)
    for t in range(trials):
        g[t], inc[t] = noise_accumulation(sigma * rng.standard_normal((n, dim)))
    return NoiseAccumulationReport(
        n=n, trials=trials, dim=dim,
        mean_global=float(g.mean()), mean_incremental=float(inc.mean()),
        ratio=float(g.mean() / inc.mean()),
        fraction_global_smaller=float(np.mean(g < inc)),
    )
