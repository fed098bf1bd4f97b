"""Compare the compiled and NumPy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat 20] [--batch 12]

Times each hot kernel on desk-scale shapes (64 px LR windows on a 256 px HR
grid), then one reconstruction epoch end to end under each backend (the
backend is fixed at import, so the epoch runs in a subprocess).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fpmkit.kernels import LOSS_CODES, backend_module

EPOCH_SNIPPET = """
import time
from fpmkit.config import CLEAN_SIMULATION, simulate
from fpmkit.kernels import BACKEND
from fpmkit.reconstruct import RunMethod, reconstruct
ds = simulate(CLEAN_SIMULATION, 0)
reconstruct(ds, RunMethod("random_batch", {batch}), epochs=1)
t = time.perf_counter()
reconstruct(ds, RunMethod("random_batch", {batch}), epochs={epochs})
print(BACKEND, (time.perf_counter() - t) / {epochs})
"""


def kernel_cases(batch, n=64, m=256, seed=0):
    rng = np.random.default_rng(seed)
    hr = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    starts = rng.integers(0, m - n, size=(batch, 2)).astype(np.int64)
    win = rng.standard_normal((batch, n, n)) + 1j * rng.standard_normal((batch, n, n))
    meas = rng.random((batch, n, n))
    gamma = np.ones(batch)
    p = rng.standard_normal(2 * m * m)
    g = rng.standard_normal(2 * m * m)

    def run_adam(mod):
        mm, vv = np.zeros_like(p), np.zeros_like(p)
        mod.adam_update(p.copy(), g, mm, vv, 0.1, 0.9, 0.999, 1e-8, 0.1, 0.001)

    return {
        "gather_windows": lambda mod: mod.gather_windows(hr, starts, n),
        "scatter_add_windows": lambda mod: mod.scatter_add_windows(np.zeros_like(hr), win, starts),
        "intensity_adjoint": lambda mod: mod.intensity_adjoint(win, meas, gamma, LOSS_CODES["l2_intensity"]),
        "adam_update": run_adam,
    }


def epoch_time(backend, batch, epochs):
    env = dict(os.environ)
    env.pop("FPMKIT_PURE_PYTHON", None)
    if backend == "python":
        env["FPMKIT_PURE_PYTHON"] = "1"
    code = EPOCH_SNIPPET.format(batch=batch, epochs=epochs)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return out[0], float(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=12)
    ap.add_argument("--epochs", type=int, default=5)
    args = ap.parse_args(argv)

    backends = ["python"]
    try:
        backend_module("compiled")
        backends.append("compiled")
    except ImportError:
        print("compiled backend not built; timing the NumPy fallback only")

    print(f"{'kernel':<22}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for name, fn in kernel_cases(args.batch).items():
        times = []
        for b in backends:
            mod = backend_module(b)
            fn(mod)
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        ratio = f"{times[0] / times[-1]:>9.2f}x" if len(times) == 2 else ""
        print(f"{name:<22}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times) + ratio)

    epochs = []
    for b in backends:
        label, secs = epoch_time(b, args.batch, args.epochs)
        epochs.append(secs)
        print(f"epoch (B={args.batch}, {label:<8})   {secs * 1e3:10.1f} ms")
    if len(epochs) == 2:
        print(f"epoch speedup {epochs[0] / epochs[1]:.2f}x")


if __name__ == "__main__":
    main()
