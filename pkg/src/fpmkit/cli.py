"""Command-line entry point ``fpm``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import (CLEAN_SIMULATION, NOISY_SIMULATION, RunSpec, SimulationSpec, SweepSpec,
                     read_json, simulate)
from .forward import GroundTruth
from .gradients import LossSpec
from .io import (export_results, load_dataset, load_state, read_png, save_dataset, save_state)
from .metrics import field_psnr
from .optics import ConfigurationError
from .optim import DivergenceError
from .reconstruct import ParameterFlags, RunMethod, reconstruct, refocus

SIM_PRESETS = {"clean": CLEAN_SIMULATION, "noisy": NOISY_SIMULATION}


def _truth_from_pngs(amp_path, phase_path, cfg):
    if bool(amp_path) != bool(phase_path):
        raise ConfigurationError("--truth-amp and --truth-phase must be given together")
    if not amp_path:
        return None
    truth = GroundTruth.from_images(read_png(amp_path), read_png(phase_path))
    want = (cfg.hr_size, cfg.hr_size)
    if truth.amplitude.shape != want:
        raise ConfigurationError(f"truth images are {truth.amplitude.shape}, expected {want}")
    return truth


def cmd_simulate(args):
    spec = SIM_PRESETS[args.preset]
    if args.config:
        spec = SimulationSpec.from_dict(read_json(args.config))
    truth = _truth_from_pngs(args.truth_amp, args.truth_phase, spec.system)
    ds = simulate(spec, args.seed, truth)
    meta = save_dataset(ds, args.out)
    print(f"wrote {ds.n_images} planes to {meta}")


def _run_spec(args) -> RunSpec:
    spec = RunSpec.from_dict(read_json(args.config)) if args.config else RunSpec()
    method = spec.method
    if args.method or args.batch_size is not None:
        name = args.method or ("batch" if method.kind == "random_batch" else method.kind)
        bs = args.batch_size if args.batch_size is not None else method.batch_size
        method = RunMethod.from_name(name, bs)
    changes = {"method": method}
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if args.enable is not None:
        changes["flags"] = ParameterFlags.parse(args.enable)
    if args.loss:
        changes["loss"] = LossSpec(args.loss)
    if args.warmup_epochs is not None:
        changes["warmup_epochs"] = args.warmup_epochs
    return replace(spec, **changes)


def _finish(state, trace, spec, args, extra=None):
    out = Path(args.out)
    export_results(state, trace, out)
    save_state(state, out / "state")
    doc = {"dataset": str(args.dataset), "seed": args.seed, "run": spec.to_dict(), **(extra or {})}
    (out / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    psnr = trace.epoch_psnr()
    tail = f", amplitude {psnr[-1][2]:.2f} dB, phase {psnr[-1][3]:.2f} dB" if psnr else ""
    print(f"{len(trace)} updates over {state.epoch} epochs, z = {state.params.z_um:.4g} um{tail}")


def _run(args, fn):
    ds = load_dataset(args.dataset, normalize=False)
    spec = _run_spec(args)
    kw = dict(optimizer=spec.resolved_optimizer, loss=spec.loss, epochs=spec.epochs,
              seed=args.seed, flags=spec.flags, warmup_epochs=spec.warmup_epochs)
    try:
        return ds, spec, fn(ds, spec.method, **kw)
    except DivergenceError as exc:
        if exc.trace is not None:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            from .io import write_trace
            write_trace(exc.trace, Path(args.out) / "trace.csv")
        raise


def cmd_reconstruct(args):
    _, spec, (state, trace) = _run(args, reconstruct)
    _finish(state, trace, spec, args)


def cmd_refocus(args):
    try:
        roi = [int(v) for v in args.roi.split(",")]
    except ValueError:
        raise ConfigurationError("--roi expects x,y,w,h") from None
    if len(roi) != 4:
        raise ConfigurationError("--roi expects x,y,w,h")

    def run(ds, method, **kw):
        return refocus(ds, roi, method, **kw)

    _, spec, (state, trace) = _run(args, run)
    spec = replace(spec, flags=replace(spec.flags, z=True))
    _finish(state, trace, spec, args, {"roi": roi})


def cmd_evaluate(args):
    run = Path(args.run)
    state = load_state(run / "state")
    if args.truth:
        truth = load_dataset(args.truth, normalize=False).truth
        if truth is None:
            raise ConfigurationError(f"dataset {args.truth} carries no ground truth")
    else:
        cfg_shape = state.spectrum.shape
        truth = GroundTruth.from_images(read_png(args.truth_amp), read_png(args.truth_phase))
        if truth.amplitude.shape != cfg_shape:
            raise ConfigurationError(f"truth images are {truth.amplitude.shape}, expected {cfg_shape}")
    roi = json.loads((run / "run.json").read_text()).get("roi") if (run / "run.json").exists() else None
    if roi is not None and truth.amplitude.shape != state.spectrum.shape:
        x, y, w, h = roi
        u = state.spectrum.shape[0] // w
        win = (slice(y * u, (y + h) * u), slice(x * u, (x + w) * u))
        truth = GroundTruth(truth.amplitude[win], truth.phase[win])
    amp, phase = field_psnr(state.field, truth)
    doc = {"amplitude_psnr_db": amp, "phase_psnr_db": phase, "z_um": state.params.z_um,
           "epoch": state.epoch}
    (run / "evaluation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, sort_keys=True))


def cmd_benchmark(args):
    sweep = SweepSpec.from_dict(read_json(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in sweep.seeds:
        ds = simulate(sweep.simulation, seed)
        for run in sweep.runs:
            label = run.method.kind if run.method.kind != "random_batch" else f"batch{run.method.batch_size}"
            _, trace = reconstruct(ds, run.method, run.resolved_optimizer, run.loss, run.epochs,
                                   seed, run.flags, warmup_epochs=run.warmup_epochs)
            for epoch, seconds, amp, phase in trace.epoch_psnr():
                rows.append([label, run.method.batch_size or "", seed, epoch, repr(seconds),
                             repr(amp), repr(phase)])
            print(f"seed {seed} {label}: {trace.epoch_psnr()[-1][2]:.2f} dB "
                  f"in {trace.rows[-1].seconds:.2f} s")
    with open(out / "psnr_vs_time.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "batch_size", "seed", "epoch", "seconds",
                    "amplitude_psnr_db", "phase_psnr_db"])
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out / 'psnr_vs_time.csv'}")


def _add_run_options(p):
    p.add_argument("--dataset", required=True, help="dataset path (stem or .fpmmeta.json)")
    p.add_argument("--config", help="JSON run settings; command-line flags take precedence")
    p.add_argument("--method", choices=("sequential", "global", "batch"))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--enable", help="comma-separated subset of pupil,z,gamma")
    p.add_argument("--loss", choices=("l2_intensity", "l1_intensity", "l2_amplitude"))
    p.add_argument("--warmup-epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpm", description="Fourier ptychography simulator and reconstructor")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesise a dataset")
    p.add_argument("--config", help="JSON simulation recipe")
    p.add_argument("--preset", choices=sorted(SIM_PRESETS), default="clean")
    p.add_argument("--truth-amp", help="amplitude image (PNG) at HR size")
    p.add_argument("--truth-phase", help="phase image (PNG) at HR size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset stem")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="run a reconstruction")
    _add_run_options(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("refocus", help="reconstruct an ROI with free defocus")
    _add_run_options(p)
    p.add_argument("--roi", required=True, help="x,y,w,h in LR pixels")
    p.set_defaults(func=cmd_refocus)

    p = sub.add_parser("evaluate", help="score a run against ground truth")
    p.add_argument("--run", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--truth", help="dataset carrying synthetic ground truth")
    g.add_argument("--truth-amp")
    p.add_argument("--truth-phase")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="method / batch-size sweep, PSNR vs time")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "evaluate" and bool(args.truth_amp) != bool(args.truth_phase):
        print("fpm: error: --truth-amp and --truth-phase go together", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"fpm: error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"fpm: diverged: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
