"""Dataset container, run-state persistence and result export.

A dataset named ``ds`` is stored as two files:

``ds.fpmmeta.json``
    metadata document (configuration, LED order, exposure and noise
    records, format version, optional truth reference);
``ds.planes.f32``
    the planes as little-endian float32, row-major, in LED-order.

Synthetic ground truth, when present, goes to ``ds.truth.f64`` (amplitude
then phase, little-endian float64).
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .forward import FpmDataset, GroundTruth, SystemParameters
from .metrics import ConvergenceTrace, TraceRow
from .optics import PupilGrid, SystemConfig, led_grid_offsets
from .optim import OptimizerMoments

FORMAT_NAME = "fpm-dataset"
FORMAT_VERSION = 1
META_SUFFIX = ".fpmmeta.json"
PLANES_SUFFIX = ".planes.f32"
TRUTH_SUFFIX = ".truth.f64"

TRACE_HEADER = ["epoch", "update", "batch_digest", "batch_size", "loss",
                "amplitude_psnr_db", "phase_psnr_db"]
TIMING_HEADER = ["epoch", "update", "seconds"]


class ContainerError(ValueError):
    """Malformed or inconsistent dataset container."""


class UnsupportedVersionError(ContainerError):
    pass


def _stem(path) -> Path:
    p = Path(path)
    name = p.name
    for suffix in (META_SUFFIX, PLANES_SUFFIX):
        if name.endswith(suffix):
            return p.with_name(name[: -len(suffix)])
    return p


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_dataset(dataset: FpmDataset, path) -> Path:
    """Write the container; returns the metadata file path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    planes = np.ascontiguousarray(dataset.planes, dtype="<f4")
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": dataset.config.to_dict(),
        "led_order": dataset.led_order.tolist(),
        "n_planes": int(dataset.n_images),
        "plane_shape": list(planes.shape[1:]),
        "dtype": "float32-le",
        "exposure": dataset.exposure.tolist(),
        "systematic_offset": dataset.systematic_offset,
        "true_gamma": None if dataset.true_gamma is None else np.asarray(dataset.true_gamma).tolist(),
        "true_z_um": dataset.true_z_um,
        "noise": dataset.noise,
        "notes": dataset.notes,
        "truth": None,
    }
    if dataset.truth is not None:
        truth_file = stem.name + TRUTH_SUFFIX
        blob = np.stack([dataset.truth.amplitude, dataset.truth.phase]).astype("<f8")
        (stem.parent / truth_file).write_bytes(blob.tobytes())
        meta["truth"] = {"file": truth_file, "shape": list(dataset.truth.amplitude.shape)}
    (stem.parent / (stem.name + PLANES_SUFFIX)).write_bytes(planes.tobytes())
    meta_path = stem.parent / (stem.name + META_SUFFIX)
    _dump_json(meta, meta_path)
    return meta_path


def load_dataset(path, normalize: bool = True) -> FpmDataset:
    """Read a container written by :func:`save_dataset`.

    With ``normalize=True`` the systematic offset is subtracted and the
    exposure gains divided out, so the returned planes are in model units.
    """
    stem = _stem(path)
    meta_path = stem.parent / (stem.name + META_SUFFIX)
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise ContainerError(f"missing metadata file {meta_path}") from None
    if meta.get("format") != FORMAT_NAME:
        raise ContainerError(f"{meta_path} is not an {FORMAT_NAME} document")
    if "version" not in meta:
        raise ContainerError("metadata has no version field")
    if meta["version"] != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported container version {meta['version']!r} (supported: {FORMAT_VERSION})")
    cfg = SystemConfig.from_dict(meta["config"])
    n_planes = int(meta["n_planes"])
    if n_planes != len(meta["led_order"]):
        raise ContainerError(
            f"metadata lists {len(meta['led_order'])} LEDs but {n_planes} planes")
    rows, cols = meta["plane_shape"]
    blob_path = stem.parent / (stem.name + PLANES_SUFFIX)
    blob = blob_path.read_bytes()
    expected = n_planes * rows * cols * 4
    if len(blob) != expected:
        raise ContainerError(
            f"{blob_path.name}: expected {expected} bytes, found {len(blob)}")
    planes = np.frombuffer(blob, dtype="<f4").reshape(n_planes, rows, cols).astype(np.float32)

    truth = None
    if meta.get("truth"):
        tpath = stem.parent / meta["truth"]["file"]
        shape = tuple(meta["truth"]["shape"])
        raw = tpath.read_bytes()
        if len(raw) != 2 * shape[0] * shape[1] * 8:
            raise ContainerError(f"{tpath.name}: truth blob has wrong length")
        arr = np.frombuffer(raw, dtype="<f8").reshape(2, *shape)
        truth = GroundTruth(arr[0].copy(), arr[1].copy())

    ds = FpmDataset(
        config=cfg,
        led_order=np.asarray(meta["led_order"], dtype=np.int64),
        planes=planes,
        exposure=np.asarray(meta["exposure"], dtype=np.float64),
        systematic_offset=float(meta["systematic_offset"]),
        true_gamma=None if meta["true_gamma"] is None else np.asarray(meta["true_gamma"]),
        true_z_um=meta["true_z_um"],
        noise=meta["noise"],
        notes=meta["notes"],
        truth=truth,
    )
    return ds.normalized() if normalize else ds


# --------------------------------------------------------------------------
# run state


def save_state(state, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "spectrum.npy", state.spectrum)
    np.save(d / "pupil.npy", state.params.pupil.values)
    np.save(d / "pupil_support.npy", np.asarray(state.params.pupil.support))
    np.save(d / "gamma.npy", state.params.gamma)
    for kind, table in (("first", state.moments.first), ("second", state.moments.second)):
        for name, arr in table.items():
            np.save(d / f"moment_{kind}_{name}.npy", arr)
    doc = {
        "epoch": state.epoch,
        "z_um": state.params.z_um,
        "flags": state.flags.names(),
        "moments": {"k": state.moments.k, "steps": state.moments.steps,
                    "first": sorted(state.moments.first), "second": sorted(state.moments.second)},
    }
    _dump_json(doc, d / "state.json")
    return d


def load_state(directory):
    from .reconstruct import ParameterFlags, ReconstructionState

    d = Path(directory)
    doc = json.loads((d / "state.json").read_text())
    support = np.load(d / "pupil_support.npy")
    support.setflags(write=False)
    pupil = PupilGrid(np.load(d / "pupil.npy"), support)
    params = SystemParameters(pupil, float(doc["z_um"]), np.load(d / "gamma.npy"))
    moments = OptimizerMoments(
        {n: np.load(d / f"moment_first_{n}.npy") for n in doc["moments"]["first"]},
        {n: np.load(d / f"moment_second_{n}.npy") for n in doc["moments"]["second"]},
        dict(doc["moments"]["steps"]), int(doc["moments"]["k"]))
    flags = ParameterFlags(**{n: True for n in doc["flags"]})
    return ReconstructionState(np.load(d / "spectrum.npy"), params, moments, int(doc["epoch"]), flags)


# --------------------------------------------------------------------------
# export


def _fmt(v):
    return "" if v is None else repr(v)


def write_trace(trace: ConvergenceTrace, path, timing_path=None):
    """Trace CSV without wall times (deterministic) plus an optional timing CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.rows:
            w.writerow([r.epoch, r.update, r.batch_digest, r.batch_size, repr(r.loss),
                        _fmt(r.amplitude_psnr_db), _fmt(r.phase_psnr_db)])
    if timing_path is not None:
        with open(timing_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMING_HEADER)
            for r in trace.rows:
                w.writerow([r.epoch, r.update, repr(r.seconds)])


def read_trace(path, timing_path=None) -> ConvergenceTrace:
    def opt(s):
        return None if s == "" else float(s)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        raw = list(reader)
    seconds = [0.0] * len(raw)
    if timing_path is not None:
        with open(timing_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            seconds = [float(row[2]) for row in reader]
    trace = ConvergenceTrace()
    for row, sec in zip(raw, seconds):
        trace.append(TraceRow(int(row[0]), int(row[1]), row[2], int(row[3]), float(row[4]),
                              sec, opt(row[5]), opt(row[6])))
    return trace


def _to_png16(image: np.ndarray, path: Path) -> list:
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        scaled = np.round((image - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(image)
    Image.fromarray(scaled.astype(np.uint16)).save(path, format="PNG")
    return [lo, hi]


def read_png(path) -> np.ndarray:
    """Load a grayscale PNG as float64 in [0, 1] (RGB is averaged)."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., :3].mean(axis=2)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype in (np.uint16, np.int32) or im.mode.startswith("I"):
        return arr.astype(np.float64) / 65535.0
    return arr.astype(np.float64)


def export_results(state, trace: ConvergenceTrace, out_dir) -> Path:
    """Write images, parameters and the trace of a finished run to ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise PermissionError(f"results directory {out} is not writable")

    field = state.field
    scales = {
        "amplitude.png": _to_png16(np.abs(field), out / "amplitude.png"),
        "phase.png": _to_png16(np.angle(field), out / "phase.png"),
        "spectrum_log.png": _to_png16(np.log1p(np.abs(state.spectrum)), out / "spectrum_log.png"),
        "pupil_amplitude.png": _to_png16(np.abs(state.params.pupil.values), out / "pupil_amplitude.png"),
        "pupil_phase.png": _to_png16(np.angle(state.params.pupil.values), out / "pupil_phase.png"),
    }
    _dump_json(scales, out / "scales.json")

    with open(out / "gamma.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["led", "row", "col", "gamma"])
        side = int(round(np.sqrt(len(state.params.gamma))))
        offs = led_grid_offsets(side)
        for led, g in enumerate(state.params.gamma):
            w.writerow([led, int(offs[led, 0]), int(offs[led, 1]), repr(float(g))])
    params = {"z_um": state.params.z_um, "epoch": state.epoch, "flags": state.flags.names(),
              "psnr_peak": trace.meta.get("psnr_peak")}
    _dump_json(params, out / "params.json")
    write_trace(trace, out / "trace.csv", out / "timing.csv")
    return out
