"""Command-line interface: one executable for the whole workflow.

Subcommands: gen, train, predict, restore, eval, psf, wavefront, measure.
Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime error.
All outputs are machine-readable (JSON, CSV, TIFF).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import generator as gen
from .errors import AberraError, ValidationError
from .estimator import ModelCheckpoint, Regressor, evaluate, train
from .imageio import (
    ToolkitConfig,
    config_from_dict,
    load_config,
    read_manifest,
    read_tiff,
    write_manifest,
    write_tiff,
)
from .optics import psf_3d
from .restore import DeconvConfig, center_crop, restore_with_prediction, richardson_lucy
from .volume import Volume
from .zernike import AmplitudeVector, Scheme, mode_from_single_index, wavefront


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _apply_overrides(doc: dict, assignments: list[str]) -> dict:
    for assignment in assignments or ():
        if "=" not in assignment:
            raise UsageError(f"override '{assignment}' is not of the form path=value")
        path, raw = assignment.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = doc
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise UsageError(f"override path '{path}' crosses a non-object value")
        node[keys[-1]] = value
    return doc


def _load_config(args) -> ToolkitConfig:
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        base = Path(args.config).parent
    else:
        doc, base = {}, None
    _apply_overrides(doc, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        doc.setdefault("generator", {})["seed"] = args.seed
        doc.setdefault("train", {})["seed"] = args.seed
    return config_from_dict(doc, base_dir=base)


def _mode_doc(mode, amplitude: float) -> dict:
    return {"scheme": mode.scheme.value, "j": mode.j, "n": mode.n, "m": mode.m,
            "amplitude_um": amplitude}


def _amplitudes_from_json(path) -> AmplitudeVector:
    """Accepts predict-style {"modes": [{scheme, j, amplitude_um}, ...]} or the
    compact {"nomenclature": ..., "amplitudes": {"j": value, ...}} form."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "modes" in doc:
        modes, amps = [], []
        for item in doc["modes"]:
            modes.append(mode_from_single_index(Scheme(item["scheme"]), int(item["j"])))
            amps.append(float(item["amplitude_um"]))
        return AmplitudeVector.from_values(modes, amps)
    if "amplitudes" in doc:
        scheme = Scheme(doc.get("nomenclature", "ansi"))
        items = sorted(((int(j), float(a)) for j, a in doc["amplitudes"].items()))
        modes = [mode_from_single_index(scheme, j) for j, _ in items]
        return AmplitudeVector.from_values(modes, [a for _, a in items])
    raise ValidationError(f"{path}: expected a 'modes' list or an 'amplitudes' table")


def _write_samples(out_dir: Path, samples: list[gen.Sample], modes) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, sample in enumerate(samples):
        name = f"vol_{i:05d}.tif"
        write_tiff(sample.image, out_dir / name, dtype="float32")
        names.append(name)
    write_manifest(out_dir / "manifest.csv", names, samples, modes=modes)


# --------------------------------------------------------------------------
# subcommand handlers
# --------------------------------------------------------------------------

def cmd_gen(args) -> int:
    config = _load_config(args)
    g = config.generator
    out = Path(args.out)
    train_samples = [gen.sample_at(g, i, gen.NS_TRAIN) for i in range(args.n_train)]
    _write_samples(out / "train", train_samples, g.modes)
    val_samples = [gen.sample_at(g, i, gen.NS_VAL) for i in range(args.n_val)]
    _write_samples(out / "val", val_samples, g.modes)
    for mode in g.modes:
        series = gen.test_series(g, mode, args.n_test_per_mode)
        _write_samples(out / "test" / f"{mode.scheme.value}_{mode.j}", series, g.modes)
    summary = {
        "out": str(out),
        "n_train": args.n_train,
        "n_val": args.n_val,
        "n_test": args.n_test_per_mode * len(g.modes),
        "modes": [md.j for md in g.modes],
        "seed": g.seed,
    }
    print(json.dumps(summary))
    return 0


def _fixed_val_from_dir(val_dir: Path, modes) -> list[gen.Sample]:
    rows = read_manifest(val_dir / "manifest.csv")
    samples = []
    for row in rows:
        volume = read_tiff(val_dir / row.filename)
        truth = _truth_from_row(row, modes)
        samples.append(gen.Sample(
            image=volume, truth=truth,
            provenance=gen.Provenance(row.seed, row.phantom_index, row.offset, None),
        ))
    return samples


def _truth_from_row(row, modes) -> AmplitudeVector:
    from .zernike import mode_from_nm

    values = []
    for md in modes:
        ansi_j = mode_from_nm(Scheme.ANSI, md.n, md.m).j
        values.append(row.amps_by_ansi.get(ansi_j, 0.0))
    return AmplitudeVector.from_values(modes, values)


def cmd_train(args) -> int:
    config = _load_config(args)
    g = config.generator
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = Regressor(config.architecture, g.image_shape, seed=config.train.seed)
    train_config = config.train
    if args.val_dir:
        train_config.validation_source = _fixed_val_from_dir(Path(args.val_dir), g.modes)
    result = train(
        model,
        gen.stream(g, batch_size=train_config.batch_size, workers=args.workers),
        train_config,
        generator_config=g,
        log_path=out / "log.csv",
        checkpoint_path=out / "checkpoint.abrn",
    )
    print(json.dumps({
        "checkpoint": str(out / "checkpoint.abrn"),
        "log": str(out / "log.csv"),
        "steps": result.steps,
        "best_val_mse": result.best_val_mse,
        "final_val_mse": result.final_val_mse,
        "n_parameters": model.n_parameters,
    }))
    return 0


def _read_volume_for(args, checkpoint: ModelCheckpoint, path) -> Volume:
    default_voxel = checkpoint.microscope.voxel_um if checkpoint.microscope else None
    return read_tiff(path, voxel_um=default_voxel)


def cmd_predict(args) -> int:
    checkpoint = ModelCheckpoint.load(args.checkpoint)
    volume = _read_volume_for(args, checkpoint, args.volume)
    if checkpoint.microscope is not None and not np.allclose(
        volume.voxel_um, checkpoint.microscope.voxel_um, rtol=1e-6, atol=0.0
    ):
        raise ValidationError(
            f"voxel size mismatch: volume {volume.voxel_um} vs checkpoint "
            f"{checkpoint.microscope.voxel_um}"
        )
    model = checkpoint.build_model()
    pred = model.forward([center_crop(volume, model.input_shape)])[0]
    doc = {
        "modes": [_mode_doc(md, float(a)) for md, a in zip(checkpoint.modes, pred)],
        "checkpoint": str(args.checkpoint),
        "volume": str(args.volume),
    }
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if args.psf:
        amplitudes = AmplitudeVector.from_values(checkpoint.modes, [float(v) for v in pred])
        shape = tuple(checkpoint.generator_doc["crop_size"]) if checkpoint.generator_doc \
            else model.input_shape
        psf = psf_3d(amplitudes, checkpoint.microscope, shape)
        write_tiff(psf.volume, args.psf, dtype="float32")
    print(json.dumps(doc["modes"]))
    return 0


def cmd_restore(args) -> int:
    if bool(args.checkpoint) == bool(args.psf_file):
        raise UsageError("provide exactly one of --checkpoint or --psf-file")
    config = DeconvConfig(iterations=args.iterations)
    if args.checkpoint:
        checkpoint = ModelCheckpoint.load(args.checkpoint)
        volume = _read_volume_for(args, checkpoint, args.volume)
        psf_shape = tuple(args.psf_shape) if args.psf_shape else None
        restored, amplitudes = restore_with_prediction(
            volume, checkpoint, config, psf_shape=psf_shape
        )
        print(json.dumps({
            "predicted_modes": [
                _mode_doc(md, amp) for md, amp in zip(amplitudes.modes, amplitudes.amps)
            ],
            "iterations": config.iterations,
        }))
    else:
        volume = read_tiff(args.volume)
        kernel = read_tiff(args.psf_file)
        restored = richardson_lucy(volume, kernel, config)
        print(json.dumps({"predicted_modes": None, "iterations": config.iterations}))
    write_tiff(restored, args.out, dtype="float32")
    return 0


def cmd_eval(args) -> int:
    checkpoint = ModelCheckpoint.load(args.checkpoint)
    model = checkpoint.build_model()
    test_dir = Path(args.test_dir)
    series_dirs = sorted(p for p in test_dir.iterdir() if p.is_dir())
    if not series_dirs:
        raise ValidationError(f"no test series directories under {test_dir}")
    series = {}
    missing = []
    for series_dir in series_dirs:
        scheme, _, j = series_dir.name.partition("_")
        mode = mode_from_single_index(Scheme(scheme), int(j))
        rows = read_manifest(series_dir / "manifest.csv")
        samples = []
        for row in rows:
            path = series_dir / row.filename
            if not path.exists():
                missing.append(str(path))
                continue
            volume = read_tiff(path)
            truth = _truth_from_row(row, checkpoint.modes)
            samples.append(gen.Sample(
                image=volume, truth=truth,
                provenance=gen.Provenance(row.seed, row.phantom_index, row.offset, None),
            ))
        series[mode] = samples
    if missing:
        raise ValidationError(
            "manifest names missing volume files: " + ", ".join(missing)
        )
    report = evaluate(model, series)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "predictions.csv")
    report.write_summary_json(out / "summary.json")
    print(json.dumps({"mean_mse": report.mean_mse, "n_samples": len(report.rows)}))
    return 0


def cmd_psf(args) -> int:
    config = _load_config(args)
    amplitudes = _amplitudes_from_json(args.amps)
    shape = tuple(args.shape) if args.shape else config.generator.crop_size
    psf = psf_3d(amplitudes, config.microscope, shape, oversample=args.oversample)
    write_tiff(psf.volume, args.out, dtype="float32")
    print(json.dumps({"out": str(args.out), "shape": list(shape),
                      "sum": float(psf.volume.data.sum())}))
    return 0


def cmd_wavefront(args) -> int:
    amplitudes = _amplitudes_from_json(args.amps)
    wf = wavefront(amplitudes, args.size)
    write_tiff(Volume(wf.values[None].astype(float)), args.out, dtype="float32")
    print(json.dumps({
        "out": str(args.out), "size": args.size,
        "rms_um": float(np.sqrt(np.mean(wf.values[wf.mask] ** 2))),
    }))
    return 0


def cmd_measure(args) -> int:
    volume = read_tiff(args.volume)
    fg = read_tiff(args.fg_mask).data > 0
    bg = read_tiff(args.bg_mask).data > 0
    stats = gen.measure_noise(volume, fg, bg)
    print(json.dumps({
        "fg_mean": stats.fg_mean, "bg_mean": stats.bg_mean,
        "bg_std": stats.bg_std, "snr": stats.snr,
    }))
    return 0


# --------------------------------------------------------------------------

def build_parser() -> Parser:
    parser = Parser(prog="aberra", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_options(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a configuration value (repeatable)")
        p.add_argument("--seed", type=int, help="override generator and train seeds")

    p = sub.add_parser("gen", help="generate train/val volumes and per-mode test series")
    add_config_options(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=0)
    p.add_argument("--n-val", type=int, default=0)
    p.add_argument("--n-test-per-mode", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the regressor on the generator stream")
    add_config_options(p)
    p.add_argument("--out", required=True)
    p.add_argument("--val-dir", help="directory of fixed validation volumes (from gen)")
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict the amplitude vector for a volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True, help="output amplitude JSON")
    p.add_argument("--psf", help="also write the synthesized PSF TIFF here")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("restore", help="deconvolve a volume with a predicted or supplied PSF")
    p.add_argument("--volume", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--psf-file")
    p.add_argument("--iterations", type=int, default=25)
    p.add_argument("--psf-shape", type=int, nargs=3, metavar=("NZ", "NY", "NX"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="evaluate a checkpoint on generated test series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("psf", help="synthesize a PSF volume from an amplitude JSON")
    add_config_options(p)
    p.add_argument("--amps", required=True)
    p.add_argument("--shape", type=int, nargs=3, metavar=("NZ", "NY", "NX"))
    p.add_argument("--oversample", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_psf)

    p = sub.add_parser("wavefront", help="render a wavefront map from an amplitude JSON")
    p.add_argument("--amps", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_wavefront)

    p = sub.add_parser("measure", help="noise statistics from foreground/background masks")
    p.add_argument("--volume", required=True)
    p.add_argument("--fg-mask", required=True)
    p.add_argument("--bg-mask", required=True)
    p.set_defaults(func=cmd_measure)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except AberraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
