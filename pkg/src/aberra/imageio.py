"""File formats: multipage TIFF volumes, JSON configuration, CSV manifests.

Volumes are stored one z-plane per TIFF page, grayscale, either float32
(lossless) or uint16 (rescaled to the full range, with the original scale
recorded in the image description). The image description also carries the
voxel size, so round trips preserve the grid. Configuration is a single
versioned JSON document; unknown keys are rejected with their JSON path.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile

from .errors import UnsupportedFormatError, ValidationError
from .estimator.network import ArchitectureSpec
from .estimator.training import TrainConfig
from .generator import GeneratorConfig, NoiseParams, Sample
from .optics import MicroscopeConfig
from .restore import DeconvConfig
from .volume import Volume
from .zernike import ModeIndex, Scheme, mode_from_nm, mode_from_single_index, nontrivial_modes

CONFIG_VERSION = 1

# Paper-derived defaults for the bundled microscope preset
_DEFAULT_MICROSCOPE = {
    "na": 1.4,
    "lambda_um": 0.488,
    "voxel_um": [0.2, 0.068519, 0.068519],
    "n_immersion": 1.518,
}


# --------------------------------------------------------------------------
# TIFF volumes
# --------------------------------------------------------------------------

def _page_checks(page) -> None:
    if page.samplesperpixel != 1:
        raise UnsupportedFormatError(
            f"only single-channel grayscale TIFF is supported "
            f"(SamplesPerPixel={page.samplesperpixel})"
        )
    if page.photometric not in (
        tifffile.PHOTOMETRIC.MINISBLACK, tifffile.PHOTOMETRIC.MINISWHITE
    ):
        raise UnsupportedFormatError(
            f"unsupported PhotometricInterpretation={page.photometric!r}"
        )
    if page.compression != tifffile.COMPRESSION.NONE:
        raise UnsupportedFormatError(f"unsupported Compression={page.compression!r}")
    if page.is_tiled:
        raise UnsupportedFormatError("tiled TIFF (TileWidth tag) is not supported")


def read_tiff(path, voxel_um: tuple[float, float, float] | None = None) -> Volume:
    """Read a multipage grayscale TIFF as a (z, y, x) volume.

    8/16-bit unsigned integer data is normalized by the dtype maximum;
    float32 is used as-is. uint16 files written by write_tiff carry their
    original scale in the description and are mapped back to it. The voxel
    size comes from the file's description when present, else from the
    voxel_um override, else (1, 1, 1).
    """
    path = Path(path)
    with tifffile.TiffFile(path) as tif:
        page = tif.pages[0]
        _page_checks(page)
        data = tif.asarray()
        description = page.description or ""
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3:
        raise UnsupportedFormatError(f"expected a 3D stack, got shape {data.shape}")

    meta = {}
    if description:
        try:
            parsed = json.loads(description)
            if isinstance(parsed, dict):
                meta = parsed
        except json.JSONDecodeError:
            pass

    if data.dtype == np.uint8:
        out = data.astype(np.float64) / 255.0
    elif data.dtype == np.uint16:
        out = data.astype(np.float64) / 65535.0
        if "scale_min" in meta and "scale_max" in meta:
            lo, hi = float(meta["scale_min"]), float(meta["scale_max"])
            out = out * (hi - lo) + lo
    elif data.dtype == np.float32:
        out = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"unsupported BitsPerSample/SampleFormat for dtype {data.dtype}"
        )

    if "voxel_um" in meta:
        voxel = tuple(float(v) for v in meta["voxel_um"])
    elif voxel_um is not None:
        voxel = tuple(float(v) for v in voxel_um)
    else:
        voxel = (1.0, 1.0, 1.0)
    return Volume(out, voxel)


def write_tiff(volume: Volume, path, dtype: str = "float32") -> None:
    """Write a volume as a multipage grayscale TIFF (one page per z-plane).

    float32 round-trips bitwise. uint16 rescales [min, max] to [0, 65535]
    and records the scale in the image description for lossless-range reads.
    """
    data = volume.data
    meta: dict = {"axes": "ZYX", "voxel_um": list(volume.voxel_um)}
    if dtype == "float32":
        out = data.astype(np.float32)
    elif dtype == "uint16":
        lo, hi = float(data.min()), float(data.max())
        span = hi - lo if hi > lo else 1.0
        out = np.round((data - lo) / span * 65535.0).astype(np.uint16)
        meta["scale_min"] = lo
        meta["scale_max"] = lo + span
    else:
        raise ValidationError(f"dtype must be 'float32' or 'uint16', got {dtype!r}")
    tifffile.imwrite(
        Path(path), out,
        photometric="minisblack",
        compression="none",
        description=json.dumps(meta),
    )


# --------------------------------------------------------------------------
# JSON configuration
# --------------------------------------------------------------------------

@dataclass
class ToolkitConfig:
    """Everything the CLI needs, loaded and validated from one JSON file."""

    microscope: MicroscopeConfig
    generator: GeneratorConfig
    train: TrainConfig
    deconv: DeconvConfig
    architecture: ArchitectureSpec
    phantom_paths: tuple[str, ...] = ()


def _reject_unknown(doc: dict, allowed: set[str], path: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ValidationError(f"unknown configuration key '{path}{key}'")


def _as_range(value, path: str) -> tuple[float, float]:
    """Scalar-or-range polymorphism: a number x becomes (x, x)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value), float(value))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (float(value[0]), float(value[1]))
    raise ValidationError(f"'{path}' must be a number or [lo, hi], got {value!r}")


def _noise_from_doc(doc, path: str) -> NoiseParams | None:
    if doc is None:
        return None
    _reject_unknown(doc, {"mean", "std", "snr", "gaussian_blur_sigma"}, path + ".")
    for required in ("mean", "std", "snr"):
        if required not in doc:
            raise ValidationError(f"'{path}.{required}' is required when noise is enabled")
    return NoiseParams(
        mean_range=_as_range(doc["mean"], f"{path}.mean"),
        std_range=_as_range(doc["std"], f"{path}.std"),
        snr_range=_as_range(doc["snr"], f"{path}.snr"),
        gaussian_blur_sigma=doc.get("gaussian_blur_sigma"),
    )


def _modes_from_doc(doc: dict) -> tuple[ModeIndex, ...]:
    scheme = Scheme(doc.get("nomenclature", "ansi"))
    indices = doc.get("modes")
    if indices is None:
        return nontrivial_modes(scheme)
    return tuple(mode_from_single_index(scheme, int(j)) for j in indices)


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ToolkitConfig:
    """Validate a parsed configuration document and build the typed configs."""
    _reject_unknown(
        doc, {"version", "microscope", "generator", "train", "deconv", "architecture"}, ""
    )
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ValidationError(f"unsupported config version {version}")

    m = {**_DEFAULT_MICROSCOPE, **doc.get("microscope", {})}
    _reject_unknown(m, {"na", "lambda_um", "voxel_um", "n_immersion"}, "microscope.")
    if len(m["voxel_um"]) != 3:
        raise ValidationError("'microscope.voxel_um' must be [dz, dy, dx]")
    microscope = MicroscopeConfig(
        na=float(m["na"]), lambda_um=float(m["lambda_um"]),
        voxel_um=tuple(m["voxel_um"]), n_immersion=float(m["n_immersion"]),
    )

    g = doc.get("generator", {})
    _reject_unknown(
        g,
        {"nomenclature", "modes", "amp_range", "crop_size", "jitter", "max_jitter",
         "phantoms", "point_radius_um", "noise", "z_planes", "seed", "psf_oversample"},
        "generator.",
    )
    modes = _modes_from_doc(g)
    phantom_paths = tuple(g.get("phantoms", ()))
    phantoms = []
    for rel in phantom_paths:
        p = Path(rel)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        phantoms.append(read_tiff(p, voxel_um=microscope.voxel_um))
    generator = GeneratorConfig(
        microscope=microscope,
        modes=modes,
        amp_range=tuple(g.get("amp_range", (-0.075, 0.075))),
        crop_size=tuple(g.get("crop_size", (32, 32, 32))),
        jitter=bool(g.get("jitter", False)),
        max_jitter=tuple(g["max_jitter"]) if g.get("max_jitter") is not None else None,
        phantoms=tuple(phantoms),
        point_radius_um=float(g.get("point_radius_um", 0.1)),
        noise=_noise_from_doc(g.get("noise"), "generator.noise"),
        z_planes=tuple(g["z_planes"]) if g.get("z_planes") is not None else None,
        seed=int(g.get("seed", 0)),
        psf_oversample=bool(g.get("psf_oversample", False)),
    )

    t = doc.get("train", {})
    _reject_unknown(
        t,
        {"learning_rate", "batch_size", "steps_per_epoch", "epochs", "seed", "val_size"},
        "train.",
    )
    train = TrainConfig(
        epochs=int(t.get("epochs", 400)),
        learning_rate=float(t.get("learning_rate", 0.0003)),
        batch_size=int(t.get("batch_size", 2)),
        steps_per_epoch=int(t.get("steps_per_epoch", 5)),
        seed=int(t.get("seed", 0)),
        val_size=int(t.get("val_size", 32)),
    )

    a = doc.get("architecture", {})
    _reject_unknown(
        a,
        {"n_blocks", "convs_per_block", "base_channels", "kernel", "pool", "dense_widths"},
        "architecture.",
    )
    architecture = ArchitectureSpec(
        n_outputs=len(modes),
        n_blocks=int(a.get("n_blocks", 5)),
        convs_per_block=int(a.get("convs_per_block", 2)),
        base_channels=int(a.get("base_channels", 8)),
        kernel=tuple(a.get("kernel", (3, 3, 3))),
        pool=tuple(a.get("pool", (1, 2, 2))),
        dense_widths=tuple(a.get("dense_widths", (64, 64))),
    )
    architecture.validate_input_shape(generator.image_shape)

    d = doc.get("deconv", {})
    _reject_unknown(d, {"iterations", "epsilon", "boundary", "pad_extent"}, "deconv.")
    deconv = DeconvConfig(
        iterations=int(d.get("iterations", 25)),
        epsilon=float(d.get("epsilon", 1e-12)),
        boundary=d.get("boundary", "reflect_pad"),
        pad_extent=tuple(d["pad_extent"]) if d.get("pad_extent") is not None else None,
    )
    return ToolkitConfig(
        microscope=microscope, generator=generator, train=train,
        deconv=deconv, architecture=architecture, phantom_paths=phantom_paths,
    )


def load_config(path) -> ToolkitConfig:
    """Load, validate, and default-fill a JSON configuration file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("config root must be a JSON object")
    return config_from_dict(doc, base_dir=path.parent)


# --------------------------------------------------------------------------
# Dataset manifests
# --------------------------------------------------------------------------

def _ansi_sorted(modes: tuple[ModeIndex, ...]) -> list[tuple[int, int]]:
    """Mode slots ordered by ANSI single index; returns (slot, ansi_j) pairs."""
    pairs = []
    for slot, md in enumerate(modes):
        ansi = md if md.scheme is Scheme.ANSI else mode_from_nm(Scheme.ANSI, md.n, md.m)
        pairs.append((slot, ansi.j))
    return sorted(pairs, key=lambda item: item[1])


def manifest_columns(modes: tuple[ModeIndex, ...]) -> list[str]:
    amp_cols = [f"amp_ansi_{j}" for _, j in _ansi_sorted(modes)]
    return (["filename"] + amp_cols
            + ["phantom_index", "offset_z", "offset_y", "offset_x",
               "noise_mean", "noise_std", "snr", "seed"])


def write_manifest(path, filenames: list[str], samples: list[Sample], modes=None) -> None:
    """CSV manifest: one row per exported volume, amplitudes in ANSI order."""
    if len(filenames) != len(samples):
        raise ValidationError("one filename per sample required")
    if modes is None:
        modes = samples[0].truth.modes if samples else ()
    columns = manifest_columns(tuple(modes))
    order = _ansi_sorted(tuple(modes))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for name, sample in zip(filenames, samples):
            amps = sample.truth.as_array()
            prov = sample.provenance
            row = [name]
            row += [repr(float(amps[slot])) for slot, _ in order]
            row.append("" if prov.phantom_index is None else prov.phantom_index)
            row += list(prov.offset)
            if prov.noise is None:
                row += ["", "", ""]
            else:
                row += [repr(prov.noise.mean), repr(prov.noise.std), repr(prov.noise.snr)]
            row.append(prov.sample_seed)
            writer.writerow(row)


@dataclass
class ManifestRow:
    filename: str
    amps_by_ansi: dict[int, float]
    phantom_index: int | None
    offset: tuple[int, int, int]
    noise: tuple[float, float, float] | None
    seed: int


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            amps = {
                int(key.removeprefix("amp_ansi_")): float(value)
                for key, value in rec.items() if key.startswith("amp_ansi_")
            }
            noise = None
            if rec.get("noise_mean"):
                noise = (float(rec["noise_mean"]), float(rec["noise_std"]), float(rec["snr"]))
            rows.append(ManifestRow(
                filename=rec["filename"],
                amps_by_ansi=amps,
                phantom_index=int(rec["phantom_index"]) if rec.get("phantom_index") else None,
                offset=(int(rec["offset_z"]), int(rec["offset_y"]), int(rec["offset_x"])),
                noise=noise,
                seed=int(rec["seed"]),
            ))
    return rows
