"""Binary model checkpoints.

Layout: magic ``ABRN`` + little-endian uint32 version + uint64 descriptor
length + UTF-8 JSON descriptor + float32 little-endian weights in parameter
order (layer sequence, weight before bias), then optional Adam moment
vectors (m then v, same length as the weights). The descriptor carries the
architecture, the trained mode list, the microscope and generator
configurations, the step counter, and the dtype.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..optics import MicroscopeConfig
from ..zernike import ModeIndex, Scheme, mode_from_single_index

MAGIC = b"ABRN"
VERSION = 1


def microscope_to_dict(config: MicroscopeConfig) -> dict:
    return {
        "na": config.na,
        "lambda_um": config.lambda_um,
        "voxel_um": list(config.voxel_um),
        "n_immersion": config.n_immersion,
    }


def microscope_from_dict(doc: dict) -> MicroscopeConfig:
    return MicroscopeConfig(
        na=doc["na"], lambda_um=doc["lambda_um"],
        voxel_um=tuple(doc["voxel_um"]), n_immersion=doc.get("n_immersion", 1.518),
    )


def generator_to_dict(config) -> dict:
    """JSON-ready snapshot of a GeneratorConfig (phantom volumes become a count)."""
    noise = None
    if config.noise is not None:
        noise = {
            "mean": list(config.noise.mean_range),
            "std": list(config.noise.std_range),
            "snr": list(config.noise.snr_range),
            "gaussian_blur_sigma": config.noise.gaussian_blur_sigma,
        }
    return {
        "nomenclature": config.modes[0].scheme.value,
        "modes": [md.j for md in config.modes],
        "amp_range": list(config.amp_range),
        "crop_size": list(config.crop_size),
        "jitter": config.jitter,
        "max_jitter": list(config.max_jitter) if config.max_jitter else None,
        "n_phantoms": len(config.phantoms),
        "point_radius_um": config.point_radius_um,
        "noise": noise,
        "z_planes": list(config.z_planes) if config.z_planes else None,
        "seed": config.seed,
        "psf_oversample": config.psf_oversample,
        "microscope": microscope_to_dict(config.microscope),
    }


@dataclass
class ModelCheckpoint:
    arch_doc: dict
    input_shape: tuple[int, int, int]
    modes: tuple[ModeIndex, ...]
    microscope: MicroscopeConfig | None
    generator_doc: dict | None
    seed: int
    step: int
    weights: np.ndarray
    optimizer_state: dict | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_model(cls, model, generator_config=None, step=0, optimizer_state=None,
                   modes=None, microscope=None):
        from .network import ArchitectureSpec  # local to avoid cycle at import

        arch = model.arch
        if generator_config is not None:
            modes = modes or generator_config.modes
            microscope = microscope or generator_config.microscope
        if modes is not None and len(modes) != arch.n_outputs:
            raise ValidationError(
                f"{len(modes)} modes for a {arch.n_outputs}-output architecture"
            )
        return cls(
            arch_doc={
                "n_outputs": arch.n_outputs,
                "n_blocks": arch.n_blocks,
                "convs_per_block": arch.convs_per_block,
                "base_channels": arch.base_channels,
                "kernel": list(arch.kernel),
                "pool": list(arch.pool),
                "dense_widths": list(arch.dense_widths),
            },
            input_shape=model.input_shape,
            modes=tuple(modes) if modes else (),
            microscope=microscope,
            generator_doc=generator_to_dict(generator_config) if generator_config else None,
            seed=model.seed,
            step=int(step),
            weights=model.flat_weights().astype(np.float32),
            optimizer_state=optimizer_state,
        )

    def build_model(self, dtype=np.float32):
        from .network import ArchitectureSpec, Regressor

        arch = ArchitectureSpec(
            n_outputs=self.arch_doc["n_outputs"],
            n_blocks=self.arch_doc["n_blocks"],
            convs_per_block=self.arch_doc["convs_per_block"],
            base_channels=self.arch_doc["base_channels"],
            kernel=tuple(self.arch_doc["kernel"]),
            pool=tuple(self.arch_doc["pool"]),
            dense_widths=tuple(self.arch_doc["dense_widths"]),
        )
        model = Regressor(arch, self.input_shape, seed=self.seed, dtype=dtype)
        model.load_flat_weights(self.weights)
        return model

    # -- serialization ----------------------------------------------------------
    def save(self, path) -> None:
        descriptor = {
            "architecture": self.arch_doc,
            "input_shape": list(self.input_shape),
            "modes": [{"scheme": md.scheme.value, "j": md.j, "n": md.n, "m": md.m}
                      for md in self.modes],
            "microscope": microscope_to_dict(self.microscope) if self.microscope else None,
            "generator": self.generator_doc,
            "seed": self.seed,
            "step": self.step,
            "n_weights": int(self.weights.size),
            "optimizer": self.optimizer_state is not None,
            "adam_t": self.optimizer_state["t"] if self.optimizer_state else 0,
        }
        blob = json.dumps(descriptor).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(np.uint32(VERSION).astype("<u4").tobytes())
            fh.write(np.uint64(len(blob)).astype("<u8").tobytes())
            fh.write(blob)
            fh.write(self.weights.astype("<f4").tobytes())
            if self.optimizer_state is not None:
                fh.write(np.asarray(self.optimizer_state["m"], dtype="<f4").tobytes())
                fh.write(np.asarray(self.optimizer_state["v"], dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise ValidationError(f"not a checkpoint file (magic {magic!r})")
            version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
            if version != VERSION:
                raise ValidationError(f"unsupported checkpoint version {version}")
            n_json = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
            descriptor = json.loads(fh.read(n_json).decode("utf-8"))
            n_weights = descriptor["n_weights"]
            weights = np.frombuffer(fh.read(4 * n_weights), dtype="<f4").copy()
            if weights.size != n_weights:
                raise ValidationError("checkpoint truncated: missing weight data")
            optimizer_state = None
            if descriptor.get("optimizer"):
                m = np.frombuffer(fh.read(4 * n_weights), dtype="<f4").copy()
                v = np.frombuffer(fh.read(4 * n_weights), dtype="<f4").copy()
                if m.size != n_weights or v.size != n_weights:
                    raise ValidationError("checkpoint truncated: missing optimizer state")
                optimizer_state = {"t": descriptor.get("adam_t", 0), "m": m, "v": v}
        modes = tuple(
            mode_from_single_index(Scheme(doc["scheme"]), doc["j"])
            for doc in descriptor["modes"]
        )
        micro = descriptor.get("microscope")
        return cls(
            arch_doc=descriptor["architecture"],
            input_shape=tuple(descriptor["input_shape"]),
            modes=modes,
            microscope=microscope_from_dict(micro) if micro else None,
            generator_doc=descriptor.get("generator"),
            seed=descriptor.get("seed", 0),
            step=descriptor.get("step", 0),
            weights=weights,
            optimizer_state=optimizer_state,
        )
