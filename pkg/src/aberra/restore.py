"""Richardson-Lucy deconvolution and model-driven restoration."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft

from .errors import ValidationError
from .estimator.checkpoint import ModelCheckpoint
from .optics import Psf, psf_3d
from .volume import Volume
from .zernike import AmplitudeVector

BOUNDARY_MODES = ("reflect_pad", "zero_pad")


@dataclass(frozen=True)
class DeconvConfig:
    """Richardson-Lucy settings.

    pad_extent is the per-axis padding added before the FFT convolutions;
    None means half the PSF extent, which suppresses wrap-around ringing.
    """

    iterations: int = 25
    epsilon: float = 1e-12
    boundary: str = "reflect_pad"
    pad_extent: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be > 0")
        if self.boundary not in BOUNDARY_MODES:
            raise ValidationError(
                f"boundary must be one of {BOUNDARY_MODES}, got {self.boundary!r}"
            )
        if self.pad_extent is not None:
            object.__setattr__(self, "pad_extent", tuple(int(p) for p in self.pad_extent))
            if any(p < 0 for p in self.pad_extent):
                raise ValidationError("pad_extent must be non-negative")


def _as_kernel(psf: Psf | Volume) -> np.ndarray:
    kernel = (psf.volume if isinstance(psf, Psf) else Psf.from_volume(psf).volume).data
    return np.asarray(kernel, dtype=float)


def _embed_kernel(kernel: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Place the kernel's center voxel (shape//2) at the origin of a padded grid."""
    emb = np.zeros(shape)
    emb[tuple(slice(0, k) for k in kernel.shape)] = kernel
    return np.roll(emb, [-(k // 2) for k in kernel.shape], axis=(0, 1, 2))


def richardson_lucy(
    observed: Volume,
    psf: Psf | Volume,
    config: DeconvConfig = DeconvConfig(),
    track_likelihood: bool = False,
) -> Volume | tuple[Volume, np.ndarray]:
    """Iterative maximum-likelihood restoration with multiplicative updates.

    Starting from the (padded) observed image, each iteration applies
    u <- u * corr(observed / (conv(u, h) + eps), h), where corr uses the
    flipped kernel. The output is non-negative and the same shape as the
    input. With track_likelihood=True the per-iteration Poisson
    log-likelihood of the padded data is returned alongside the volume.
    """
    data = np.asarray(observed.data, dtype=float)
    if np.any(data < 0):
        raise ValidationError("observed volume contains negative intensities")
    kernel = _as_kernel(psf)
    if kernel.ndim != data.ndim:
        raise ValidationError(
            f"PSF dims {kernel.ndim} do not match observed dims {data.ndim}"
        )

    pad = config.pad_extent or tuple(k // 2 for k in kernel.shape)
    mode = "reflect" if config.boundary == "reflect_pad" else "constant"
    padded = np.pad(data, [(p, p) for p in pad], mode=mode)
    otf = scipy.fft.rfftn(_embed_kernel(kernel, padded.shape))
    otf_conj = np.conj(otf)
    shape = padded.shape

    def conv(u, transfer):
        return scipy.fft.irfftn(scipy.fft.rfftn(u) * transfer, shape)

    u = padded.copy()
    likelihoods = []
    for _ in range(config.iterations):
        blurred = conv(u, otf) + config.epsilon
        u = np.maximum(u * conv(padded / blurred, otf_conj), 0.0)
        if track_likelihood:
            model = conv(u, otf) + config.epsilon
            ll = float(np.sum(np.where(padded > 0, padded * np.log(model), 0.0) - model))
            likelihoods.append(ll)

    inner = tuple(slice(p, p + s) for p, s in zip(pad, data.shape))
    restored = observed.with_data(np.ascontiguousarray(u[inner]))
    if track_likelihood:
        return restored, np.asarray(likelihoods)
    return restored


def center_crop(volume: Volume, crop_shape: Sequence[int]) -> Volume:
    shape = volume.shape
    crop_shape = tuple(int(s) for s in crop_shape)
    if any(c > s for c, s in zip(crop_shape, shape)):
        raise ValidationError(
            f"volume {shape} too small for the model input crop {crop_shape}"
        )
    start = [(s - c) // 2 for s, c in zip(shape, crop_shape)]
    sl = tuple(slice(o, o + c) for o, c in zip(start, crop_shape))
    return volume.with_data(volume.data[sl].copy())


def restore_with_prediction(
    observed: Volume,
    checkpoint: ModelCheckpoint,
    config: DeconvConfig = DeconvConfig(),
    psf_shape: tuple[int, int, int] | None = None,
    crop_offset: tuple[int, int, int] | None = None,
) -> tuple[Volume, AmplitudeVector]:
    """Predict the aberration from a crop, then deconvolve the full volume.

    The observed voxel size must match the checkpoint's training voxel size:
    the network's weights encode one scale and cannot be reused for another.
    """
    if checkpoint.microscope is None:
        raise ValidationError("checkpoint lacks a microscope configuration")
    if not np.allclose(observed.voxel_um, checkpoint.microscope.voxel_um, rtol=1e-6, atol=0.0):
        raise ValidationError(
            f"voxel size mismatch: volume {observed.voxel_um} vs checkpoint "
            f"{checkpoint.microscope.voxel_um}; the model only applies at its training scale"
        )
    if not checkpoint.modes:
        raise ValidationError("checkpoint lacks the trained mode list")
    model = checkpoint.build_model()
    if crop_offset is None:
        crop_vol = center_crop(observed, model.input_shape)
    else:
        sl = tuple(slice(o, o + c) for o, c in zip(crop_offset, model.input_shape))
        if any(s.stop > dim for s, dim in zip(sl, observed.shape)):
            raise ValidationError("crop offset places the model input outside the volume")
        crop_vol = observed.with_data(observed.data[sl].copy())
    pred = model.forward([crop_vol])[0]
    amplitudes = AmplitudeVector.from_values(checkpoint.modes, [float(v) for v in pred])

    if psf_shape is None:
        if checkpoint.generator_doc is not None:
            psf_shape = tuple(checkpoint.generator_doc["crop_size"])
        else:
            psf_shape = model.input_shape
    oversample = bool((checkpoint.generator_doc or {}).get("psf_oversample", False))
    psf = psf_3d(amplitudes, checkpoint.microscope, psf_shape, oversample)
    restored = richardson_lucy(observed, psf, config)
    return restored, amplitudes
