"""Randomized synthesis of aberrated 3D training/validation/test images.

Each sample is produced by one self-contained recipe: draw a phantom (or
rasterize a point source), crop it, draw an amplitude vector, convolve the
crop with the matching synthetic PSF, rescale so the foreground reaches the
requested SNR, and add Gaussian noise clamped at zero. Every random draw of
a sample comes from its own seed, derived from (config seed, namespace,
sample index), so streams are reproducible and independent of worker count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.fft
import scipy.ndimage

from .errors import ValidationError
from .optics import MicroscopeConfig, Psf, psf_3d
from .volume import Volume
from .zernike import AmplitudeVector, ModeIndex

# Seed namespaces keep training, validation, and test draws disjoint.
NS_TRAIN = 0
NS_VAL = 1
NS_TEST = 2

_FOREGROUND_FRACTION = 0.1  # of the noiseless signal maximum
_EMPTY_CROP_RETRIES = 10


@dataclass(frozen=True)
class NoiseParams:
    """Gaussian noise model: background level, spread, and target SNR.

    Ranges are sampled uniformly per image. SNR is foreground mean divided
    by background (noise) mean, so values below 1 are not realizable by an
    additive non-negative signal.
    """

    mean_range: tuple[float, float]
    std_range: tuple[float, float]
    snr_range: tuple[float, float]
    gaussian_blur_sigma: float | None = None

    def __post_init__(self):
        for name in ("mean_range", "std_range", "snr_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (float(lo), float(hi)))
            if lo > hi:
                raise ValidationError(f"{name} has lo > hi: ({lo}, {hi})")
        if self.snr_range[0] <= 0:
            raise ValidationError(f"snr range must be positive, got {self.snr_range}")
        if self.std_range[0] < 0 or self.mean_range[0] < 0:
            raise ValidationError("noise mean and std must be non-negative")
        if self.gaussian_blur_sigma is not None and self.gaussian_blur_sigma < 0:
            raise ValidationError("gaussian_blur_sigma must be >= 0")


@dataclass
class GeneratorConfig:
    """Everything that determines the synthetic sample distribution."""

    microscope: MicroscopeConfig
    modes: tuple[ModeIndex, ...]
    amp_range: tuple[float, float] = (-0.075, 0.075)
    crop_size: tuple[int, int, int] = (32, 32, 32)
    jitter: bool = False
    max_jitter: tuple[int, int, int] | None = None
    phantoms: tuple[Volume, ...] = ()
    point_radius_um: float = 0.1
    noise: NoiseParams | None = None
    z_planes: tuple[int, ...] | None = None
    seed: int = 0
    psf_oversample: bool = False

    def __post_init__(self):
        self.modes = tuple(self.modes)
        if not self.modes:
            raise ValidationError("generator needs at least one mode")
        self.amp_range = (float(self.amp_range[0]), float(self.amp_range[1]))
        if self.amp_range[0] > self.amp_range[1]:
            raise ValidationError(f"amp_range has lo > hi: {self.amp_range}")
        self.crop_size = tuple(int(s) for s in self.crop_size)
        if any(s < 8 for s in self.crop_size):
            raise ValidationError(f"crop_size dims must be >= 8, got {self.crop_size}")
        self.phantoms = tuple(self.phantoms)
        if self.max_jitter is not None:
            self.max_jitter = tuple(int(v) for v in self.max_jitter)
            if any(v < 0 for v in self.max_jitter):
                raise ValidationError(f"max_jitter must be non-negative, got {self.max_jitter}")
        if self.point_radius_um < 0:
            raise ValidationError("point_radius_um must be >= 0")
        if self.z_planes is not None:
            self.z_planes = tuple(int(p) for p in self.z_planes)
            nz = self.crop_size[0]
            if not self.z_planes or any(p < 0 or p >= nz for p in self.z_planes):
                raise ValidationError(f"z_planes out of range for crop_size {self.crop_size}")
        for i, ph in enumerate(self.phantoms):
            for c, p in zip(self.crop_size, ph.shape):
                if c > p:
                    raise ValidationError(
                        f"crop_size {self.crop_size} exceeds phantom {i} shape {ph.shape}"
                    )

    @property
    def image_shape(self) -> tuple[int, int, int]:
        """Shape of a generated sample after optional z-plane selection."""
        nz, ny, nx = self.crop_size
        if self.z_planes is not None:
            nz = len(self.z_planes)
        return (nz, ny, nx)


@dataclass(frozen=True)
class NoiseDraw:
    mean: float
    std: float
    snr: float


@dataclass(frozen=True)
class Provenance:
    """Record sufficient to regenerate a sample exactly (given the config)."""

    sample_seed: int
    phantom_index: int | None
    offset: tuple[int, int, int]
    noise: NoiseDraw | None
    series_mode: ModeIndex | None = None


@dataclass
class Sample:
    image: Volume
    truth: AmplitudeVector
    provenance: Provenance
    noiseless: Volume | None = None


@dataclass(frozen=True)
class NoiseStats:
    fg_mean: float
    bg_mean: float
    bg_std: float
    snr: float


def sample_seed_for(config: GeneratorConfig, namespace: int, index: int, extra: int = 0) -> int:
    """Scalar seed of the substream that fully determines one sample."""
    ss = np.random.SeedSequence((int(config.seed), int(namespace), int(extra), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def sample_amplitudes(rng: np.random.Generator, config: GeneratorConfig) -> AmplitudeVector:
    """Independent uniform draw on amp_range for every configured mode."""
    lo, hi = config.amp_range
    amps = rng.uniform(lo, hi, size=len(config.modes))
    return AmplitudeVector.from_values(config.modes, amps)


def crop(
    volume: Volume,
    crop_size: Sequence[int],
    jitter: bool,
    max_jitter: Sequence[int] | None,
    rng: np.random.Generator,
) -> tuple[Volume, tuple[int, int, int]]:
    """Extract a crop; centered when jitter is off, uniformly random otherwise.

    max_jitter bounds the per-axis deviation from the centered offset; the
    random range is always intersected with the valid in-bounds range, so
    crops never leave the volume.
    """
    shape = volume.shape
    crop_size = tuple(int(s) for s in crop_size)
    if any(c > s for c, s in zip(crop_size, shape)):
        raise ValidationError(f"crop {crop_size} larger than volume {shape}")
    centered = tuple((s - c) // 2 for s, c in zip(shape, crop_size))
    if not jitter:
        offset = centered
    else:
        offset = []
        for ax in range(3):
            lo, hi = 0, shape[ax] - crop_size[ax]
            if max_jitter is not None:
                lo = max(lo, centered[ax] - int(max_jitter[ax]))
                hi = min(hi, centered[ax] + int(max_jitter[ax]))
            offset.append(int(rng.integers(lo, hi + 1)))
        offset = tuple(offset)
    sl = tuple(slice(o, o + c) for o, c in zip(offset, crop_size))
    return volume.with_data(volume.data[sl].copy()), offset


def point_source(config: GeneratorConfig) -> np.ndarray:
    """Rasterize a sphere of point_radius_um at the center of the crop grid.

    A sub-voxel radius yields the single center voxel (a discrete delta).
    """
    nz, ny, nx = config.crop_size
    dz, dy, dx = config.microscope.voxel_um
    zz = (np.arange(nz) - nz // 2) * dz
    yy = (np.arange(ny) - ny // 2) * dy
    xx = (np.arange(nx) - nx // 2) * dx
    d2 = (zz[:, None, None] ** 2 + yy[None, :, None] ** 2 + xx[None, None, :] ** 2)
    return (d2 <= config.point_radius_um ** 2).astype(float)


def convolve_same(signal: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Linear (zero-padded) FFT convolution cropped to the signal extent.

    The kernel's center voxel is taken to be index shape//2 per axis, so a
    delta at voxel p maps the kernel center onto p exactly.
    """
    full_shape = [s + k - 1 for s, k in zip(signal.shape, kernel.shape)]
    fast = [scipy.fft.next_fast_len(n) for n in full_shape]
    conv = scipy.fft.irfftn(
        scipy.fft.rfftn(signal, fast) * scipy.fft.rfftn(kernel, fast), fast
    )
    start = [k // 2 for k in kernel.shape]
    sl = tuple(slice(st, st + s) for st, s in zip(start, signal.shape))
    return np.ascontiguousarray(conv[sl])


def _signal_scale(noiseless: np.ndarray, draw: NoiseDraw) -> tuple[float, np.ndarray]:
    """Scale factor making the noisy image's foreground/background ratio hit
    the requested SNR: foreground mean of (scale*signal + mean) = snr*mean."""
    fg = noiseless > _FOREGROUND_FRACTION * noiseless.max()
    fg_mean = float(noiseless[fg].mean())
    if draw.snr < 1.0:
        raise ValidationError(
            f"snr {draw.snr:.3f} < 1 is not realizable with an additive signal"
        )
    scale = (draw.snr - 1.0) * draw.mean / fg_mean if fg_mean > 0 else 0.0
    return scale, fg


def synthesize(
    config: GeneratorConfig,
    amplitudes: AmplitudeVector,
    rng: np.random.Generator,
    sample_seed: int = -1,
    series_mode: ModeIndex | None = None,
) -> Sample:
    """Produce one aberrated image with its ground truth.

    Phantom mode crops a randomly chosen phantom (re-drawing up to 10 times
    if the crop is empty); point-source mode convolves a rasterized sphere.
    Noise, when configured, is Gaussian added after convolution and scaling,
    with negative intensities clamped to zero.

    Draw order on the rng is fixed (amplitudes are drawn by the caller
    first): phantom index, crop offset, then noise mean, std, snr. Replay
    with the same rng state reproduces the sample bit for bit.
    """
    if tuple(md.nm for md in amplitudes.modes) != tuple(md.nm for md in config.modes):
        raise ValidationError("amplitude vector modes do not match generator modes")
    psf = psf_3d(amplitudes, config.microscope, config.crop_size, config.psf_oversample)

    phantom_index = None
    if config.phantoms:
        for attempt in range(_EMPTY_CROP_RETRIES + 1):
            phantom_index = int(rng.integers(0, len(config.phantoms)))
            region, offset = crop(
                config.phantoms[phantom_index], config.crop_size,
                config.jitter, config.max_jitter, rng,
            )
            if region.data.max() > 0:
                break
        else:
            raise ValidationError(
                f"empty phantom region after {_EMPTY_CROP_RETRIES} resamples"
            )
        obj = region.data
    else:
        obj = point_source(config)
        offset = (0, 0, 0)

    noiseless = convolve_same(obj, psf.volume.data)
    if config.noise is not None and config.noise.gaussian_blur_sigma:
        noiseless = scipy.ndimage.gaussian_filter(
            noiseless, config.noise.gaussian_blur_sigma
        )
    noiseless = np.maximum(noiseless, 0.0)  # FFT roundoff can dip below zero

    draw = None
    if config.noise is not None:
        p = config.noise
        draw = NoiseDraw(
            mean=float(rng.uniform(*p.mean_range)),
            std=float(rng.uniform(*p.std_range)),
            snr=float(rng.uniform(*p.snr_range)),
        )
        scale, _ = _signal_scale(noiseless, draw)
        noiseless = scale * noiseless
        image = noiseless + rng.normal(draw.mean, draw.std, size=noiseless.shape)
        image = np.maximum(image, 0.0)
    else:
        image = noiseless

    if config.z_planes is not None:
        planes = list(config.z_planes)
        image = image[planes]
        noiseless = noiseless[planes]

    voxel = config.microscope.voxel_um
    return Sample(
        image=Volume(image, voxel),
        truth=amplitudes,
        provenance=Provenance(
            sample_seed=int(sample_seed),
            phantom_index=phantom_index,
            offset=offset,
            noise=draw,
            series_mode=series_mode,
        ),
        noiseless=Volume(noiseless, voxel),
    )


def sample_at(config: GeneratorConfig, index: int, namespace: int = NS_TRAIN) -> Sample:
    """The index-th sample of a namespace's stream, generated independently."""
    seed = sample_seed_for(config, namespace, index)
    rng = np.random.default_rng(seed)
    amplitudes = sample_amplitudes(rng, config)
    return synthesize(config, amplitudes, rng, sample_seed=seed)


def regenerate(config: GeneratorConfig, provenance: Provenance) -> Sample:
    """Replay a sample bit-for-bit from its provenance record."""
    rng = np.random.default_rng(provenance.sample_seed)
    if provenance.series_mode is not None:
        amplitudes = _series_amplitudes(rng, config, provenance.series_mode)
    else:
        amplitudes = sample_amplitudes(rng, config)
    return synthesize(
        config, amplitudes, rng,
        sample_seed=provenance.sample_seed, series_mode=provenance.series_mode,
    )


def _series_amplitudes(
    rng: np.random.Generator, config: GeneratorConfig, mode: ModeIndex
) -> AmplitudeVector:
    amp = float(rng.uniform(*config.amp_range))
    values = [amp if md.nm == mode.nm else 0.0 for md in config.modes]
    return AmplitudeVector.from_values(config.modes, values)


def test_series(config: GeneratorConfig, mode: ModeIndex, n_images: int) -> list[Sample]:
    """Per-mode test series: a random amplitude on the target mode only."""
    slots = [md.nm for md in config.modes]
    if mode.nm not in slots:
        raise ValidationError(f"mode {mode} not in generator modes")
    slot = slots.index(mode.nm)
    samples = []
    for i in range(n_images):
        seed = sample_seed_for(config, NS_TEST, i, extra=slot)
        rng = np.random.default_rng(seed)
        amplitudes = _series_amplitudes(rng, config, mode)
        samples.append(
            synthesize(config, amplitudes, rng, sample_seed=seed, series_mode=mode)
        )
    return samples


def stream(
    config: GeneratorConfig,
    batch_size: int = 2,
    namespace: int = NS_TRAIN,
    start: int = 0,
    workers: int = 0,
) -> Iterator[list[Sample]]:
    """Endless deterministic batches; content independent of worker count."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    index = start
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            while True:
                ids = range(index, index + batch_size)
                yield list(pool.map(lambda i: sample_at(config, i, namespace), ids))
                index += batch_size
    else:
        while True:
            yield [sample_at(config, i, namespace) for i in range(index, index + batch_size)]
            index += batch_size


def measure_noise(
    volume: Volume | np.ndarray,
    foreground_mask: np.ndarray,
    background_mask: np.ndarray,
) -> NoiseStats:
    """Sample statistics over two disjoint voxel masks; SNR = fg mean / bg mean."""
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume)
    fg = np.asarray(foreground_mask, dtype=bool)
    bg = np.asarray(background_mask, dtype=bool)
    if fg.shape != data.shape or bg.shape != data.shape:
        raise ValidationError("mask shapes must match the volume shape")
    if not fg.any() or not bg.any():
        raise ValidationError("foreground and background masks must be non-empty")
    if (fg & bg).any():
        raise ValidationError("foreground and background masks overlap")
    fg_mean = float(data[fg].mean())
    bg_mean = float(data[bg].mean())
    bg_std = float(data[bg].std())
    if bg_mean == 0.0:
        raise ValidationError("background mean is zero; SNR undefined")
    return NoiseStats(fg_mean=fg_mean, bg_mean=bg_mean, bg_std=bg_std, snr=fg_mean / bg_mean)


def synthetic_phantom(
    shape: tuple[int, int, int],
    seed: int,
    voxel_um: tuple[float, float, float] = (1.0, 1.0, 1.0),
    n_filaments: int = 6,
    n_blobs: int = 10,
    smooth_vox: float = 1.0,
) -> Volume:
    """Structured random volume (branching filaments plus blobs) for demos
    and self-contained experiments that need object-like phantoms."""
    rng = np.random.default_rng(seed)
    data = np.zeros(shape)
    dims = np.asarray(shape, dtype=float)
    for _ in range(n_filaments):
        pos = rng.uniform(0.2, 0.8, size=3) * dims
        vel = rng.normal(size=3)
        vel /= np.linalg.norm(vel)
        for _ in range(int(2.5 * dims.max())):
            vel += 0.35 * rng.normal(size=3)
            vel /= np.linalg.norm(vel)
            pos = np.clip(pos + vel, 0, dims - 1)
            iz, iy, ix = (int(v) for v in pos)
            data[iz, iy, ix] += 1.0
    zz, yy, xx = np.indices(shape)
    for _ in range(n_blobs):
        c = rng.uniform(0.15, 0.85, size=3) * dims
        sig = rng.uniform(0.02, 0.06) * dims
        d2 = (((zz - c[0]) / sig[0]) ** 2 + ((yy - c[1]) / sig[1]) ** 2
              + ((xx - c[2]) / sig[2]) ** 2)
        data += rng.uniform(0.3, 1.0) * np.exp(-0.5 * d2)
    data = scipy.ndimage.gaussian_filter(data, smooth_vox)
    data -= data.min()
    peak = data.max()
    if peak > 0:
        data /= peak
    return Volume(data, voxel_um)
