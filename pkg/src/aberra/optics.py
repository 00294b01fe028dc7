"""Scalar Fourier-optics synthesis of 3D point spread functions.

The pupil is a binary NA mask with uniform amplitude; aberrations enter as a
phase term exp(i 2 pi W / lambda) with W the Zernike wavefront in
micrometers, and defocus as the angular-spectrum propagator
exp(i k_z z) with k_z = sqrt((2 pi n / lambda)^2 - |2 pi k_perp|^2). Each
axial plane is the squared modulus of the inverse 2D Fourier transform of
that pupil; the volume is normalized to unit sum.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError
from .volume import Volume
from .zernike import AmplitudeVector, ModeIndex, evaluate_mode

DEFAULT_IMMERSION_INDEX = 1.518  # standard immersion oil


@dataclass(frozen=True)
class MicroscopeConfig:
    """Detection-side optical parameters; fixes all PSF math.

    voxel_um is (dz, dy, dx) in micrometers.
    """

    na: float
    lambda_um: float
    voxel_um: tuple[float, float, float]
    n_immersion: float = DEFAULT_IMMERSION_INDEX

    def __post_init__(self):
        object.__setattr__(self, "voxel_um", tuple(float(v) for v in self.voxel_um))
        if len(self.voxel_um) != 3:
            raise ValidationError(f"voxel_um must be (dz, dy, dx), got {self.voxel_um}")
        if self.lambda_um <= 0 or any(v <= 0 for v in self.voxel_um):
            raise ValidationError("wavelength and voxel dimensions must be positive")
        if not 0 < self.na < self.n_immersion:
            raise ValidationError(
                f"need 0 < NA < n_immersion, got NA={self.na}, n={self.n_immersion}"
            )
        dz, dy, dx = self.voxel_um
        cutoff = self.na / self.lambda_um
        for name, d in (("dx", dx), ("dy", dy)):
            if 1.0 / (2.0 * d) < cutoff:
                raise ValidationError(
                    f"lateral sampling violates Nyquist: 1/(2*{name}) = {1/(2*d):.3f} "
                    f"< NA/lambda = {cutoff:.3f} cycles/um (PSF would alias)"
                )


@dataclass
class Psf:
    """A sum-normalized 3D PSF with the parameters that produced it."""

    volume: Volume
    config: MicroscopeConfig | None = None
    amplitudes: AmplitudeVector | None = None
    oversampled: bool = False

    def __post_init__(self):
        data = self.volume.data
        if np.any(data < 0):
            raise ValidationError("PSF intensities must be non-negative")
        total = float(data.sum())
        if not np.isfinite(total) or total <= 0:
            raise ValidationError("PSF must have a positive finite sum")
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"PSF must be sum-normalized, got sum={total!r}")

    @staticmethod
    def from_volume(volume: Volume) -> "Psf":
        """Wrap an externally supplied kernel, normalizing it to unit sum."""
        data = np.asarray(volume.data, dtype=float)
        if not np.all(np.isfinite(data)):
            raise ValidationError("PSF volume contains non-finite values")
        if np.any(data < 0):
            raise ValidationError("PSF volume contains negative values")
        total = data.sum()
        if total <= 0:
            raise ValidationError("PSF volume is all zero")
        return Psf(volume.with_data(data / total))


class _PupilModel:
    """Precomputed pupil-plane quantities for one (config, modes, grid) combo."""

    def __init__(self, config, modes, ny, nx):
        dz, dy, dx = config.voxel_um
        kx = np.fft.fftfreq(nx, dx)
        ky = np.fft.fftfreq(ny, dy)
        kxg, kyg = np.meshgrid(kx, ky)
        kr = np.hypot(kxg, kyg)
        rho = kr * config.lambda_um / config.na
        self.mask = rho <= 1.0
        theta = np.arctan2(kyg, kxg)
        k_medium_sq = (2.0 * np.pi * config.n_immersion / config.lambda_um) ** 2
        kz = np.sqrt(np.maximum(k_medium_sq - (2.0 * np.pi * kr) ** 2, 0.0))
        self.kz_masked = kz[self.mask]
        # Zernike basis sampled at the masked pupil points, one row per mode
        rho_in, theta_in = rho[self.mask], theta[self.mask]
        self.basis = np.stack(
            [evaluate_mode(md, rho_in, theta_in) for md in modes]
        ) if modes else np.zeros((0, rho_in.size))
        self.shape = (ny, nx)
        self.phase_scale = 2.0 * np.pi / config.lambda_um


@lru_cache(maxsize=32)
def _pupil_model(config: MicroscopeConfig, modes: tuple[ModeIndex, ...], ny: int, nx: int):
    return _PupilModel(config, modes, ny, nx)


def _field_stack(pupil_masked, model, zs):
    """Inverse-transform the pupil at each axial offset; returns |field|^2."""
    ny, nx = model.shape
    pupils = np.zeros((len(zs), ny, nx), dtype=complex)
    defocus = np.exp(1j * np.outer(zs, model.kz_masked))
    pupils[:, model.mask] = pupil_masked[None, :] * defocus
    fields = np.fft.ifft2(pupils, axes=(1, 2))
    return np.fft.fftshift(np.abs(fields) ** 2, axes=(1, 2))


def psf_3d(
    amplitudes: AmplitudeVector,
    config: MicroscopeConfig,
    shape: tuple[int, int, int],
    oversample: bool = False,
) -> Psf:
    """Synthesize the 3D PSF for an amplitude vector.

    shape is (nz, ny, nx) with all dims even and >= 8. Plane iz sits at
    z = (iz - nz//2) * dz, so the in-focus plane is index nz//2 and the
    center voxel is (nz//2, ny//2, nx//2). With oversample=True the lateral
    field of view is doubled internally before cropping, which reduces
    FFT wrap-around leakage at strongly defocused planes.
    """
    nz, ny, nx = shape
    if any(s < 8 or s % 2 for s in shape):
        raise ValidationError(f"PSF shape dims must be even and >= 8, got {shape}")
    fy, fx = (2 * ny, 2 * nx) if oversample else (ny, nx)
    model = _pupil_model(config, amplitudes.modes, fy, fx)
    if len(amplitudes):
        w = model.basis.T @ amplitudes.as_array()
        pupil_masked = np.exp(1j * model.phase_scale * w)
    else:
        pupil_masked = np.ones(model.kz_masked.shape, dtype=complex)
    dz = config.voxel_um[0]
    zs = (np.arange(nz) - nz // 2) * dz
    vol = _field_stack(pupil_masked, model, zs)
    if oversample:
        cy, cx = fy // 2, fx // 2
        vol = vol[:, cy - ny // 2: cy + ny // 2, cx - nx // 2: cx + nx // 2]
    vol = np.ascontiguousarray(vol / vol.sum())
    return Psf(Volume(vol, config.voxel_um), config, amplitudes, oversampled=oversample)


@lru_cache(maxsize=32)
def _unaberrated_peak(config: MicroscopeConfig, shape: tuple[int, int, int], oversample: bool) -> float:
    flat = AmplitudeVector((), ())
    return float(psf_3d(flat, config, shape, oversample).volume.data.max())


def strehl_proxy(psf: Psf) -> float:
    """Peak intensity relative to the unaberrated PSF of the same geometry.

    1.0 for an unaberrated input; decreases as aberrations spread energy.
    """
    if psf.config is None:
        raise ValidationError("strehl_proxy needs a PSF with its MicroscopeConfig attached")
    shape = psf.volume.data.shape
    return float(psf.volume.data.max()) / _unaberrated_peak(psf.config, shape, psf.oversampled)
