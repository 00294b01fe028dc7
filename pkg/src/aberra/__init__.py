"""Aberration estimation and restoration for 3D fluorescence microscopy.

The pipeline: synthesize aberrated volumes from phantoms or point sources
(generator + optics + zernike), train a compact 3D convolutional regressor
on the stream (estimator), and restore aberrated volumes by Richardson-Lucy
deconvolution with the predicted PSF (restore). imageio handles TIFF,
configuration, and manifest formats; cli exposes the whole workflow.
"""
from .errors import AberraError, DivergenceError, UnsupportedFormatError, ValidationError
from .generator import (
    GeneratorConfig,
    NoiseParams,
    NoiseStats,
    Sample,
    crop,
    measure_noise,
    sample_amplitudes,
    stream,
    synthesize,
    synthetic_phantom,
    test_series,
)
from .estimator import (
    ArchitectureSpec,
    EvalReport,
    ModelCheckpoint,
    Regressor,
    TrainConfig,
    evaluate,
    train,
)
from .imageio import ToolkitConfig, load_config, read_tiff, write_tiff
from .optics import MicroscopeConfig, Psf, psf_3d, strehl_proxy
from .restore import DeconvConfig, restore_with_prediction, richardson_lucy
from .volume import Volume
from .zernike import (
    AmplitudeVector,
    ModeIndex,
    Scheme,
    WavefrontMap,
    evaluate_mode,
    mode_from_nm,
    mode_from_single_index,
    nontrivial_modes,
    single_index,
    wavefront,
)

__version__ = "0.1.0"
