"""Generator behavior: sampling statistics, crops, synthesis, provenance."""
import numpy as np
import numpy.testing as npt
import pytest
import scipy.stats

from aberra import generator as gen
from aberra import optics as op
from aberra import zernike as zk
from aberra.errors import ValidationError
from aberra.volume import Volume

UNIFORM_VARIANCE = 0.15 ** 2 / 12.0  # (hi - lo)^2 / 12 for the +-0.075 um range


# ---------------------------------------------------------------------------
# amplitude sampling
# ---------------------------------------------------------------------------

def test_amplitudes_stay_in_range(desk_generator):
    rng = np.random.default_rng(0)
    for _ in range(200):
        amps = gen.sample_amplitudes(rng, desk_generator).as_array()
        assert np.all(amps >= -0.075) and np.all(amps <= 0.075)


def test_degenerate_range_gives_zero_vector(desk_generator, modes3):
    config = gen.GeneratorConfig(
        microscope=desk_generator.microscope, modes=modes3,
        amp_range=(0.0, 0.0), crop_size=(16, 16, 16),
    )
    amps = gen.sample_amplitudes(np.random.default_rng(1), config)
    assert np.all(amps.as_array() == 0.0)


def test_amplitude_variance_matches_uniform_law(desk_generator):
    """Per-mode sample variance approaches (hi - lo)^2 / 12 = 0.001875."""
    rng = np.random.default_rng(7)
    sampled = np.stack([
        gen.sample_amplitudes(rng, desk_generator).as_array() for _ in range(20_000)
    ])
    for column in sampled.T:
        assert column.var() == pytest.approx(UNIFORM_VARIANCE, rel=0.05)


# ---------------------------------------------------------------------------
# test series
# ---------------------------------------------------------------------------

def test_series_has_single_active_mode(desk_generator, modes3):
    target = modes3[2]  # ANSI 8
    series = gen.test_series(desk_generator, target, 40)
    assert len(series) == 40
    for sample in series:
        amps = sample.truth.as_array()
        assert amps[2] != 0.0
        assert amps[0] == 0.0 and amps[1] == 0.0


def test_series_of_zero_images_is_empty(desk_generator, modes3):
    assert gen.test_series(desk_generator, modes3[0], 0) == []


def test_series_union_is_one_hot(desk_generator, modes3):
    for mode in modes3:
        for sample in gen.test_series(desk_generator, mode, 5):
            assert np.count_nonzero(sample.truth.as_array()) <= 1


def test_series_mode_must_be_configured(desk_generator):
    foreign = zk.mode_from_single_index("ansi", 14)
    with pytest.raises(ValidationError):
        gen.test_series(desk_generator, foreign, 1)


# ---------------------------------------------------------------------------
# cropping
# ---------------------------------------------------------------------------

def _cube(n=64):
    rng = np.random.default_rng(3)
    return Volume(rng.uniform(0.1, 1.0, size=(n, n, n)))


def test_centered_crop_offset():
    _, offset = gen.crop(_cube(), (32, 32, 32), jitter=False, max_jitter=None,
                         rng=np.random.default_rng(0))
    assert offset == (16, 16, 16)


def test_zero_jitter_equals_centered():
    volume = _cube()
    rng = np.random.default_rng(5)
    jittered, offset = gen.crop(volume, (32, 32, 32), True, (0, 0, 0), rng)
    centered, _ = gen.crop(volume, (32, 32, 32), False, None, rng)
    assert offset == (16, 16, 16)
    npt.assert_array_equal(jittered.data, centered.data)


def test_jitter_offsets_cover_range_uniformly():
    volume = _cube()
    rng = np.random.default_rng(11)
    counts = np.zeros((3, 33), dtype=int)
    for _ in range(10_000):
        _, offset = gen.crop(volume, (32, 32, 32), True, None, rng)
        for axis, value in enumerate(offset):
            counts[axis, value] += 1
    for axis in range(3):
        assert counts[axis].sum() == 10_000
        p = scipy.stats.chisquare(counts[axis]).pvalue
        assert p > 0.01


def test_max_jitter_bounds_the_offset():
    volume = _cube()
    rng = np.random.default_rng(2)
    for _ in range(200):
        _, offset = gen.crop(volume, (32, 32, 32), True, (0, 2, 5), rng)
        assert offset[0] == 16
        assert 14 <= offset[1] <= 18
        assert 11 <= offset[2] <= 21


def test_oversized_crop_rejected():
    with pytest.raises(ValidationError):
        gen.crop(_cube(16), (32, 32, 32), False, None, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def test_noise_free_synthesis_is_plain_convolution(paper_microscope, modes3, small_phantom):
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        phantoms=(small_phantom,), seed=9,
    )
    zero = zk.AmplitudeVector.zeros(modes3)
    sample = gen.synthesize(config, zero, np.random.default_rng(4))
    region = small_phantom.data[tuple(
        slice(o, o + c) for o, c in zip(sample.provenance.offset, config.crop_size)
    )]
    psf = op.psf_3d(zero, paper_microscope, (16, 16, 16))
    expected = np.maximum(gen.convolve_same(region, psf.volume.data), 0.0)
    npt.assert_allclose(sample.image.data, expected, rtol=0, atol=1e-12)


def test_subvoxel_point_source_reproduces_the_psf(paper_microscope, modes3):
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        point_radius_um=0.01, seed=1,
    )
    zero = zk.AmplitudeVector.zeros(modes3)
    sample = gen.synthesize(config, zero, np.random.default_rng(0))
    psf = op.psf_3d(zero, paper_microscope, (16, 16, 16)).volume.data
    a = sample.image.data.ravel() - sample.image.data.mean()
    b = psf.ravel() - psf.mean()
    ncc = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    assert ncc > 0.999


def test_snr_scaling_sets_foreground_mean(paper_microscope, modes3):
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        noise=gen.NoiseParams((40, 40), (5, 5), (8, 8)), seed=21,
    )
    for i in range(10):
        sample = gen.sample_at(config, i)
        noiseless = sample.noiseless.data
        fg = noiseless > 0.1 * noiseless.max()
        # expectation of the image over the foreground: scaled signal + noise mean
        assert (noiseless[fg].mean() + 40.0) == pytest.approx(320.0, rel=0.01)


def test_snr_below_one_rejected(paper_microscope, modes3):
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        noise=gen.NoiseParams((40, 40), (5, 5), (0.5, 0.5)), seed=2,
    )
    with pytest.raises(ValidationError):
        gen.sample_at(config, 0)


def test_empty_phantom_region_error(paper_microscope, modes3):
    empty = Volume(np.zeros((24, 24, 24)))
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        phantoms=(empty,), seed=3,
    )
    with pytest.raises(ValidationError, match="empty phantom region"):
        gen.sample_at(config, 0)


def test_z_plane_selection(paper_microscope, modes3):
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        z_planes=(6, 7, 8, 9), seed=13,
    )
    sample = gen.sample_at(config, 0)
    assert sample.image.shape == (4, 16, 16)
    assert config.image_shape == (4, 16, 16)


# ---------------------------------------------------------------------------
# noise measurement
# ---------------------------------------------------------------------------

def test_measure_noise_constant_volume():
    data = np.full((8, 8, 8), 5.0)
    fg = np.zeros_like(data, dtype=bool)
    bg = np.zeros_like(data, dtype=bool)
    fg[:4], bg[4:] = True, True
    stats = gen.measure_noise(Volume(data), fg, bg)
    assert stats.fg_mean == 5.0 and stats.bg_mean == 5.0 and stats.snr == 1.0


def test_measure_noise_snr_arithmetic():
    data = np.zeros((4, 4, 4))
    fg = np.zeros_like(data, dtype=bool)
    bg = np.zeros_like(data, dtype=bool)
    fg[0], bg[1] = True, True
    data[fg], data[bg] = 320.0, 40.0
    assert gen.measure_noise(Volume(data), fg, bg).snr == pytest.approx(8.0)


def test_measure_noise_recovers_background_std():
    rng = np.random.default_rng(17)
    data = np.abs(rng.normal(40.0, 7.0, size=(22, 22, 22)))  # 10648 voxels
    fg = np.zeros_like(data, dtype=bool)
    fg[:2] = True
    bg = ~fg
    stats = gen.measure_noise(Volume(data), fg, bg)
    assert 6.5 <= stats.bg_std <= 7.5


def test_measure_noise_mask_validation():
    data = np.ones((4, 4, 4))
    full = np.ones_like(data, dtype=bool)
    empty = np.zeros_like(data, dtype=bool)
    with pytest.raises(ValidationError):
        gen.measure_noise(Volume(data), full, full)  # overlap
    with pytest.raises(ValidationError):
        gen.measure_noise(Volume(data), empty, full)  # empty fg
    zeros = Volume(np.zeros((4, 4, 4)))
    half = np.zeros_like(data, dtype=bool)
    half[:2] = True
    with pytest.raises(ValidationError):
        gen.measure_noise(zeros, half, ~half)  # bg mean 0


# ---------------------------------------------------------------------------
# streams, determinism, provenance
# ---------------------------------------------------------------------------

def test_stream_is_deterministic(desk_generator):
    take = lambda: [b for _, b in zip(range(3), gen.stream(desk_generator, batch_size=2))]
    first, second = take(), take()
    for batch_a, batch_b in zip(first, second):
        for a, b in zip(batch_a, batch_b):
            npt.assert_array_equal(a.image.data, b.image.data)
            npt.assert_array_equal(a.truth.as_array(), b.truth.as_array())


def test_stream_workers_do_not_change_content(desk_generator):
    serial = next(gen.stream(desk_generator, batch_size=4))
    threaded = next(gen.stream(desk_generator, batch_size=4, workers=2))
    for a, b in zip(serial, threaded):
        npt.assert_array_equal(a.image.data, b.image.data)


def test_phantom_choice_is_uniform(paper_microscope, modes3, small_phantom):
    other = gen.synthetic_phantom((48, 64, 64), seed=23, voxel_um=paper_microscope.voxel_um)
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        phantoms=(small_phantom, other), jitter=True, seed=31,
    )
    # replicate the documented draw order (amplitudes, then phantom index)
    lo, hi = config.amp_range
    picks = np.empty(10_000, dtype=int)
    for i in range(picks.size):
        rng = np.random.default_rng(gen.sample_seed_for(config, gen.NS_TRAIN, i))
        rng.uniform(lo, hi, size=len(config.modes))
        picks[i] = rng.integers(0, 2)
    share = picks.mean()
    assert abs(share - 0.5) < 0.02
    # and the full path records the same draw in provenance
    for i in range(50):
        sample = gen.sample_at(config, i)
        rng = np.random.default_rng(sample.provenance.sample_seed)
        rng.uniform(lo, hi, size=len(config.modes))
        assert sample.provenance.phantom_index == rng.integers(0, 2)


def test_point_source_mode_when_no_phantoms(desk_generator):
    sample = gen.sample_at(desk_generator, 0)
    assert sample.provenance.phantom_index is None


def test_regenerate_from_provenance_bitwise(desk_generator, small_phantom, paper_microscope, modes3):
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        phantoms=(small_phantom,), jitter=True, seed=77,
        noise=gen.NoiseParams((20, 60), (2, 8), (8, 30)),
    )
    for i in (0, 5):
        sample = gen.sample_at(config, i)
        again = gen.regenerate(config, sample.provenance)
        npt.assert_array_equal(sample.image.data, again.image.data)
    series_sample = gen.test_series(config, modes3[1], 3)[2]
    again = gen.regenerate(config, series_sample.provenance)
    npt.assert_array_equal(series_sample.image.data, again.image.data)


def test_ground_truth_consistency(paper_microscope, modes3, small_phantom):
    """Rebuilding the noiseless signal from truth + provenance alone matches."""
    config = gen.GeneratorConfig(
        microscope=paper_microscope, modes=modes3, crop_size=(16, 16, 16),
        phantoms=(small_phantom,), jitter=True, seed=19,
        noise=gen.NoiseParams((30, 50), (2, 6), (6, 12)),
    )
    sample = gen.sample_at(config, 4)
    prov = sample.provenance
    region = small_phantom.data[tuple(
        slice(o, o + c) for o, c in zip(prov.offset, config.crop_size)
    )]
    psf = op.psf_3d(sample.truth, paper_microscope, config.crop_size)
    conv = np.maximum(gen.convolve_same(region, psf.volume.data), 0.0)
    fg = conv > 0.1 * conv.max()
    scale = (prov.noise.snr - 1.0) * prov.noise.mean / conv[fg].mean()
    rebuilt = scale * conv
    scale_ref = np.abs(sample.noiseless.data).max()
    assert np.abs(rebuilt - sample.noiseless.data).max() / scale_ref < 1e-6


def test_namespaces_separate_train_and_test(desk_generator):
    train_seeds = {gen.sample_seed_for(desk_generator, gen.NS_TRAIN, i) for i in range(500)}
    test_seeds = {gen.sample_seed_for(desk_generator, gen.NS_TEST, i, extra=k)
                  for i in range(100) for k in range(3)}
    assert not train_seeds & test_seeds


def test_generated_images_are_finite_and_nonnegative(desk_generator):
    for i in range(10):
        sample = gen.sample_at(desk_generator, i)
        assert np.all(np.isfinite(sample.image.data))
        assert sample.image.data.min() >= 0.0
