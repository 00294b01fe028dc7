"""Shared fixtures: the reference microscope and small generator setups."""
import numpy as np
import pytest

from aberra import generator as gen
from aberra import zernike as zk
from aberra.optics import MicroscopeConfig

# Reference dataset parameters: NA 1.4 oil objective, 488 nm emission,
# (dz, dy, dx) = (0.2, 0.068519, 0.068519) um.
PAPER_VOXEL = (0.2, 0.068519, 0.068519)


@pytest.fixture(scope="session")
def paper_microscope():
    return MicroscopeConfig(na=1.4, lambda_um=0.488, voxel_um=PAPER_VOXEL)


@pytest.fixture(scope="session")
def modes11():
    return zk.nontrivial_modes()


@pytest.fixture(scope="session")
def modes3():
    return tuple(zk.mode_from_single_index("ansi", j) for j in (3, 5, 8))


@pytest.fixture(scope="session")
def desk_generator(paper_microscope, modes3):
    """Point-source generator at the desk scale (16^3 crops, light noise)."""
    return gen.GeneratorConfig(
        microscope=paper_microscope,
        modes=modes3,
        crop_size=(16, 16, 16),
        point_radius_um=0.1,
        noise=gen.NoiseParams((20, 60), (2, 8), (8, 30)),
        seed=42,
    )


@pytest.fixture(scope="session")
def small_phantom(paper_microscope):
    return gen.synthetic_phantom((48, 64, 64), seed=11, voxel_um=paper_microscope.voxel_um)
