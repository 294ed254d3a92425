import numpy as np
import pytest

from ldr2hdr.data import write_toy_dataset
from ldr2hdr.image_io import HdrImage, LdrImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_hdr(rng):
    return HdrImage(rng.uniform(0.0, 4.0, size=(16, 16, 3)).astype(np.float32))


@pytest.fixture
def random_ldr(rng):
    return LdrImage(rng.uniform(0.0, 1.0, size=(16, 16, 3)).astype(np.float32))


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    """Two toy scenes x four exposures = eight 64x64 pairs."""
    out = tmp_path_factory.mktemp("toyset")
    return write_toy_dataset(seeds=[0, 1], size=64, out_dir=out)
