import io

import numpy as np
import pytest

from stok.archive import open_archive, write_archive
from stok.codebook import Codebook


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def codebook(rng):
    return Codebook(vectors=rng.normal(size=(32, 391)).astype(np.float32))


@pytest.fixture
def small_codebook(rng):
    return Codebook(vectors=rng.normal(size=(8, 64)).astype(np.float32))


@pytest.fixture
def make_archive():
    """In-memory archive factory: returns (TokenArchive, file bytes)."""

    def build(grids, cb, labels=None, **opts):
        buf = io.BytesIO()
        write_archive(np.asarray(grids), cb, labels, out=buf, **opts)
        data = buf.getvalue()
        return open_archive(io.BytesIO(data)), data

    return build
