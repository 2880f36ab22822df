import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src.numerics.rng import Rng  # noqa: E402
from src.numerics.tensor import set_precision  # noqa: E402
from src.state.grid_state import Extent, GridDims, TokenGrid  # noqa: E402
from src.state.model_state import ModelConfig  # noqa: E402


@pytest.fixture(autouse=True)
def float64_mode():
    set_precision("float64")
    yield
    set_precision("float64")


@pytest.fixture
def dims_3x3() -> GridDims:
    return GridDims(h_p=3, w_p=3)


@pytest.fixture
def toy_config() -> ModelConfig:
    """Two layers over 2x2-token patches; small enough for exhaustive loops."""
    return ModelConfig(layers=2, d=16, heads=2, m_side=2, vocab=8, extent=Extent(1, 1, 0), init_scale=0.2)


@pytest.fixture
def random_grid():
    def make(dims: GridDims, seed: int = 0) -> TokenGrid:
        tokens = Rng(seed, "test/grid").integers(0, dims.vocab, size=(dims.N, dims.M))
        return TokenGrid(dims=dims, tokens=np.asarray(tokens, dtype=np.int64))
    return make
