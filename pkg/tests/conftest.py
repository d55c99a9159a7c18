import numpy as np
import pytest

from owcsim.channel_optics import OpticalConstants
from owcsim.wave_surface import SpectralGrid, SpectrumParams, realize_surface


@pytest.fixture(scope="session")
def desk_params():
    return SpectrumParams()


@pytest.fixture(scope="session")
def desk_grid(desk_params):
    # 48 components keeps every wavy-scene test fast while still spanning
    # the spectral peak.
    return SpectralGrid.default(desk_params, n_omega=8, n_theta=6)


@pytest.fixture(scope="session")
def desk_surface(desk_params, desk_grid):
    return realize_surface(desk_params, desk_grid, seed=42)


@pytest.fixture(scope="session")
def flat_surface(desk_grid):
    params = SpectrumParams(phillips_alpha=0.0)
    return realize_surface(params, desk_grid, seed=1)


@pytest.fixture(scope="session")
def table_constants():
    # Worked-example constants: unity air index, green laser, clear ocean.
    return OpticalConstants(n_water=1.33, n_air=1.0)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)
