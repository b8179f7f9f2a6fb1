import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from efslab.lightfield import SceneGeometry, synth_lightfield

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def single_layer_field():
    """1.0 px per source view after 15x downsampling; 196 dense views."""
    geom = SceneGeometry.from_disparities([1.0 / 15])
    lf, dmaps = synth_lightfield(geom, 196, 24, 128, seed=3)
    return lf, dmaps


@pytest.fixture(scope="session")
def two_layer_field():
    geom = SceneGeometry.from_disparities([0.4 / 15, 1.0 / 15], masks=[("full",), ("left", 64.0)])
    lf, dmaps = synth_lightfield(geom, 196, 24, 128, seed=5)
    return lf, dmaps


def gaussian_impulse_epi(n_u: int, width: int, sigma: float = 0.5, d: float = 0.0) -> np.ndarray:
    """EPI of a single bright point, Gaussian-blurred along x, at disparity ``d``."""
    x = np.arange(width, dtype=np.float64)
    c = np.arange(n_u) - (n_u - 1) / 2
    centre = width / 2 + d * c[:, None]
    return np.exp(-0.5 * ((x[None, :] - centre) / sigma) ** 2)
