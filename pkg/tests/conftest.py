import numpy as np
import pytest

from wnt.fields import Potential
from wnt.limit_shape import build_lens_profile


@pytest.fixture(scope="session")
def profile():
    return build_lens_profile()


def smooth_time_window(T, ta=0.2, tb=1.8):
    s = np.clip((np.asarray(T, dtype=float) - ta) / (tb - ta), 0.0, 1.0)
    inside = (s > 0) & (s < 1)
    return np.where(inside, np.exp(4.0 - 1.0 / np.where(inside, s * (1 - s), 1.0)), 0.0)


def bump_potential(amp, xc, width, nt=256, nx=256, L=4.0):
    """Smooth potential, compactly supported in time on [0.2, 1.8]."""
    return Potential.from_function(
        lambda T, X: amp * smooth_time_window(T) * np.exp(-((X - xc) ** 2) / (2 * width**2)), nt, nx, L
    )


SMOOTH_BUMPS = [(-0.5, 0.0, 0.3), (0.4, 0.2, 0.5), (-0.3, -0.3, 0.2), (0.6, 0.0, 0.8), (-0.8, 0.1, 0.4)]
