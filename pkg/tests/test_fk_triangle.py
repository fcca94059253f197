"""Acceptance criterion 5: PDE, Feynman-Kac and Duhamel agree at lambda = 1."""
import math
import time

import pytest

from conftest import SMOOTH_BUMPS, bump_potential
from wnt.feynman_kac import fk_estimate
from wnt.pde_solver import duhamel_partial_sum, heat_kernel, solve_forward_h

LAM = 1.0
POINTS = [(2.0, 0.0), (1.0, 0.3)]


def test_fk_triangle():
    started = time.perf_counter()
    for amp, xc, w in SMOOTH_BUMPS:
        dev = bump_potential(amp, xc, w)
        h = solve_forward_h(dev, LAM)
        for t, x in POINTS:
            pde = math.exp(LAM * float(h(t, x)))
            p = float(heat_kernel(LAM, t, x))
            est = fk_estimate(dev, LAM, t, x, n_paths=20000, n_steps=512, seed=1)
            fk, fk_se = p * est.mean, p * est.std_error
            du = duhamel_partial_sum(dev, t, x, n_max=3, mc_samples=40000, seed=2, lam=LAM)
            assert not du.diverged
            tail = du.tail_bound
            assert abs(pde - fk) <= tail + 3 * fk_se, (amp, t, x, pde, fk)
            assert abs(pde - du.value) <= tail + 3 * du.std_error, (amp, t, x, pde, du.value)
            assert abs(fk - du.value) <= tail + 3 * math.hypot(fk_se, du.std_error), (amp, t, x)
    assert time.perf_counter() - started < 120.0
