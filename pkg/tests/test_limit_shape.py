import math
import time

import numpy as np
import pytest

from wnt.errors import DomainError, ValidationError
from wnt.limit_shape import (
    R_ASYMPTOTIC,
    SQRT_2_OVER_PI,
    LensProfile,
    build_lens_profile,
    devlim,
    devlim_at,
    fit_bound_constants,
)


def test_criterion1_profile_invariants_and_runtime():
    start = time.perf_counter()
    prof = build_lens_profile(n_nodes=512, tol=1e-8)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    t = prof.grid_t
    # anchor node and exact value
    k = int(np.argmin(np.abs(t - 1.0)))
    assert t[k] == 1.0 and prof.r_vals[k] == math.pi / 2
    assert abs(prof.ell_vals[k] - 2 / math.pi) < 1e-15
    # ODE residual at interior nodes away from 0, 1, 2, from the tabulated values
    away = (np.abs(t - 1) > 0.05) & (t > 0.05) & (t < 1.95)
    r, ell, ld = prof.r_vals[away], prof.ell_vals[away], prof.elldot_vals[away]
    rdot = -ld / ell**2
    rhs = np.sign(t[away] - 1) * SQRT_2_OVER_PI * r**2 * np.sqrt(r - math.pi / 2)
    assert np.max(np.abs(rdot - rhs) / np.maximum(1.0, np.abs(rhs))) < 1e-8
    assert prof.max_residual < 1e-8
    # asymptotic ratio at the smallest positive node
    t1 = t[1]
    assert abs(prof.r_vals[1] * t1 ** (2 / 3) / R_ASYMPTOTIC - 1) < 0.02
    assert abs(R_ASYMPTOTIC - 0.8872) < 1e-4
    assert abs(prof.integral_r() - 2 * math.pi) < 1e-3


def test_profile_symmetry_bounds_and_endpoints(profile):
    t, r = profile.grid_t, profile.r_vals
    assert np.array_equal(r, r[::-1])
    assert np.allclose(t + t[::-1], 2.0, atol=1e-15)
    assert np.all(r >= math.pi / 2)
    assert np.sum(r == math.pi / 2) == 1
    assert profile.ell_vals[0] == 0.0 and profile.ell_vals[-1] == 0.0
    assert np.all(profile.ell_vals[1:-1] > 0)
    c_elldot, c_dev = fit_bound_constants(profile)
    assert math.isfinite(c_elldot) and math.isfinite(c_dev)
    # interpolant agrees with nodes and stays positive between them
    mid = 0.5 * (t[1:] + t[:-1])
    assert np.all(profile.ell(mid[1:-1]) > 0)
    assert np.allclose(profile.ell(t), profile.ell_vals, atol=1e-14)


def test_series_near_one():
    prof = build_lens_profile(n_nodes=512, tol=1e-8)
    eps = 1e-3
    got = float(prof.r(1 + eps)) - math.pi / 2
    assert abs(got / (math.pi**3 * eps**2 / 32) - 1) < 1e-3


def test_build_preconditions():
    with pytest.raises(ValidationError):
        build_lens_profile(n_nodes=32)
    with pytest.raises(ValidationError):
        build_lens_profile(tol=1e-3)


def test_devlim_examples(profile):
    assert devlim_at(profile, 1.0, 0.0) == pytest.approx(-0.25, abs=1e-14)
    assert devlim_at(profile, 1.0, 1.0) == 0.0
    ell = float(profile.ell(0.7))
    assert devlim_at(profile, 0.7, ell) == 0.0
    assert devlim_at(profile, 0.7, -1.0001 * ell) == 0.0
    for bad in (0.0, 2.0, -0.1, 2.5):
        with pytest.raises(DomainError):
            devlim_at(profile, bad, 0.0)
    # sup bound at t = 0.05 with the fitted constant (Eq. e.devlim.bd)
    _, c = fit_bound_constants(profile)
    t = 0.05
    sup = abs(devlim_at(profile, t, 0.0))
    assert sup <= c * (t ** (-2 / 3) + (2 - t) ** (-2 / 3)) * (1 + 1e-9)


def test_devlim_symmetries_and_sign(profile):
    rng = np.random.default_rng(3)
    t = rng.uniform(0.01, 1.99, 500)
    x = rng.uniform(-1, 1, 500)
    v = devlim(profile, t, x)
    assert np.all(v <= 0)
    assert np.allclose(v, devlim(profile, t, -x), rtol=0, atol=1e-15)
    assert np.allclose(v, devlim(profile, 2 - t, x), rtol=1e-10, atol=1e-12)


def test_criterion3_limit_norm_identity(profile):
    assert abs(profile.devlim_energy() - 4 / (15 * math.pi)) < 1e-3
    # independent check: scipy dblquad on a cut-off domain plus the graded tail
    from scipy.integrate import quad

    def inner(t):
        ell = float(profile.ell(t))
        return quad(lambda x: devlim_at(profile, t, x) ** 2, -ell, ell)[0]

    # int over t in (0, 2) in the graded variable w = t^(1/3) on each half
    left = quad(lambda w: inner(w**3) * 3 * w**2, 1e-6, 1.0, limit=200)[0]
    assert abs(left - 4 / (15 * math.pi)) < 1e-3  # 1/2 ||.||^2 = one half of the mirror-symmetric integral


def test_profile_csv_roundtrip(tmp_path, profile):
    path = profile.to_csv(tmp_path / "profile.csv")
    assert path.read_text().splitlines()[0] == "t,r,ell,elldot"
    back = LensProfile.from_csv(path)
    for a, b in [(back.grid_t, profile.grid_t), (back.r_vals, profile.r_vals),
                 (back.ell_vals, profile.ell_vals), (back.elldot_vals, profile.elldot_vals)]:
        assert np.array_equal(a, b)
