import math

import numpy as np
import pytest

from conftest import SMOOTH_BUMPS, bump_potential
from wnt.errors import DivergenceError, StepSizeError, ValidationError
from wnt.fields import Potential
from wnt.pde_solver import (
    SolverOptions,
    duhamel_partial_sum,
    duhamel_tail_bound,
    free_log_kernel,
    heat_kernel,
    initial_layer,
    solve_adjoint,
    solve_adjoint_full,
    solve_forward_h,
    solve_forward_z,
    terminal_delta,
)


def test_free_solution_is_exact():
    F = solve_forward_h(Potential.zeros(64, 129), 8.0)
    T, X = np.meshgrid(F.t, F.x, indexing="ij")
    assert np.max(np.abs(F.values - free_log_kernel(8.0, T, X))) < 1e-12
    assert F.at_origin() == pytest.approx(math.log(8 / (4 * math.pi)) / 16, abs=1e-12)
    assert F.trajectory is not None


def test_solver_preconditions():
    with pytest.raises(ValidationError):
        solve_forward_h(Potential.zeros(32, 33), 0.5)
    with pytest.raises(ValidationError):
        SolverOptions(t0=0.2).validate()
    with pytest.raises(ValidationError):
        solve_forward_h(np.zeros((8, 8)), 2.0)


def test_fixed_step_violating_cfl_raises():
    dev = bump_potential(-0.5, 0.0, 0.3, 32, 129)
    with pytest.raises(StepSizeError):
        solve_forward_h(dev, 8.0, n_steps=10)


def test_step_budget_exhaustion_raises():
    with pytest.raises(StepSizeError):
        solve_forward_h(Potential.zeros(32, 129), 8.0, max_steps=5)


@pytest.mark.parametrize("t_on", [0.0, 0.5])
def test_divergence_reports_node(t_on):
    vals = np.zeros((32, 65))
    vals[int(t_on * 16):] = 1e305
    with pytest.raises(DivergenceError) as err, np.errstate(all="ignore"):
        solve_forward_h(Potential(vals), 2.0)
    assert err.value.node is not None and err.value.node[0] >= t_on - 1 / 16  # row() ramps from the previous centre


@pytest.mark.parametrize("amp,xc,w", SMOOTH_BUMPS[:3])
def test_cole_hopf_agreement(amp, xc, w):
    dev = bump_potential(amp, xc, w, 128, 257)
    h = solve_forward_h(dev, 2.0)
    z = solve_forward_z(dev, 2.0)
    for t in (1.0, 2.0):
        for x in (-0.5, 0.0, 0.5):
            assert float(h(t, x)) == pytest.approx(float(z(t, x)), abs=1e-3)


def test_potential_monotonicity():
    a = solve_forward_h(bump_potential(-0.2, 0.0, 0.4, 64, 129), 4.0).at_origin()
    b = solve_forward_h(bump_potential(-0.6, 0.0, 0.4, 64, 129), 4.0).at_origin()
    assert b < a


def test_terminal_delta_is_interpolation_adjoint():
    x = np.linspace(-4, 4, 256)
    dx = x[1] - x[0]
    w = terminal_delta(x, dx)
    assert w.sum() * dx == pytest.approx(1.0, abs=1e-14)
    f = np.cos(x) + x**3
    assert np.dot(w, f) * dx == pytest.approx(np.interp(0.0, x, f), abs=1e-14)


def test_adjoint_zero_multiplier_gives_zero():
    dev = bump_potential(-0.5, 0.0, 0.3, 32, 65)
    h = solve_forward_h(dev, 4.0)
    assert np.all(solve_adjoint(h, 4.0, 0.0, dev).values == 0.0)
    with pytest.raises(ValidationError):
        solve_adjoint(h, 4.0, 0.5, dev)


def test_adjoint_mass_and_sign():
    dev = bump_potential(-0.5, 0.0, 0.3, 64, 129)
    h = solve_forward_h(dev, 4.0)
    res = solve_adjoint_full(h, 4.0, -0.7, dev)
    assert np.max(np.abs(res.mass + 0.7)) < 1e-6 * 0.7
    assert np.all(res.potential.values <= 0.0)
    # cells above t0 carry the full spatial mass mu; the layer transpose keeps the total
    cell_mass = res.potential.values.sum(axis=1) * dev.dx
    assert np.allclose(cell_mass[2:], -0.7, rtol=1e-6)
    assert cell_mass.sum() * dev.dt == pytest.approx(-0.7 * 2.0, rel=1e-6)


def test_initial_layer_carries_early_potential():
    """dev supported on [0, t0] only: the layer is the exact contribution for a constant."""
    dev = Potential(np.full((256, 129), -0.3))
    u = initial_layer(dev, 4.0, 0.01)
    assert np.allclose(u[20:-20], -0.3 * 0.01, rtol=1e-12)
    h = solve_forward_h(dev, 4.0)
    assert h.at_origin() == pytest.approx(free_log_kernel(4.0, 2.0, 0.0) - 0.3 * 2.0, abs=1e-6)


def test_layer_gradient_below_t0():
    lam = 4.0
    dev = bump_potential(-0.4, 0.0, 0.4, 256, 129)
    h = solve_forward_h(dev, lam)
    rho = -solve_adjoint(h, lam, -1.0, dev).values
    phi = np.zeros_like(dev.values)
    phi[0] = np.exp(-dev.x**2)
    eps = 1e-3
    hp = solve_forward_h(dev.like(dev.values + eps * phi), lam).at_origin()
    hm = solve_forward_h(dev.like(dev.values - eps * phi), lam).at_origin()
    adj = float(np.sum(rho * phi) * dev.dt * dev.dx)
    assert adj == pytest.approx((hp - hm) / (2 * eps), rel=0.05)


def test_adjoint_is_the_gradient():
    """d h(2,0) / d dev . phi  ==  <rho, phi>  with rho the adjoint for mu = -1 (up to sign)."""
    lam = 4.0
    dev = bump_potential(-0.4, 0.0, 0.4, 64, 129)
    h = solve_forward_h(dev, lam)
    rho = -solve_adjoint(h, lam, -1.0, dev).values
    phi = bump_potential(1.0, 0.3, 0.5, 64, 129).values
    eps = 1e-4
    hp = solve_forward_h(dev.like(dev.values + eps * phi), lam).at_origin()
    hm = solve_forward_h(dev.like(dev.values - eps * phi), lam).at_origin()
    fd = (hp - hm) / (2 * eps)
    adj = float(np.sum(rho * phi) * dev.dt * dev.dx)
    assert adj == pytest.approx(fd, rel=0.1)


def test_duhamel_free_potential():
    res = duhamel_partial_sum(Potential.zeros(32, 65), 1.0, 0.3, n_max=3, mc_samples=100)
    assert res.value == pytest.approx(float(heat_kernel(1.0, 1.0, 0.3)), rel=1e-14)
    assert res.tail_bound == 0.0 and not res.diverged


def test_duhamel_first_order_within_bound():
    dev = bump_potential(-0.5, 0.0, 0.3, 128, 257)
    res = duhamel_partial_sum(dev, 1.0, 0.0, n_max=1, mc_samples=40000, seed=1)
    p = float(heat_kernel(1.0, 1.0, 0.0))
    first_bound, _ = duhamel_tail_bound(dev.norm(1.0), 1.0, 1.0, 0, p, n_terms=1)
    assert abs(res.terms[1]) <= first_bound + 3 * res.std_errors[1]


def test_duhamel_tail_overflow_flags_divergence():
    tail, diverged = duhamel_tail_bound(1e300, 2.0, 1.0, 3, 1.0)
    assert diverged and math.isinf(tail)


def test_duhamel_preconditions():
    dev = Potential.zeros(16, 17)
    with pytest.raises(ValidationError):
        duhamel_partial_sum(dev, 1.0, 0.0, n_max=5)
    with pytest.raises(ValidationError):
        duhamel_partial_sum(dev, 2.5, 0.0)
