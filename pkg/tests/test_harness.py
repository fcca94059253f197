import json
import math

import numpy as np
import pytest

from wnt.errors import ValidationError
from wnt.fields import Potential, sample_devlim
from wnt.harness import (
    HOLDER_EXPONENT,
    ConvergenceReport,
    HarnessOptions,
    convergence_table,
    holder_exponent_scan,
    region_grid,
    time_monotonicity_check,
    time_monotonicity_sequence,
)
from wnt.optimizer import MinimizerOptions
from wnt.pde_solver import solve_forward_h

SMALL = MinimizerOptions(nt=64, nx=64, tol=1e-3)


@pytest.fixture(scope="module")
def free8():
    return solve_forward_h(Potential.zeros(128, 257), 8.0)


def test_holder_exponent_verbatim():
    assert HOLDER_EXPONENT == pytest.approx(0.1538, abs=1e-4)


def test_region_grid():
    ts, xs = region_grid(0.5, 4.0)
    assert (ts[0], ts[-1], xs[0], xs[-1]) == (0.5, 2.0, -2.0, 2.0) and ts.size == xs.size == 64
    ts, xs = region_grid(0.1, 4.0, 8, 8)
    assert xs[-1] == 4.0  # clipped to the PDE box
    with pytest.raises(ValidationError):
        region_grid(0.7, 4.0)


def test_holder_scan_free_field_is_finite_and_bounded(free8):
    val = holder_exponent_scan(free8, 0.05, [0.5, 1.0, 1.5, 2.0])
    beta = HOLDER_EXPONENT - 0.05
    # Lipschitz constant of -x^2/(2t) on |x| <= 4, t >= 0.5, times sep^(1 - beta)
    assert 0 < val <= (4 / 0.5) * 0.5 ** (1 - beta) + 1e-9
    with pytest.raises(ValidationError):
        holder_exponent_scan(free8, 0.05, [0.01])


def test_holder_scan_stable_under_grid_doubling(profile):
    vals = []
    for n in (128, 256):
        f = solve_forward_h(sample_devlim(profile, n, n), 8.0)
        vals.append(holder_exponent_scan(f, 0.05, [0.5, 1.0, 1.5, 2.0]))
    assert math.isfinite(vals[0]) and vals[1] == pytest.approx(vals[0], rel=0.2)


def test_time_check_free_field_at_origin(free8):
    lam = 8.0
    ts = free8.t
    h0 = free8.values[:, np.argmin(np.abs(free8.x))]
    i, j = np.searchsorted(ts, 0.6), np.searchsorted(ts, 0.65)
    assert h0[i] - h0[j] == pytest.approx(math.log(ts[j] / ts[i]) / (2 * lam), abs=1e-12)
    assert h0[i] - h0[j] > 0


def test_time_check_sequence_increases(free8):
    seq = time_monotonicity_sequence(free8, 0.5, (0.2, 0.1, 0.05))
    assert all(b >= a - 0.02 for a, b in zip(seq, seq[1:]))
    assert seq[-1] <= 0.0
    assert time_monotonicity_check(free8, 0.5, 0.1) == seq[1]


def test_convergence_table_small_and_deterministic(profile):
    kw = dict(minimizer_options=SMALL, options=HarnessOptions(region_nt=16, region_nx=16), profile=profile)
    a = convergence_table([2.0, 4.0], delta=0.5, seed=3, **kw)
    b = convergence_table([2.0, 4.0], delta=0.5, seed=3, **kw)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert set(["lambdas", "region", "rows", "config_echo"]) <= set(d)
    for r in d["rows"]:
        assert {"lambda", "sup_error", "signed_min", "holder_max", "time_min", "runtime_s"} <= set(r)
        assert r["sup_error"] >= -r["signed_min"] or r["signed_min"] > 0
        assert r["runtime_s"] is None
    assert d["checks"]["hlim_origin"] == pytest.approx(-1.0, abs=1e-3)
    assert ConvergenceReport.from_json(a.to_json()).to_json() == a.to_json()
    with pytest.raises(ValidationError):
        convergence_table([4.0, 2.0], **kw)


def test_failed_lambda_marks_report_incomplete(profile):
    opts = MinimizerOptions(nt=32, nx=64, max_iter=1, tol=1e-12)
    rep = convergence_table([2.0], minimizer_options=opts, options=HarnessOptions(region_nt=8, region_nx=8),
                            profile=profile)
    assert not rep.complete and rep.rows[0]["status"] == "failed"
    assert "NonConvergenceError" in rep.rows[0]["error"]


@pytest.fixture(scope="module")
def criterion7(profile):
    return convergence_table([2.0, 4.0, 8.0], delta=0.5, seed=0, profile=profile,
                             options=HarnessOptions(record_timing=True))


@pytest.mark.slow
def test_criterion7_sup_error_decreases(criterion7):
    rep = criterion7
    assert rep.complete
    sup = rep.sup_error
    assert all(b < a for a, b in zip(sup, sup[1:])), sup
    assert sum(rep.runtime.values()) < 20 * 60


@pytest.mark.slow
@pytest.mark.xfail(reason="finite-lambda deficit: measured signed_min(8) = -0.21 on 256^2; "
                          "Corollary c.main.lwbd is a liminf statement; see README deviation ledger",
                   strict=False)
def test_criterion7_lower_bound_slack(criterion7):
    assert criterion7.signed_min[-1] >= -0.05
